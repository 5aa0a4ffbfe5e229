"""Pipeline command-line interface.

Subcommands cover the full workflow:

    dns                   generate filtered train/test trajectory files
    optimize-interpolant  fit interpolant coefficients on a train dataset
    train                 train the drift network (resumable)
    sample                autoregressive ensemble generation on test data
    evaluate              metric report of an ensemble against its reference

Configuration is one JSON file with per-stage sections; unknown keys are
rejected.  All randomness is derived from the single top-level seed through
named substreams, so every command is reproducible (and byte-identical on
repeated runs).  Exit codes: 0 success, 2 configuration error, 1 runtime
error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .drift import DriftNet, DriftNetArch
from .fields import ConfigError, Grid, standardize
from .interpolant import (
    InterpolantCoeffs,
    NewtonOpts,
    PairBatch,
    QuadraticCoeffs,
    optimize_coeffs,
)
from .metrics import evaluate
from .nsolve import DataGenConfig, NsConfig, generate_dataset
from .sample import RolloutEnsemble, SdeConfig, rollout
from .train import TrainConfig, run_training

DEFAULT_CONFIG: dict = {
    "seed": 0,
    "dns": {"n": 256, "re": 1000.0, "dt": 2.0e-3, "forcing_on": True},
    "datagen": {
        "burn_in": 25.0,
        "stride": 25,
        "n_train_traj": 3,
        "n_test_traj": 1,
        "n_train_steps": 250,
        "n_test_steps": 750,
        "coarsen_factor": 8,
    },
    "interpolant": {
        "n_terms": 5,
        "gamma_scale": 0.1,
        "w_energy": 1.0,
        "w_transport": 1.0,
        "n_tau": 64,
        "max_pairs": 512,
        "quadratic_baseline": False,
    },
    "drift": {"channels": 32, "depth": 4, "kernel": 3, "emb_dim": 32, "history": 1},
    "train": {
        "epochs": 100,
        "batch_size": 16,
        "lr_max": 3.0e-4,
        "warmup_steps": 100,
        "weight_decay": 1.0e-5,
        "early_stop_patience": 10,
        "val_rollout_steps": 5,
        "val_pseudo_steps": 10,
    },
    "sde": {"n_pseudo_steps": 25, "project": True, "n_realizations": 5},
    "metrics": {"spectra_steps": None},
}

_SUBSTREAMS = {"dns": 0, "train": 1, "sample": 2}


def substream_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([seed, _SUBSTREAMS[name]]).generate_state(1)[0])


def _merge(defaults: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and isinstance(val, dict):
            out[key] = _merge(defaults[key], val, path + key + ".")
        else:
            out[key] = val
    return out


def load_config(path: str | None, seed_override: int | None = None) -> dict:
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(user, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed_override is not None:
        cfg["seed"] = seed_override
    return cfg


def _write_effective_config(cfg: dict, out: Path):
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio._atomic_write(out, (json.dumps(cfg, indent=2) + "\n").encode())


def _write_text(path: Path, text: str):
    dataio._atomic_write(path, text.encode())


# -- commands ----------------------------------------------------------------


def cmd_dns(cfg: dict, out_prefix: str) -> tuple[Path, Path]:
    d = cfg["dns"]
    ns = NsConfig(grid=Grid(d["n"]), re=d["re"], dt=d["dt"],
                  forcing_on=d["forcing_on"], seed=substream_seed(cfg["seed"], "dns"))
    gen = DataGenConfig(**cfg["datagen"])
    paths = []
    for split in ("train", "test"):
        ds = generate_dataset(ns, gen, split)
        ds.meta["provenance"] = {"command": "dns", "config_seed": cfg["seed"]}
        path = Path(f"{out_prefix}_{split}.ecsi")
        dataio.write_dataset(path, ds)
        paths.append(path)
        print(f"wrote {path} ({ds.n_traj} trajectories x {ds.n_steps} steps, n={ds.grid.n})")
    _write_effective_config(cfg, Path(f"{out_prefix}_config.json"))
    return paths[0], paths[1]


def cmd_optimize_interpolant(cfg: dict, dataset_path: str, out_path: str) -> Path:
    ds = dataio.read_dataset(dataset_path)
    if ds.states.shape[1] < 2:
        raise ConfigError("dataset has no consecutive state pairs to optimize on")
    ic = cfg["interpolant"]
    dss, _ = standardize(ds)
    batch = PairBatch.from_dataset(
        dss, max_pairs=ic["max_pairs"],
        rng=np.random.default_rng(substream_seed(cfg["seed"], "train")),
    )
    init = InterpolantCoeffs.default(ic["n_terms"], ic["gamma_scale"])
    res = optimize_coeffs(init, batch, (ic["w_energy"], ic["w_transport"]),
                          NewtonOpts(n_tau=ic["n_tau"]))
    payload = {
        **res.coeffs.to_dict(),
        "optimizer": {
            "loss": res.loss,
            "grad_norm": res.grad_norm,
            "iterations": res.iterations,
            "converged": res.converged,
            "warning": res.warning,
        },
    }
    out = Path(out_path)
    _write_text(out, json.dumps(payload, indent=2) + "\n")
    print(f"wrote {out} (loss {res.loss:.6g}, {res.iterations} iterations)")
    return out


def load_coeffs(path: str | None, cfg: dict):
    """Coefficient schedule from JSON, or the configured fallback schedule."""
    ic = cfg["interpolant"]
    if path is None:
        if ic["quadratic_baseline"]:
            return QuadraticCoeffs(ic["gamma_scale"])
        return InterpolantCoeffs.default(ic["n_terms"], ic["gamma_scale"])
    return InterpolantCoeffs.from_dict(json.loads(Path(path).read_text()))


def cmd_train(cfg: dict, dataset_path: str, coeffs_path: str | None, out_path: str,
              resume: str | None = None, stop_after: int | None = None) -> Path:
    ds = dataio.read_dataset(dataset_path)
    coeffs = load_coeffs(coeffs_path, cfg)
    dss, stats = standardize(ds)
    dc = cfg["drift"]
    arch = DriftNetArch(channels=dc["channels"], depth=dc["depth"], kernel=dc["kernel"],
                        emb_dim=dc["emb_dim"], history=dc["history"],
                        state_channels=ds.states.shape[2])
    tcfg = TrainConfig(seed=substream_seed(cfg["seed"], "train"), **cfg["train"])
    net = DriftNet.init(arch, ds.grid.n, seed=tcfg.seed)
    state = dataio.read_train_state(resume) if resume else None
    best, report, final = run_training(dss, coeffs, net, tcfg, resume=state,
                                       stop_after=stop_after)
    out = Path(out_path)
    dataio.write_checkpoint(out, best, stats=stats, extra={
        "dt": ds.dt, "best_epoch": report.best_epoch, "best_val": report.best_val,
        "coeffs": coeffs.to_dict() if isinstance(coeffs, InterpolantCoeffs)
        else {"quadratic": True, "gamma_scale": coeffs.gamma_scale},
    })
    dataio.write_train_state(out.with_suffix(out.suffix + ".state"), final)
    _write_text(out.with_suffix(out.suffix + ".report.csv"), report.to_csv())
    print(f"wrote {out} (best epoch {report.best_epoch}, val {report.best_val:.6g})")
    return out


def cmd_sample(cfg: dict, checkpoint_path: str, coeffs_path: str | None,
               dataset_path: str, out_path: str) -> Path:
    net, stats, extra = dataio.read_checkpoint(checkpoint_path)
    if stats is None:
        raise ConfigError("checkpoint carries no standardization stats")
    coeffs = load_coeffs(coeffs_path, cfg)
    ds = dataio.read_dataset(dataset_path)
    if ds.grid.n != net.n:
        raise ConfigError(f"checkpoint grid n={net.n} does not match dataset n={ds.grid.n}")
    sc = cfg["sde"]
    l = net.arch.history
    start = l + 1
    n_steps = ds.n_steps - start
    if n_steps < 1:
        raise ConfigError("test trajectories are too short for the configured history")
    seed0 = substream_seed(cfg["seed"], "sample")
    ensembles = np.empty(
        (ds.n_traj, sc["n_realizations"], n_steps, ds.n_channels, ds.grid.n, ds.grid.n),
        dtype=np.float64,
    )
    for t in range(ds.n_traj):
        sde = SdeConfig(n_pseudo_steps=sc["n_pseudo_steps"],
                        seed=int(np.random.SeedSequence([seed0, t]).generate_state(1)[0]),
                        project=sc["project"])
        ens = rollout(net, coeffs, ds.states[t, :start], n_steps, sc["n_realizations"],
                      sde, stats, ds.grid, reference=ds.states[t, start:], dt=ds.dt)
        ensembles[t] = ens.realizations
        print(f"trajectory {t}: {sc['n_realizations']} realizations x {n_steps} steps")
    out = Path(out_path)
    dataio.write_ensembles(out, ensembles, {
        "dt": ds.dt, "start": start, "project": sc["project"],
        "n_pseudo_steps": sc["n_pseudo_steps"], "seed": cfg["seed"],
        "reference": str(dataset_path),
    })
    print(f"wrote {out}")
    return out


def cmd_evaluate(cfg: dict, ensemble_path: str, reference_path: str, out_prefix: str) -> Path:
    arr, meta = dataio.read_ensembles(ensemble_path)
    ref = dataio.read_dataset(reference_path)
    start = int(meta.get("start", 0))
    n_traj, n_real, n_steps = arr.shape[:3]
    if n_traj != ref.n_traj:
        raise ConfigError(
            f"ensemble has {n_traj} trajectories but reference has {ref.n_traj}"
        )
    if start + n_steps > ref.n_steps:
        raise ConfigError("reference trajectories are shorter than the ensemble")
    reports = []
    for t in range(n_traj):
        ens = RolloutEnsemble(
            grid=ref.grid, realizations=arr[t].astype(float),
            reference=ref.states[t, start:start + n_steps], dt=float(meta.get("dt", ref.dt)),
        )
        reports.append(evaluate(ens, spectra_steps=cfg["metrics"]["spectra_steps"]))
    summary = {
        key: float(np.mean([r.summary()[key] for r in reports]))
        for key in reports[0].summary()
    }
    lines = ["metric,value"] + [f"{k},{v:.10g}" for k, v in summary.items()]
    out_csv = Path(f"{out_prefix}.csv")
    _write_text(out_csv, "\n".join(lines) + "\n")
    payload = {"summary": summary,
               "trajectories": [r.to_json_dict() for r in reports]}
    _write_text(Path(f"{out_prefix}.json"), json.dumps(payload) + "\n")
    for k, v in summary.items():
        print(f"{k}: {v:.6g}")
    print(f"wrote {out_csv}")
    return out_csv


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecsi", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", required=True, help="output path (or prefix)")

    p = sub.add_parser("dns", help="generate filtered train/test datasets")
    common(p)

    p = sub.add_parser("optimize-interpolant", help="fit interpolant coefficients")
    common(p)
    p.add_argument("--dataset", required=True)

    p = sub.add_parser("train", help="train the drift network")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--coeffs", default=None, help="coefficient JSON (default schedule if omitted)")
    p.add_argument("--resume", default=None, help="training state file to continue from")
    p.add_argument("--stop-after", type=int, default=None,
                   help="interrupt after this epoch index (for later resume)")

    p = sub.add_parser("sample", help="generate rollout ensembles")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--coeffs", default=None)
    p.add_argument("--dataset", required=True, help="test dataset providing initial histories")

    p = sub.add_parser("evaluate", help="compute metrics against a reference")
    common(p)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--reference", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        if args.command == "dns":
            cmd_dns(cfg, args.out)
        elif args.command == "optimize-interpolant":
            cmd_optimize_interpolant(cfg, args.dataset, args.out)
        elif args.command == "train":
            cmd_train(cfg, args.dataset, args.coeffs, args.out,
                      resume=args.resume, stop_after=args.stop_after)
        elif args.command == "sample":
            cmd_sample(cfg, args.checkpoint, args.coeffs, args.dataset, args.out)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.ensemble, args.reference, args.out)
    except (ConfigError, dataio.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
