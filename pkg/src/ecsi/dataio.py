"""Binary persistence for trajectory data, ensembles, and model checkpoints.

Dataset container (little-endian throughout):

    magic   "ECSI"
    u32     format version
    u32     nx, ny, n_channels, n_traj, n_steps, n_realizations
    u32     dtype tag (4 = float32, 8 = float64)
    payload row-major array (n_traj, n_realizations, n_steps, n_channels, nx, ny)
    footer  UTF-8 JSON metadata (dt, Reynolds number, standardization stats,
            seed, provenance, ...) occupying the rest of the file

Checkpoints use the same magic/version discipline with a JSON descriptor
(architecture, grid size, stats) followed by raw float64 parameter blobs.
All writers go through a temp file plus rename, so partial files are never
left behind.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .drift import DriftNet, DriftNetArch
from .fields import ChannelStats, Grid, TrajectoryDataset

DATASET_MAGIC = b"ECSI"
CHECKPOINT_MAGIC = b"ECSC"
STATE_MAGIC = b"ECST"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIII")
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class FormatError(RuntimeError):
    """File does not conform to the container format."""


def _atomic_write(path: str | Path, payload: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array(path: str | Path, arr: np.ndarray, meta: dict):
    """Write a (n_traj, n_real, n_steps, C, nx, ny) array with JSON metadata."""
    if arr.ndim != 6:
        raise ValueError(f"expected a 6-d array, got shape {arr.shape}")
    if arr.dtype == np.float32:
        tag = 4
    elif arr.dtype == np.float64:
        tag = 8
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    n_traj, n_real, n_steps, n_ch, nx, ny = arr.shape
    header = _HEADER.pack(DATASET_MAGIC, VERSION, nx, ny, n_ch, n_traj, n_steps, n_real, tag)
    body = np.ascontiguousarray(arr).astype(_DTYPES[tag], copy=False).tobytes()
    footer = json.dumps(meta).encode("utf-8")
    _atomic_write(path, header + body + footer)


def read_array(path: str | Path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, n_ch, n_traj, n_steps, n_real, tag = _HEADER.unpack_from(raw)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if tag not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype tag {tag}")
    shape = (n_traj, n_real, n_steps, n_ch, nx, ny)
    nbytes = int(np.prod(shape)) * tag
    end = _HEADER.size + nbytes
    if len(raw) < end:
        raise FormatError(f"{path}: payload shorter than header promises")
    arr = np.frombuffer(raw[_HEADER.size:end], dtype=_DTYPES[tag]).reshape(shape).copy()
    meta = json.loads(raw[end:].decode("utf-8")) if len(raw) > end else {}
    return arr, meta


def write_dataset(path: str | Path, ds: TrajectoryDataset):
    meta = {"dt": ds.dt, **ds.meta}
    if ds.stats is not None:
        meta["stats"] = ds.stats.to_dict()
    write_array(path, ds.states[:, None], meta)


def read_dataset(path: str | Path) -> TrajectoryDataset:
    arr, meta = read_array(path)
    if arr.shape[1] != 1:
        raise FormatError(f"{path}: expected a dataset (one realization), got {arr.shape[1]}")
    meta = dict(meta)
    dt = meta.pop("dt")
    stats = meta.pop("stats", None)
    return TrajectoryDataset(
        grid=Grid(arr.shape[-1]),
        states=arr[:, 0].astype(float),
        dt=float(dt),
        stats=ChannelStats.from_dict(stats) if stats else None,
        meta=meta,
    )


def write_ensembles(path: str | Path, realizations: np.ndarray, meta: dict):
    """Persist per-trajectory ensembles, shape (n_traj, n_real, n_steps, C, n, n)."""
    write_array(path, realizations, meta)


def read_ensembles(path: str | Path) -> tuple[np.ndarray, dict]:
    return read_array(path)


# -- checkpoints -------------------------------------------------------------


def _blob_container(magic: bytes, descriptor: dict, blobs: list[np.ndarray]) -> bytes:
    head = json.dumps(descriptor).encode("utf-8")
    out = [magic, struct.pack("<II", VERSION, len(head)), head]
    for b in blobs:
        raw = np.ascontiguousarray(b, dtype="<f8").tobytes()
        out.append(struct.pack("<Q", len(raw)))
        out.append(raw)
    return b"".join(out)


def _read_blob_container(path: str | Path, magic: bytes) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != magic:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 12
    descriptor = json.loads(raw[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    blobs = []
    while pos < len(raw):
        (blen,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        blobs.append(np.frombuffer(raw[pos:pos + blen], dtype="<f8").copy())
        pos += blen
    return descriptor, blobs


def write_checkpoint(path: str | Path, net: DriftNet, stats: ChannelStats | None = None,
                     extra: dict | None = None):
    desc = {
        "arch": {
            "channels": net.arch.channels,
            "depth": net.arch.depth,
            "kernel": net.arch.kernel,
            "emb_dim": net.arch.emb_dim,
            "history": net.arch.history,
            "state_channels": net.arch.state_channels,
        },
        "n": net.n,
        "n_params": net.n_params,
    }
    if stats is not None:
        desc["stats"] = stats.to_dict()
    if extra:
        desc["extra"] = extra
    _atomic_write(path, _blob_container(CHECKPOINT_MAGIC, desc, [net.params]))


def read_checkpoint(path: str | Path) -> tuple[DriftNet, ChannelStats | None, dict]:
    desc, blobs = _read_blob_container(path, CHECKPOINT_MAGIC)
    net = DriftNet(DriftNetArch(**desc["arch"]), desc["n"], blobs[0])
    if net.n_params != desc["n_params"]:
        raise FormatError(f"{path}: parameter count mismatch")
    stats = ChannelStats.from_dict(desc["stats"]) if "stats" in desc else None
    return net, stats, desc.get("extra", {})


def write_train_state(path: str | Path, state: "TrainState"):
    from .train import TrainState  # local import to avoid a cycle at module load

    desc = {
        "epoch": state.epoch,
        "gstep": state.gstep,
        "opt_t": state.opt_t,
        "best_val": state.best_val,
        "best_epoch": state.best_epoch,
        "since_best": state.since_best,
        "rng_state": state.rng_state,
        "report_rows": state.report_rows,
    }
    blobs = [state.params, state.opt_m, state.opt_v, state.best_params]
    _atomic_write(path, _blob_container(STATE_MAGIC, desc, blobs))


def read_train_state(path: str | Path):
    from .train import TrainState

    desc, blobs = _read_blob_container(path, STATE_MAGIC)
    return TrainState(
        params=blobs[0], opt_m=blobs[1], opt_v=blobs[2], best_params=blobs[3],
        epoch=desc["epoch"], gstep=desc["gstep"], opt_t=desc["opt_t"],
        best_val=desc["best_val"], best_epoch=desc["best_epoch"],
        since_best=desc["since_best"], rng_state=desc["rng_state"],
        report_rows=desc["report_rows"],
    )
