"""Drift training loop with warmup/cosine schedule and rollout early stopping.

Each update samples a mini-batch of (history, x0, x1) pairs, one pseudo-time
tau ~ U[0, 1] and one normal draw z per pair, builds the interpolated state
and its drift target with the same z, and takes an AdamW step on the mean
squared drift-matching error.  After every epoch the model is scored by an
autoregressive SDE rollout against a held-out trajectory; the checkpoint
with the best rollout error wins and training stops after
`early_stop_patience` epochs without improvement.

Training is resumable: `run_training` consumes and returns a `TrainState`
holding the parameters, optimizer moments, RNG state, and report rows, and a
resumed run continues exactly where the interrupted one stopped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftNet
from .fields import TrajectoryDataset
from .interpolant import _bcast
from .sample import sde_solve


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr_max: float = 3e-4
    warmup_steps: int = 100
    weight_decay: float = 1e-5
    seed: int = 0
    early_stop_patience: int = 10
    val_rollout_steps: int = 5
    val_pseudo_steps: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.early_stop_patience,
               self.val_rollout_steps, self.val_pseudo_steps) < 1:
            raise ValueError("counts in the training config must be positive")
        if self.lr_max <= 0:
            raise ValueError("lr_max must be positive")


def lr_schedule(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Linear warmup to lr_max, then cosine decay to zero at the final step."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if step <= cfg.warmup_steps and cfg.warmup_steps > 0:
        return cfg.lr_max * step / cfg.warmup_steps
    span = max(total_steps - cfg.warmup_steps, 1)
    progress = min((step - cfg.warmup_steps) / span, 1.0)
    return cfg.lr_max * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam moments with decoupled weight decay on a flat parameter vector."""

    def __init__(self, n_params: int, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        out = params - lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if self.weight_decay:
            out = out - lr * self.weight_decay * params
        return out


@dataclass
class TrainingReport:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_rollout_mse: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    stopped_early: bool = False

    def append(self, epoch: int, loss: float, val: float, lr: float):
        self.epochs.append(epoch)
        self.train_loss.append(loss)
        self.val_rollout_mse.append(val)
        self.lr.append(lr)

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_rollout_mse,lr"]
        for e, tl, vl, lr in zip(self.epochs, self.train_loss, self.val_rollout_mse, self.lr):
            lines.append(f"{e},{tl:.10g},{vl:.10g},{lr:.10g}")
        return "\n".join(lines) + "\n"


@dataclass
class TrainState:
    """Everything needed to continue an interrupted run exactly."""

    params: np.ndarray
    opt_m: np.ndarray
    opt_v: np.ndarray
    opt_t: int
    epoch: int  # next epoch to run
    gstep: int
    best_params: np.ndarray
    best_val: float
    best_epoch: int
    since_best: int
    rng_state: dict
    report_rows: list


def _split_validation(states: np.ndarray, l: int, val_steps: int):
    """Hold out the last trajectory, or the tail of a single trajectory."""
    if states.shape[0] >= 2:
        return states[:-1], states[-1]
    need = l + 1 + val_steps
    if states.shape[1] < need + l + 2:
        raise ValueError(
            f"single trajectory too short to split a validation tail of {need} states"
        )
    return states[:, :-need], states[0, -need:]


def _pair_index(n_traj: int, n_steps: int, l: int) -> np.ndarray:
    """(trajectory, time) indices t with full history t-l..t and target t+1."""
    idx = [(tr, t) for tr in range(n_traj) for t in range(l, n_steps - 1)]
    return np.asarray(idx, dtype=int)


def _gather_batch(states: np.ndarray, idx: np.ndarray, l: int):
    tr, t = idx[:, 0], idx[:, 1]
    hist = np.stack([states[tr, t - l + k] for k in range(l + 1)], axis=1)
    return hist, states[tr, t], states[tr, t + 1]


def validation_rollout_mse(net: DriftNet, coeffs, val_states: np.ndarray,
                           cfg: TrainConfig, seed: int) -> float:
    """Standardized-unit MSE of an autoregressive rollout along the val trajectory."""
    l = net.arch.history
    steps = min(cfg.val_rollout_steps, val_states.shape[0] - l - 1)
    hist = val_states[: l + 1].copy()
    rng = np.random.Generator(np.random.PCG64(seed))
    err, d = 0.0, val_states[0].size
    for s in range(steps):
        x = sde_solve(net, coeffs, hist, cfg.val_pseudo_steps, rng)
        truth = val_states[l + 1 + s]
        err += float(np.sum((x - truth) ** 2) / d)
        hist = np.concatenate([hist[1:], x[None]], axis=0)
    return err / steps


def run_training(dataset: TrajectoryDataset, coeffs, net: DriftNet, cfg: TrainConfig,
                 resume: TrainState | None = None, stop_after: int | None = None
                 ) -> tuple[DriftNet, TrainingReport, TrainState]:
    """Core loop; see `train` for the plain entry point.

    `stop_after` interrupts the run once that epoch index has finished (the
    schedule still spans cfg.epochs); resuming from the returned state with
    the same config continues exactly like an uninterrupted run.
    """
    if dataset.stats is None:
        raise ValueError("dataset must be standardized before training")
    l = net.arch.history
    train_states, val_states = _split_validation(dataset.states, l, cfg.val_rollout_steps)
    pairs = _pair_index(train_states.shape[0], train_states.shape[1], l)
    if pairs.shape[0] == 0:
        raise ValueError("dataset has no trainable state pairs")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 0])))
    val_seed = int(np.random.SeedSequence([cfg.seed, 1]).generate_state(1)[0])
    steps_per_epoch = math.ceil(pairs.shape[0] / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    opt = AdamW(net.n_params, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay)
    report = TrainingReport()

    if resume is None:
        state = TrainState(
            params=net.params.copy(), opt_m=opt.m, opt_v=opt.v, opt_t=0,
            epoch=0, gstep=0, best_params=net.params.copy(),
            best_val=math.inf, best_epoch=-1, since_best=0,
            rng_state=rng.bit_generator.state, report_rows=[],
        )
    else:
        state = resume
        rng.bit_generator.state = state.rng_state
        opt.m, opt.v, opt.t = state.opt_m.copy(), state.opt_v.copy(), state.opt_t
    params = state.params.copy()
    for row in state.report_rows:
        report.append(*row)
    report.best_val = state.best_val
    report.best_epoch = state.best_epoch
    best_params = state.best_params.copy()
    since_best = state.since_best
    gstep = state.gstep

    for epoch in range(state.epoch, cfg.epochs):
        order = rng.permutation(pairs.shape[0])
        epoch_loss = 0.0
        cur_lr = 0.0
        for b in range(steps_per_epoch):
            batch = pairs[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            hist, x0, x1 = _gather_batch(train_states, batch, l)
            tau = rng.uniform(0.0, 1.0, size=batch.shape[0])
            z = rng.standard_normal(x0.shape)
            ce = coeffs.at(tau)
            root_t = np.sqrt(tau)
            x_tau = (_bcast(ce.alpha, x0) * x0 + _bcast(ce.beta, x1) * x1
                     + _bcast(ce.gamma * root_t, x0) * z)
            target = (_bcast(ce.alpha_dot, x0) * x0 + _bcast(ce.beta_dot, x1) * x1
                      + _bcast(ce.gamma_dot * root_t, x0) * z)
            loss, grad = net.with_params(params).loss_and_grad(x_tau, hist, tau, target)
            gstep += 1
            cur_lr = lr_schedule(gstep, cfg, total_steps)
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss at step {gstep} (lr={cur_lr:g})"
                )
            params = opt.step(params, grad, cur_lr)
            epoch_loss += loss
        epoch_loss /= steps_per_epoch

        val = validation_rollout_mse(net.with_params(params), coeffs, val_states, cfg, val_seed)
        report.append(epoch, epoch_loss, val, cur_lr)
        if val < report.best_val:
            report.best_val = val
            report.best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.early_stop_patience:
                report.stopped_early = True
                break
        if stop_after is not None and epoch >= stop_after:
            break

    final = TrainState(
        params=params, opt_m=opt.m, opt_v=opt.v, opt_t=opt.t,
        epoch=report.epochs[-1] + 1 if report.epochs else 0, gstep=gstep,
        best_params=best_params, best_val=report.best_val,
        best_epoch=report.best_epoch, since_best=since_best,
        rng_state=rng.bit_generator.state,
        report_rows=[[e, t, v, r] for e, t, v, r in zip(
            report.epochs, report.train_loss, report.val_rollout_mse, report.lr)],
    )
    return net.with_params(best_params.copy()), report, final


def train(dataset: TrajectoryDataset, coeffs, net: DriftNet,
          cfg: TrainConfig) -> tuple[DriftNet, TrainingReport]:
    """Train the drift net on consecutive-state pairs of a standardized dataset."""
    best, report, _ = run_training(dataset, coeffs, net, cfg)
    return best, report
