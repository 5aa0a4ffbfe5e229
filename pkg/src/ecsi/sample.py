"""SDE sampling in pseudo-time and autoregressive physical-time rollout.

One physical step solves

    dx = b(x, history, tau) dtau + gamma_tau dW,   x(0) = current state

from tau = 0 to 1 on a uniform grid with the Heun scheme (predictor step,
then trapezoidal drift average, reusing the same noise increment; the noise
is additive).  Optionally the terminal state is projected divergence-free in
physical units before it becomes the next state and conditioning input.

Rollouts repeat this autoregressively; realizations use independent noise
substreams derived from the configured seed, so they are reproducible and
independent of how many run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import fields
from .fields import ChannelStats, Grid, VelocityField


@dataclass(frozen=True)
class SdeConfig:
    n_pseudo_steps: int = 25
    seed: int = 0
    project: bool = True

    def __post_init__(self):
        if self.n_pseudo_steps < 1:
            raise ValueError("need at least one pseudo-time step")


@dataclass
class RolloutEnsemble:
    """Generated realizations aligned to a reference trajectory (physical units)."""

    grid: Grid
    realizations: np.ndarray        # (n_real, n_steps, C, n, n)
    reference: np.ndarray | None    # (n_steps, C, n, n)
    dt: float
    init_history: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_realizations(self) -> int:
        return self.realizations.shape[0]

    @property
    def n_steps(self) -> int:
        return self.realizations.shape[1]


def heun_step(drift: Callable, x: np.ndarray, tau: float, dtau: float,
              gamma: Callable[[float], float], noise: np.ndarray) -> np.ndarray:
    """One Heun step: predictor, then trapezoidal drift with the same noise."""
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    g = gamma(tau)
    dw = np.sqrt(dtau) * noise
    b0 = drift(x, tau)
    x_pred = x + b0 * dtau + g * dw
    b1 = drift(x_pred, tau + dtau)
    x_new = x + 0.5 * (b0 + b1) * dtau + g * dw
    if not np.all(np.isfinite(x_new)):
        raise FloatingPointError(f"non-finite state after Heun step at tau={tau:g}")
    return x_new


def _draw_noise(rng, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normals; `rng` may be one generator or one per batch row."""
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal(shape)
    return np.stack([g.standard_normal(shape[1:]) for g in rng])


def sde_solve(net, coeffs, history: np.ndarray, n_pseudo_steps: int, rng) -> np.ndarray:
    """Integrate the learned SDE from the current (standardized) state to tau=1.

    `history` holds the l+1 conditioning states, most recent last; it may
    carry a leading batch axis for lock-step sampling of several realizations
    (pass one RNG per realization to keep their noise streams independent).
    """
    single = history.ndim == 4
    hist = history[None] if single else history
    x = hist[:, -1].copy()
    dtau = 1.0 / n_pseudo_steps
    bsz = hist.shape[0]
    tau_col = np.empty(bsz)

    def drift(state, tau):
        tau_col.fill(tau)
        return net.forward(state, hist, tau_col)

    def gamma(tau):
        return coeffs.at(min(tau, 1.0)).gamma

    for j in range(n_pseudo_steps):
        z = _draw_noise(rng, x.shape)
        try:
            x = heun_step(drift, x, j * dtau, dtau, gamma, z)
        except FloatingPointError as exc:
            raise FloatingPointError(f"{exc} (pseudo-step {j})") from exc
    return x[0] if single else x


def generate_step(net, coeffs, history: np.ndarray, cfg: SdeConfig,
                  stats: ChannelStats, grid: Grid,
                  rng: np.random.Generator) -> np.ndarray:
    """One physical step: solve the SDE, optionally project, destandardize.

    Returns the next state in physical units, shaped like one state (or a
    batch of states when `history` is batched).
    """
    x = sde_solve(net, coeffs, history, cfg.n_pseudo_steps, rng)
    phys = fields.destandardize_array(x, stats)
    if cfg.project:
        if phys.ndim == 3:
            phys = fields.project(VelocityField.from_array(grid, phys)).as_array()
        else:
            phys = np.stack([
                fields.project(VelocityField.from_array(grid, p)).as_array() for p in phys
            ])
    return phys


def rollout(net, coeffs, init_history: np.ndarray, n_steps: int, n_realizations: int,
            cfg: SdeConfig, stats: ChannelStats, grid: Grid,
            reference: np.ndarray | None = None, dt: float = 1.0) -> RolloutEnsemble:
    """Autoregressive ensemble generation from one initial history.

    `init_history` is the l+1 initial states in physical units.  Realizations
    advance in lock step (batched network evaluations) but draw noise from
    per-realization substreams, so each realization is reproducible on its
    own.
    """
    c = init_history.shape[1]
    hist0 = fields.standardize_array(init_history, stats)
    hist = np.broadcast_to(hist0, (n_realizations,) + hist0.shape).copy()
    rngs = [np.random.Generator(np.random.PCG64(s))
            for s in np.random.SeedSequence(cfg.seed).spawn(n_realizations)]
    out = np.empty((n_realizations, n_steps, c, grid.n, grid.n))
    for s in range(n_steps):
        nxt = generate_step(net, coeffs, hist, cfg, stats, grid, rngs)
        out[:, s] = nxt
        hist = np.concatenate(
            [hist[:, 1:], fields.standardize_array(nxt, stats)[:, None]], axis=1
        )
    return RolloutEnsemble(
        grid=grid, realizations=out, reference=reference, dt=dt,
        init_history=init_history.copy(),
        meta={"project": cfg.project, "n_pseudo_steps": cfg.n_pseudo_steps, "seed": cfg.seed},
    )
