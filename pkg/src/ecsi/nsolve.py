"""Incompressible Navier-Stokes solver with sinusoidally forced turbulence.

Semi-discrete form on the staggered grid:

    dq/dt = -div(q (x) q) + (1/Re) lap(q) + f(q),      div q = 0

with the body force f(q) = sin(4 y) e_x - 0.1 q (energy injection plus linear
drag, driving the flow to a statistically stationary state).  Convection is
discretized in divergence form with midpoint-interpolated face fluxes, which
is skew-symmetric on discretely divergence-free fields, so the inviscid
unforced system conserves kinetic energy in space.  Pressure never appears
explicitly: each Runge-Kutta stage velocity is projected onto the
divergence-free space.

Time integration is explicit RK4; the step size must satisfy the advective
CFL condition dt <= 0.5 h / max|q|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import (
    ConfigError,
    Grid,
    TrajectoryDataset,
    VelocityField,
    face_average,
    project,
)


class CflError(RuntimeError):
    """Raised when the advective stability limit is violated."""


@dataclass(frozen=True)
class NsConfig:
    grid: Grid
    re: float = 1.0e3
    dt: float = 2.0e-3
    forcing_on: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.re <= 0:
            raise ConfigError(f"Reynolds number must be positive, got {self.re}")
        if self.dt <= 0:
            raise ConfigError(f"time step must be positive, got {self.dt}")


@dataclass(frozen=True)
class DataGenConfig:
    burn_in: float = 25.0
    stride: int = 25
    n_train_traj: int = 3
    n_test_traj: int = 1
    n_train_steps: int = 250
    n_test_steps: int = 750
    coarsen_factor: int = 8

    def __post_init__(self):
        if self.burn_in < 0:
            raise ConfigError("burn-in time must be >= 0")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")


def rhs(q: VelocityField, cfg: NsConfig) -> VelocityField:
    """Convection + diffusion + forcing; pressure is handled by projection."""
    h = q.grid.h
    u, v = q.u, q.v

    # u u at cell centers, u v / v u at cell corners (midpoint interpolation)
    uc = 0.5 * (u + np.roll(u, 1, axis=0))
    uu = uc * uc
    vc = 0.5 * (v + np.roll(v, 1, axis=1))
    vv = vc * vc
    u_cor = 0.5 * (u + np.roll(u, -1, axis=1))
    v_cor = 0.5 * (v + np.roll(v, -1, axis=0))
    uv = u_cor * v_cor

    conv_u = (np.roll(uu, -1, axis=0) - uu) / h + (uv - np.roll(uv, 1, axis=1)) / h
    conv_v = (uv - np.roll(uv, 1, axis=0)) / h + (np.roll(vv, -1, axis=1) - vv) / h

    def lap(a):
        return (
            np.roll(a, -1, axis=0)
            + np.roll(a, 1, axis=0)
            + np.roll(a, -1, axis=1)
            + np.roll(a, 1, axis=1)
            - 4.0 * a
        ) / h**2

    ru = -conv_u + lap(u) / cfg.re
    rv = -conv_v + lap(v) / cfg.re
    if cfg.forcing_on:
        ru = ru + np.sin(4.0 * q.grid.y_u()) - 0.1 * u
        rv = rv - 0.1 * v
    return VelocityField(q.grid, ru, rv)


def max_velocity(q: VelocityField) -> float:
    return float(max(np.abs(q.u).max(), np.abs(q.v).max()))


def step(q: VelocityField, cfg: NsConfig) -> VelocityField:
    """One RK4 step with every stage velocity projected divergence-free."""
    vmax = max_velocity(q)
    if vmax > 0 and cfg.dt > 0.5 * q.grid.h / vmax:
        raise CflError(
            f"dt={cfg.dt:g} exceeds CFL limit {0.5 * q.grid.h / vmax:g} "
            f"(max |q| = {vmax:g})"
        )
    grid, dt = q.grid, cfg.dt

    def add(a: VelocityField, s: float, b: VelocityField) -> VelocityField:
        return VelocityField(grid, a.u + s * b.u, a.v + s * b.v)

    k1 = rhs(q, cfg)
    q2 = project(add(q, dt / 2, k1))
    k2 = rhs(q2, cfg)
    q3 = project(add(q, dt / 2, k2))
    k3 = rhs(q3, cfg)
    q4 = project(add(q, dt, k3))
    k4 = rhs(q4, cfg)
    acc = VelocityField(
        grid,
        q.u + dt / 6 * (k1.u + 2 * k2.u + 2 * k3.u + k4.u),
        q.v + dt / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v),
    )
    return project(acc)


def random_solenoidal_field(grid: Grid, rng: np.random.Generator, k0: float = 4.0) -> VelocityField:
    """Band-limited isotropic noise, projected divergence-free, rms velocity 1.

    Mode amplitudes follow k^2 exp(-k^2 / (2 k0^2)), i.e. spectral energy
    density proportional to k^4 exp(-k^2 / k0^2).
    """
    n = grid.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    kk = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    amp = kk**2 * np.exp(-(kk**2) / (2.0 * k0**2))

    def shaped_noise():
        white = rng.standard_normal((n, n))
        return np.fft.ifft2(np.fft.fft2(white) * amp).real

    q = project(VelocityField(grid, shaped_noise(), shaped_noise()))
    rms = np.sqrt(np.mean(q.u**2 + q.v**2))
    scale = 1.0 / rms if rms > 0 else 1.0
    return VelocityField(grid, q.u * scale, q.v * scale)


def _trajectory_rng(seed: int, split: str, index: int) -> np.random.Generator:
    split_key = {"train": 0, "test": 1}[split]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, split_key, index])))


def generate_dataset(ns: NsConfig, gen: DataGenConfig, split: str = "train") -> TrajectoryDataset:
    """Integrate trajectories, discard burn-in, save every stride-th coarse state.

    Each trajectory starts from independently seeded band-limited noise
    (substream seed + trajectory index, so generation is reproducible and
    trajectories could run concurrently).  Saved states are face-averaged by
    `coarsen_factor`; the dataset step is dt * stride.
    """
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    n_traj = gen.n_train_traj if split == "train" else gen.n_test_traj
    n_steps = gen.n_train_steps if split == "train" else gen.n_test_steps
    if ns.grid.n % gen.coarsen_factor:
        raise ConfigError(
            f"coarsen_factor {gen.coarsen_factor} does not divide n={ns.grid.n}"
        )
    n_burn = int(round(gen.burn_in / ns.dt))
    nc = ns.grid.n // gen.coarsen_factor
    states = np.empty((n_traj, n_steps, 2, nc, nc))
    for t in range(n_traj):
        rng = _trajectory_rng(ns.seed, split, t)
        q = random_solenoidal_field(ns.grid, rng)
        for _ in range(n_burn):
            q = step(q, ns)
        for s in range(n_steps):
            if s > 0:
                for _ in range(gen.stride):
                    q = step(q, ns)
            states[t, s] = face_average(q, gen.coarsen_factor).as_array()
    return TrajectoryDataset(
        grid=Grid(nc),
        states=states,
        dt=ns.dt * gen.stride,
        meta={"re": ns.re, "seed": ns.seed, "split": split, "fine_n": ns.grid.n},
    )
