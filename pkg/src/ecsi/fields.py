"""Staggered velocity fields on a periodic square domain.

Grid layout (MAC staggering, cell width h = 2*pi/n, indices periodic):

    u[i, j]  x-velocity on the right face of cell (i, j), at ((i+1)h, (j+1/2)h)
    v[i, j]  y-velocity on the top  face of cell (i, j), at ((i+1/2)h, (j+1)h)
    cell-centered scalars at ((i+1/2)h, (j+1/2)h)

With this arrangement the discrete divergence of cell (i, j) is

    (u[i,j] - u[i-1,j] + v[i,j] - v[i,j-1]) / h

and the face-averaging coarsener commutes with it: coarse fluxes are sums of
the fine fluxes through the same face segment, so filtered divergence-free
fields stay divergence-free.

The projection onto divergence-free fields is Pi = I - M^T (M M^T)^+ M with
M the divergence operator above.  The Poisson solve uses the eigenvalues of
the 5-point Laplacian M M^T under the DFT (not the continuous symbol), which
makes Pi idempotent to rounding.  The nullspace (constant potentials) is
fixed by the zero-mean gauge.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * np.pi


class ConfigError(ValueError):
    """Invalid configuration (bad grid size, non-divisible factor, ...)."""


@dataclass(frozen=True)
class Grid:
    """Square periodic grid with n cells per side on [0, 2*pi]^2."""

    n: int

    def __post_init__(self):
        if self.n < 4:
            raise ConfigError(f"grid needs n >= 4, got n={self.n}")
        if self.n & (self.n - 1):
            raise ConfigError(f"grid size must be a power of two, got n={self.n}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    def y_u(self) -> np.ndarray:
        """y-coordinates of u-faces, shape (1, n) for broadcasting over i."""
        return ((np.arange(self.n) + 0.5) * self.h)[None, :]

    def x_v(self) -> np.ndarray:
        """x-coordinates of v-faces, shape (n, 1)."""
        return ((np.arange(self.n) + 0.5) * self.h)[:, None]


@dataclass(frozen=True)
class VelocityField:
    grid: Grid
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = self.grid.n
        if self.u.shape != (n, n) or self.v.shape != (n, n):
            raise ValueError(
                f"component shape mismatch: u{self.u.shape} v{self.v.shape} on n={n}"
            )
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("velocity field has non-finite entries")

    @classmethod
    def zeros(cls, grid: Grid) -> "VelocityField":
        n = grid.n
        return cls(grid, np.zeros((n, n)), np.zeros((n, n)))

    @classmethod
    def from_array(cls, grid: Grid, state: np.ndarray) -> "VelocityField":
        return cls(grid, np.ascontiguousarray(state[0]), np.ascontiguousarray(state[1]))

    def as_array(self) -> np.ndarray:
        """Stack components into a (2, n, n) state array."""
        return np.stack([self.u, self.v])


@dataclass(frozen=True)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.n, self.grid.n):
            raise ValueError("scalar shape mismatch")
        if not np.isfinite(self.values).all():
            raise ValueError("scalar field has non-finite entries")


def dot(a: VelocityField, b: VelocityField) -> float:
    """Unweighted l2 inner product over all face values."""
    return float(np.sum(a.u * b.u) + np.sum(a.v * b.v))


def divergence(q: VelocityField) -> ScalarField:
    """Discrete divergence at cell centers (net face flux / h)."""
    h = q.grid.h
    du = (q.u - np.roll(q.u, 1, axis=0)) / h
    dv = (q.v - np.roll(q.v, 1, axis=1)) / h
    return ScalarField(q.grid, du + dv)


def gradient(phi: ScalarField) -> VelocityField:
    """Transpose of the divergence stencil, mapping potentials to faces.

    Applied in the pressure correction q - grad(phi); note the sign: this is
    M^T, i.e. minus the forward difference.
    """
    h = phi.grid.h
    p = phi.values
    gu = (p - np.roll(p, -1, axis=0)) / h
    gv = (p - np.roll(p, -1, axis=1)) / h
    return VelocityField(phi.grid, gu, gv)


def laplacian_eigenvalues(grid: Grid) -> np.ndarray:
    """DFT eigenvalues of M M^T (the positive 5-point Laplacian), shape (n, n)."""
    n, h = grid.n, grid.h
    k = np.arange(n)
    s = 4.0 * np.sin(np.pi * k / n) ** 2 / h**2
    return s[:, None] + s[None, :]


def solve_poisson(rhs: ScalarField) -> ScalarField:
    """Solve (M M^T) phi = rhs spectrally with the zero-mean gauge."""
    lam = laplacian_eigenvalues(rhs.grid)
    rhat = np.fft.fft2(rhs.values)
    lam = lam.copy()
    lam[0, 0] = 1.0  # nullspace handled by gauge below
    phat = rhat / lam
    phat[0, 0] = 0.0
    return ScalarField(rhs.grid, np.fft.ifft2(phat).real)


def project(q: VelocityField) -> VelocityField:
    """Remove the gradient part of q so the result is divergence-free."""
    phi = solve_poisson(divergence(q))
    g = gradient(phi)
    return VelocityField(q.grid, q.u - g.u, q.v - g.v)


def kinetic_energy(q: VelocityField) -> float:
    """Total kinetic energy (sum u^2 + sum v^2) / (2 h^2)."""
    h = q.grid.h
    return float((np.sum(q.u**2) + np.sum(q.v**2)) / (2.0 * h**2))


def face_average(fine: VelocityField, factor: int) -> VelocityField:
    """Coarsen by averaging the fine face values lying on each coarse face.

    A coarse u-face segment consists of `factor` fine u-faces in the same
    column; their mean is the coarse value.  Coarse face fluxes are then sums
    of fine fluxes, so divergence-free fields stay divergence-free.
    """
    n = fine.grid.n
    if factor < 2:
        raise ConfigError(f"coarsening factor must be >= 2, got {factor}")
    if n % factor:
        raise ConfigError(f"factor {factor} does not divide grid size {n}")
    nc = n // factor
    coarse = Grid(nc)
    # coarse u-face (I, J): fine column i = (I+1)*factor - 1, rows J*factor ...
    u_cols = fine.u[factor - 1 :: factor, :]          # (nc, n)
    uc = u_cols.reshape(nc, nc, factor).mean(axis=2)  # (nc, nc)
    v_rows = fine.v[:, factor - 1 :: factor]          # (n, nc)
    vc = v_rows.reshape(nc, factor, nc).mean(axis=1)  # (nc, nc)
    return VelocityField(coarse, uc, vc)


# ---------------------------------------------------------------------------
# Trajectory data and per-channel standardization


@dataclass(frozen=True)
class ChannelStats:
    """Per-channel mean/std over all snapshots; std clamped to 1 when degenerate."""

    mean: np.ndarray
    std: np.ndarray
    clamped: np.ndarray

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "clamped": [bool(c) for c in self.clamped],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(
            np.asarray(d["mean"], dtype=float),
            np.asarray(d["std"], dtype=float),
            np.asarray(d["clamped"], dtype=bool),
        )


@dataclass
class TrajectoryDataset:
    """Ordered sequences of states, shape (n_traj, n_steps, channels, n, n).

    `dt` is the physical model step between consecutive states.  `stats` is
    set once the dataset has been standardized (and is needed to undo it).
    """

    grid: Grid
    states: np.ndarray
    dt: float
    stats: ChannelStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.states.ndim != 5:
            raise ValueError(f"states must be 5-d, got shape {self.states.shape}")
        n = self.grid.n
        if self.states.shape[-2:] != (n, n):
            raise ValueError("state shape does not match grid")

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1]

    @property
    def n_channels(self) -> int:
        return self.states.shape[2]


def compute_channel_stats(states: np.ndarray) -> ChannelStats:
    axes = tuple(i for i in range(states.ndim) if i != states.ndim - 3)
    mean = states.mean(axis=axes)
    std = states.std(axis=axes)
    clamped = std < 1e-13
    std = np.where(clamped, 1.0, std)
    return ChannelStats(mean, std, clamped)


def standardize_array(states: np.ndarray, stats: ChannelStats) -> np.ndarray:
    shape = (-1,) + (1,) * 2
    return (states - stats.mean.reshape(shape)) / stats.std.reshape(shape)


def destandardize_array(states: np.ndarray, stats: ChannelStats) -> np.ndarray:
    shape = (-1,) + (1,) * 2
    return states * stats.std.reshape(shape) + stats.mean.reshape(shape)


def standardize(dataset: TrajectoryDataset) -> tuple[TrajectoryDataset, ChannelStats]:
    """Shift/scale each channel to zero mean and unit std over all snapshots."""
    if dataset.states.size == 0:
        raise ValueError("cannot standardize an empty dataset")
    stats = compute_channel_stats(dataset.states)
    out = replace(dataset, states=standardize_array(dataset.states, stats), stats=stats)
    return out, stats


def destandardize(dataset: TrajectoryDataset, stats: ChannelStats | None = None) -> TrajectoryDataset:
    """Inverse of standardize; uses the dataset's own stats when not given."""
    if stats is None:
        stats = dataset.stats
    if stats is None:
        raise ValueError("dataset carries no standardization stats")
    return replace(dataset, states=destandardize_array(dataset.states, stats), stats=None)
