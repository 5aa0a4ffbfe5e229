"""Evaluation suite: error, energy, distributional, and spectral metrics.

Generated ensembles are compared against a reference trajectory on

  * mean squared error over time steps and degrees of freedom,
  * kinetic energy series and the Wasserstein-1 distance between the pooled
    per-step energy distributions,
  * the l1 rate of change per step,
  * the time (as a fraction of the horizon) until the Pearson correlation
    with the reference drops below 0.8,
  * radially binned energy spectra at selected steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Grid, VelocityField, kinetic_energy
from .sample import RolloutEnsemble


def mse(gen: np.ndarray, ref: np.ndarray, horizon: int | None = None) -> float:
    """Mean over time steps and DOFs of the squared pointwise difference."""
    gen = np.asarray(gen, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if gen.shape != ref.shape:
        raise ValueError(f"trajectory shapes differ: {gen.shape} vs {ref.shape}")
    if horizon is None:
        horizon = gen.shape[0]
    if not 1 <= horizon <= gen.shape[0]:
        raise ValueError(f"horizon {horizon} out of range for {gen.shape[0]} steps")
    diff = gen[:horizon] - ref[:horizon]
    return float(np.mean(diff**2))


def rate_of_change(traj: np.ndarray, dt: float) -> np.ndarray:
    """l1 norm of the discrete time derivative, one value per step from 1 on."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < 2:
        raise ValueError("need at least two states for a rate of change")
    d = np.abs(np.diff(traj, axis=0)) / dt
    return d.reshape(d.shape[0], -1).sum(axis=1)


def wasserstein1(samples_a, samples_b) -> float:
    """Earth-mover distance between two 1-d empirical distributions.

    Computed as the integral of |F_a - F_b| over the merged sample grid,
    which equals the quantile-function integral (and the sorted-pair mean
    for equal sample counts).
    """
    a = np.sort(np.asarray(samples_a, dtype=float).ravel())
    b = np.sort(np.asarray(samples_b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample set")
    xs = np.sort(np.concatenate([a, b]))
    dx = np.diff(xs)
    cdf_a = np.searchsorted(a, xs[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, xs[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * dx))


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation of two flattened states; None when degenerate."""
    x = x.ravel()
    y = y.ravel()
    xc = x - x.mean()
    yc = y - y.mean()
    nx = np.sqrt(xc @ xc)
    ny = np.sqrt(yc @ yc)
    if nx < 1e-300 or ny < 1e-300:
        return None
    return float(xc @ yc / (nx * ny))


def correlation_time(gen: np.ndarray, ref: np.ndarray, threshold: float = 0.8) -> float:
    """First step (as a fraction of the horizon) where correlation drops below
    the threshold; 1.0 when it never does.  Degenerate states count as crossed."""
    gen = np.asarray(gen, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if gen.shape != ref.shape:
        raise ValueError("trajectories must have equal shapes")
    n = gen.shape[0]
    for k in range(n):
        c = pearson(gen[k], ref[k])
        if c is None or c < threshold:
            return k / n
    return 1.0


def energy_spectrum(q: VelocityField) -> np.ndarray:
    """Shell-binned spectral kinetic energy, shells k = 0 .. n/2.

    Uses forward-normalized transforms (fft / n^2) so the shell sum equals
    0.5 * sum(u^2 + v^2) / n^2; modes beyond the n/2 shell are folded into
    the last shell to keep that identity exact.
    """
    n = q.grid.n
    uh = np.fft.fft2(q.u) / n**2
    vh = np.fft.fft2(q.v) / n**2
    k = np.fft.fftfreq(n, d=1.0 / n)
    kmag = np.sqrt(k[:, None] ** 2 + k[None, :] ** 2)
    shell = np.minimum(np.floor(kmag).astype(int), n // 2)
    e = 0.5 * (np.abs(uh) ** 2 + np.abs(vh) ** 2)
    return np.bincount(shell.ravel(), weights=e.ravel(), minlength=n // 2 + 1)


@dataclass
class MetricReport:
    mse_50: float
    mse_full: float
    energy_w1: float
    corr_time: float
    gen_energy: np.ndarray          # (n_real, n_steps)
    ref_energy: np.ndarray          # (n_steps,)
    gen_roc: np.ndarray             # (n_real, n_steps - 1)
    ref_roc: np.ndarray             # (n_steps - 1,)
    spectra_steps: list[int]
    gen_spectra: np.ndarray         # (len(steps), n/2 + 1), ensemble means
    ref_spectra: np.ndarray
    per_realization: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "mse_50": self.mse_50,
            "mse_full": self.mse_full,
            "energy_w1": self.energy_w1,
            "corr_time": self.corr_time,
        }

    def summary_csv(self) -> str:
        lines = ["metric,value"]
        lines += [f"{k},{v:.10g}" for k, v in self.summary().items()]
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            **self.summary(),
            "gen_energy": self.gen_energy.tolist(),
            "ref_energy": self.ref_energy.tolist(),
            "gen_roc": self.gen_roc.tolist(),
            "ref_roc": self.ref_roc.tolist(),
            "spectra_steps": list(self.spectra_steps),
            "gen_spectra": self.gen_spectra.tolist(),
            "ref_spectra": self.ref_spectra.tolist(),
            "per_realization": self.per_realization,
        }


def _traj_energies(grid: Grid, traj: np.ndarray) -> np.ndarray:
    return np.array([kinetic_energy(VelocityField.from_array(grid, s)) for s in traj])


def evaluate(ensemble: RolloutEnsemble, spectra_steps: list[int] | None = None) -> MetricReport:
    """Aggregate all metrics of an ensemble against its reference trajectory."""
    if ensemble.reference is None:
        raise ValueError("ensemble has no reference trajectory")
    gen = ensemble.realizations
    ref = np.asarray(ensemble.reference, dtype=float)
    if gen.shape[1:] != ref.shape:
        raise ValueError(f"ensemble/reference mismatch: {gen.shape[1:]} vs {ref.shape}")
    n_real, n_steps = gen.shape[0], gen.shape[1]
    grid = ensemble.grid

    h50 = min(50, n_steps)
    mse_50 = [mse(gen[r], ref, h50) for r in range(n_real)]
    mse_full = [mse(gen[r], ref) for r in range(n_real)]
    corr = [correlation_time(gen[r], ref) for r in range(n_real)]

    gen_energy = np.stack([_traj_energies(grid, gen[r]) for r in range(n_real)])
    ref_energy = _traj_energies(grid, ref)
    energy_w1 = wasserstein1(gen_energy.ravel(), ref_energy)

    if n_steps >= 2:
        gen_roc = np.stack([rate_of_change(gen[r], ensemble.dt) for r in range(n_real)])
        ref_roc = rate_of_change(ref, ensemble.dt)
    else:
        gen_roc = np.zeros((n_real, 0))
        ref_roc = np.zeros(0)

    if spectra_steps is None:
        spectra_steps = sorted({0, n_steps // 2, n_steps - 1})
    gen_spectra, ref_spectra = [], []
    for s in spectra_steps:
        gs = np.mean(
            [energy_spectrum(VelocityField.from_array(grid, gen[r, s])) for r in range(n_real)],
            axis=0,
        )
        gen_spectra.append(gs)
        ref_spectra.append(energy_spectrum(VelocityField.from_array(grid, ref[s])))

    return MetricReport(
        mse_50=float(np.mean(mse_50)),
        mse_full=float(np.mean(mse_full)),
        energy_w1=float(energy_w1),
        corr_time=float(np.mean(corr)),
        gen_energy=gen_energy,
        ref_energy=ref_energy,
        gen_roc=gen_roc,
        ref_roc=ref_roc,
        spectra_steps=list(spectra_steps),
        gen_spectra=np.stack(gen_spectra),
        ref_spectra=np.stack(ref_spectra),
        per_realization={
            "mse_50": [float(v) for v in mse_50],
            "mse_full": [float(v) for v in mse_full],
            "corr_time": [float(v) for v in corr],
        },
    )
