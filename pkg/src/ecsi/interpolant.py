"""Stochastic interpolant schedules and their energy-aware optimization.

The interpolant connecting a state pair (x0, x1) over pseudo-time tau in
[0, 1] is

    I_tau = alpha_tau x0 + beta_tau x1 + gamma_tau W_tau,    W_tau = sqrt(tau) z

with drift target R_tau = alpha' x0 + beta' x1 + gamma' W_tau (same z).  The
schedule functions satisfy alpha_0 = beta_1 = 1, alpha_1 = beta_0 = gamma_1 = 0.

Two schedule families are provided:

  * a sine-series parameterization (boundary conditions hold for any
    coefficient values), whose coefficients are optimized below;
  * the fixed quadratic baseline alpha = 1 - tau, beta = tau^2.

The expected rate of change of the interpolant energy 0.5 ||I_tau||^2 is

    H_tau = a' a ||x0||^2 + b' b ||x1||^2 + (b' a + a' b) <x0, x1>
            + g' g tau d + (d/2) g^2

which the coefficient optimizer drives toward a prescribed profile (zero for
statistically stationary data) while also penalizing the path transport cost
integral E||R_tau||^2 dtau.  Minimization uses damped Newton steps with a
finite-difference Hessian of the analytic gradient and an Armijo
backtracking line search.

Note the energy objective squares the per-tau expected discrepancy before
integrating; the signed integral itself is unbounded below, while the
squared form keeps "zero expected energy drift at every tau" as the global
minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

HALF_PI = 0.5 * np.pi


def _check_tau(tau) -> np.ndarray:
    t = np.asarray(tau, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError(f"pseudo-time must lie in [0, 1], got {tau!r}")
    return t


@dataclass(frozen=True)
class CoeffEval:
    """Schedule values and tau-derivatives at one (or a batch of) tau."""

    alpha: np.ndarray | float
    beta: np.ndarray | float
    gamma: np.ndarray | float
    alpha_dot: np.ndarray | float
    beta_dot: np.ndarray | float
    gamma_dot: np.ndarray | float


@dataclass(frozen=True)
class InterpolantCoeffs:
    """Sine-series schedule: base cos/sin profile plus optimizable corrections.

        alpha = cos(pi tau / 2) + sum_i alpha_hat_i sin(i pi tau)
        beta  = sin(pi tau / 2) + sum_i beta_hat_i  sin(i pi tau)
        gamma = gamma_scale (1 - tau)

    The sine corrections vanish at tau = 0 and 1, so the temporal boundary
    conditions hold identically for any coefficient values.
    """

    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    gamma_scale: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "alpha_hat", np.atleast_1d(np.asarray(self.alpha_hat, dtype=float)))
        object.__setattr__(self, "beta_hat", np.atleast_1d(np.asarray(self.beta_hat, dtype=float)))

    @classmethod
    def default(cls, n_terms: int = 5, gamma_scale: float = 0.1) -> "InterpolantCoeffs":
        return cls(np.zeros(n_terms), np.zeros(n_terms), gamma_scale)

    @property
    def n_alpha(self) -> int:
        return self.alpha_hat.size

    def at(self, tau) -> CoeffEval:
        t = _check_tau(tau)
        i = np.arange(1, self.n_alpha + 1, dtype=float)
        ib = np.arange(1, self.beta_hat.size + 1, dtype=float)
        tt = np.atleast_1d(t)[:, None]
        sin_a = np.sin(np.pi * tt * i)
        cos_a = np.pi * i * np.cos(np.pi * tt * i)
        sin_b = np.sin(np.pi * tt * ib)
        cos_b = np.pi * ib * np.cos(np.pi * tt * ib)
        alpha = np.cos(HALF_PI * t) + np.squeeze(sin_a @ self.alpha_hat).reshape(t.shape)
        alpha_dot = -HALF_PI * np.sin(HALF_PI * t) + np.squeeze(cos_a @ self.alpha_hat).reshape(t.shape)
        beta = np.sin(HALF_PI * t) + np.squeeze(sin_b @ self.beta_hat).reshape(t.shape)
        beta_dot = HALF_PI * np.cos(HALF_PI * t) + np.squeeze(cos_b @ self.beta_hat).reshape(t.shape)
        gamma = self.gamma_scale * (1.0 - t)
        gamma_dot = -self.gamma_scale * np.ones_like(t)
        if t.ndim == 0:
            return CoeffEval(float(alpha), float(beta), float(gamma),
                             float(alpha_dot), float(beta_dot), float(gamma_dot))
        return CoeffEval(alpha, beta, gamma, alpha_dot, beta_dot, gamma_dot)

    def to_dict(self) -> dict:
        return {
            "n_alpha": int(self.n_alpha),
            "alpha_hat": self.alpha_hat.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "gamma_scale": float(self.gamma_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InterpolantCoeffs":
        c = cls(np.asarray(d["alpha_hat"], dtype=float),
                np.asarray(d["beta_hat"], dtype=float),
                float(d["gamma_scale"]))
        if c.n_alpha != int(d["n_alpha"]):
            raise ValueError("inconsistent coefficient count in serialized schedule")
        return c


@dataclass(frozen=True)
class QuadraticCoeffs:
    """Non-optimized baseline schedule alpha = 1 - tau, beta = tau^2."""

    gamma_scale: float = 0.1

    def at(self, tau) -> CoeffEval:
        t = _check_tau(tau)
        one = np.ones_like(t)
        ce = CoeffEval(1.0 - t, t * t, self.gamma_scale * (1.0 - t),
                       -one, 2.0 * t, -self.gamma_scale * one)
        if t.ndim == 0:
            return CoeffEval(*(float(x) for x in (ce.alpha, ce.beta, ce.gamma,
                                                  ce.alpha_dot, ce.beta_dot, ce.gamma_dot)))
        return ce


def eval_coeffs(coeffs, tau) -> CoeffEval:
    """Evaluate a schedule (series or baseline) at tau in [0, 1]."""
    return coeffs.at(tau)


def _bcast(c, x: np.ndarray):
    """Broadcast per-sample schedule values over trailing state dimensions."""
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (x.ndim - c.ndim))


def interpolate(coeffs, tau, x0: np.ndarray, x1: np.ndarray, w: np.ndarray) -> np.ndarray:
    """I_tau = alpha x0 + beta x1 + gamma sqrt(tau) w, with w the raw normal draw."""
    ce = coeffs.at(tau)
    root_t = np.sqrt(np.asarray(tau, dtype=float))
    return (_bcast(ce.alpha, x0) * x0 + _bcast(ce.beta, x1) * x1
            + _bcast(ce.gamma * root_t, x0) * w)


def drift_target(coeffs, tau, x0: np.ndarray, x1: np.ndarray, w: np.ndarray) -> np.ndarray:
    """R_tau = alpha' x0 + beta' x1 + gamma' sqrt(tau) w (same w as interpolate)."""
    ce = coeffs.at(tau)
    root_t = np.sqrt(np.asarray(tau, dtype=float))
    return (_bcast(ce.alpha_dot, x0) * x0 + _bcast(ce.beta_dot, x1) * x1
            + _bcast(ce.gamma_dot * root_t, x0) * w)


def energy_rate_H(coeffs, tau, x0: np.ndarray, x1: np.ndarray):
    """Expected d/dtau of 0.5 ||I_tau||^2 for a fixed pair (x0, x1).

    Five terms: the pair part from the mean path plus the noise part
    gamma' gamma tau d + (d/2) gamma^2, d the state dimension.
    """
    x0 = np.asarray(x0, dtype=float)
    x1 = np.asarray(x1, dtype=float)
    d = x0.size
    n0 = float(np.dot(x0.ravel(), x0.ravel()))
    n1 = float(np.dot(x1.ravel(), x1.ravel()))
    x01 = float(np.dot(x0.ravel(), x1.ravel()))
    ce = coeffs.at(tau)
    t = np.asarray(tau, dtype=float)
    h = (ce.alpha_dot * ce.alpha * n0 + ce.beta_dot * ce.beta * n1
         + (ce.beta_dot * ce.alpha + ce.alpha_dot * ce.beta) * x01
         + ce.gamma_dot * ce.gamma * t * d + 0.5 * d * ce.gamma**2)
    return float(h) if t.ndim == 0 else h


# ---------------------------------------------------------------------------
# Batched losses over an ensemble of state pairs


@dataclass(frozen=True)
class PairBatch:
    """Flattened state pairs with their precomputed inner products."""

    x0: np.ndarray  # (B, d)
    x1: np.ndarray  # (B, d)
    n0: np.ndarray = field(init=False)
    n1: np.ndarray = field(init=False)
    x01: np.ndarray = field(init=False)

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        x1 = np.asarray(self.x1, dtype=float)
        if x0.ndim != 2 or x0.shape != x1.shape:
            raise ValueError(f"expected matching (B, d) arrays, got {x0.shape} and {x1.shape}")
        if x0.shape[0] == 0:
            raise ValueError("empty pair batch")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "n0", np.einsum("bd,bd->b", x0, x0))
        object.__setattr__(self, "n1", np.einsum("bd,bd->b", x1, x1))
        object.__setattr__(self, "x01", np.einsum("bd,bd->b", x0, x1))

    @property
    def size(self) -> int:
        return self.x0.shape[0]

    @property
    def dim(self) -> int:
        return self.x0.shape[1]

    @classmethod
    def from_dataset(cls, dataset, max_pairs: int | None = None,
                     rng: np.random.Generator | None = None) -> "PairBatch":
        """All consecutive-state pairs of a trajectory dataset, flattened."""
        s = dataset.states
        x0 = s[:, :-1].reshape(-1, s.shape[2] * s.shape[3] * s.shape[4])
        x1 = s[:, 1:].reshape(-1, s.shape[2] * s.shape[3] * s.shape[4])
        if max_pairs is not None and x0.shape[0] > max_pairs:
            idx = (rng or np.random.default_rng(0)).choice(x0.shape[0], max_pairs, replace=False)
            x0, x1 = x0[idx], x1[idx]
        return cls(x0, x1)


def midpoint_grid(n_points: int = 64) -> np.ndarray:
    return (np.arange(n_points) + 0.5) / n_points


def mean_energy_rate(coeffs, batch: PairBatch, tau_grid: np.ndarray) -> np.ndarray:
    """Batch mean of H_tau on a tau grid (vectorized over the grid)."""
    ce = coeffs.at(tau_grid)
    d = batch.dim
    s0, s1, s01 = batch.n0.mean(), batch.n1.mean(), batch.x01.mean()
    return (ce.alpha_dot * ce.alpha * s0 + ce.beta_dot * ce.beta * s1
            + (ce.beta_dot * ce.alpha + ce.alpha_dot * ce.beta) * s01
            + ce.gamma_dot * ce.gamma * tau_grid * d + 0.5 * d * ce.gamma**2)


def energy_loss(coeffs, batch: PairBatch, tau_grid: np.ndarray | None = None,
                k: Callable[[np.ndarray, PairBatch], np.ndarray] | None = None) -> float:
    """Quadrature over tau of the squared expected energy-rate discrepancy."""
    if tau_grid is None:
        tau_grid = midpoint_grid()
    disc = mean_energy_rate(coeffs, batch, tau_grid)
    if k is not None:
        disc = disc - np.asarray(k(tau_grid, batch), dtype=float)
    return float(np.mean(disc**2))


def transport_loss(coeffs, batch: PairBatch, tau_grid: np.ndarray | None = None,
                   n_noise: int | None = None,
                   rng: np.random.Generator | None = None) -> float:
    """Quadrature over tau of E ||R_tau||^2.

    The noise contribution is the closed form gamma'^2 tau d (cross terms
    vanish in expectation); pass n_noise to estimate it by Monte Carlo
    instead, e.g. to cross-check the identity.
    """
    if tau_grid is None:
        tau_grid = midpoint_grid()
    ce = coeffs.at(tau_grid)
    s0, s1, s01 = batch.n0.mean(), batch.n1.mean(), batch.x01.mean()
    mean_part = (ce.alpha_dot**2 * s0 + ce.beta_dot**2 * s1
                 + 2.0 * ce.alpha_dot * ce.beta_dot * s01)
    if n_noise is None:
        noise_part = ce.gamma_dot**2 * tau_grid * batch.dim
        return float(np.mean(mean_part + noise_part))
    if n_noise < 1:
        raise ValueError("n_noise must be >= 1")
    rng = rng or np.random.default_rng(0)
    total = np.empty_like(tau_grid)
    for q, t in enumerate(tau_grid):
        z = rng.standard_normal((n_noise, batch.size, batch.dim))
        r = (ce.alpha_dot[q] * batch.x0 + ce.beta_dot[q] * batch.x1
             + ce.gamma_dot[q] * np.sqrt(t) * z)
        total[q] = np.mean(np.sum(r**2, axis=-1))
    return float(np.mean(total))


# ---------------------------------------------------------------------------
# Coefficient optimization (damped Newton with backtracking)


def _series_tables(n_terms: int, tau_grid: np.ndarray):
    i = np.arange(1, n_terms + 1, dtype=float)
    sin_t = np.sin(np.pi * tau_grid[:, None] * i)          # (Q, N)
    cos_t = np.pi * i * np.cos(np.pi * tau_grid[:, None] * i)
    return sin_t, cos_t


def interpolant_loss_and_grad(theta: np.ndarray, batch: PairBatch, tau_grid: np.ndarray,
                              gamma_scale: float, weights: tuple[float, float],
                              k: Callable | None = None) -> tuple[float, np.ndarray]:
    """Weighted energy + transport loss and its analytic coefficient gradient.

    theta stacks (alpha_hat, beta_hat); both series must have equal length.
    """
    n = theta.size // 2
    coeffs = InterpolantCoeffs(theta[:n], theta[n:], gamma_scale)
    ce = coeffs.at(tau_grid)
    sin_t, cos_t = _series_tables(n, tau_grid)
    d = batch.dim
    s0, s1, s01 = batch.n0.mean(), batch.n1.mean(), batch.x01.mean()
    w_e, w_t = weights
    q = tau_grid.size

    disc = (ce.alpha_dot * ce.alpha * s0 + ce.beta_dot * ce.beta * s1
            + (ce.beta_dot * ce.alpha + ce.alpha_dot * ce.beta) * s01
            + ce.gamma_dot * ce.gamma * tau_grid * d + 0.5 * d * ce.gamma**2)
    if k is not None:
        disc = disc - np.asarray(k(tau_grid, batch), dtype=float)
    e_loss = np.mean(disc**2)
    # dA/d alpha_hat_i and dA/d beta_hat_i per grid point
    dA_da = (cos_t * ce.alpha[:, None] + sin_t * ce.alpha_dot[:, None]) * s0 \
        + (sin_t * ce.beta_dot[:, None] + cos_t * ce.beta[:, None]) * s01
    dA_db = (cos_t * ce.beta[:, None] + sin_t * ce.beta_dot[:, None]) * s1 \
        + (sin_t * ce.alpha_dot[:, None] + cos_t * ce.alpha[:, None]) * s01
    g_energy = 2.0 / q * np.concatenate([disc @ dA_da, disc @ dA_db])

    t_loss = np.mean(ce.alpha_dot**2 * s0 + ce.beta_dot**2 * s1
                     + 2.0 * ce.alpha_dot * ce.beta_dot * s01
                     + ce.gamma_dot**2 * tau_grid * d)
    gt_a = 2.0 * (ce.alpha_dot * s0 + ce.beta_dot * s01) @ cos_t / q
    gt_b = 2.0 * (ce.beta_dot * s1 + ce.alpha_dot * s01) @ cos_t / q
    g_transport = np.concatenate([gt_a, gt_b])

    loss = w_e * e_loss + w_t * t_loss
    return float(loss), w_e * g_energy + w_t * g_transport


@dataclass(frozen=True)
class NewtonOpts:
    max_iter: int = 200
    grad_tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 40
    fd_eps: float = 1e-6
    n_tau: int = 64


@dataclass
class OptimizeResult:
    coeffs: InterpolantCoeffs
    loss: float
    grad_norm: float
    iterations: int
    converged: bool
    warning: str | None = None


def optimize_coeffs(init: InterpolantCoeffs, batch: PairBatch,
                    weights: tuple[float, float] = (1.0, 1.0),
                    opts: NewtonOpts = NewtonOpts(),
                    k: Callable | None = None) -> OptimizeResult:
    """Minimize the interpolant loss over the sine-series coefficients.

    Newton directions from a central-difference Hessian of the analytic
    gradient, Levenberg damping when the Hessian is not positive definite,
    and an Armijo backtracking line search.  gamma stays fixed.
    """
    if init.alpha_hat.size != init.beta_hat.size:
        raise ValueError("alpha and beta series must have equal length")
    tau_grid = midpoint_grid(opts.n_tau)
    gs = init.gamma_scale

    def f_g(th):
        return interpolant_loss_and_grad(th, batch, tau_grid, gs, weights, k)

    theta = np.concatenate([init.alpha_hat, init.beta_hat]).astype(float)
    loss, grad = f_g(theta)
    best_theta, best_loss = theta.copy(), loss
    warning = None
    it = 0
    for it in range(1, opts.max_iter + 1):
        gnorm = np.abs(grad).max()
        if gnorm < opts.grad_tol:
            return OptimizeResult(
                InterpolantCoeffs(theta[: theta.size // 2], theta[theta.size // 2:], gs),
                loss, gnorm, it - 1, True)
        hess = _fd_hessian(f_g, theta, opts.fd_eps)
        step = _damped_newton_direction(hess, grad)
        # Armijo backtracking, rejecting non-finite trial losses
        t, accepted = 1.0, False
        slope = float(grad @ step)
        if slope >= 0:  # safeguard: fall back to steepest descent
            step = -grad / max(1.0, np.abs(grad).max())
            slope = float(grad @ step)
        for _ in range(opts.max_backtracks):
            trial = theta + t * step
            trial_loss, trial_grad = f_g(trial)
            if np.isfinite(trial_loss) and trial_loss <= loss + opts.armijo_c * t * slope:
                theta, loss, grad = trial, trial_loss, trial_grad
                accepted = True
                break
            t *= opts.backtrack_factor
        if not accepted:
            warning = "line search failed; returning best iterate"
            break
        if loss < best_loss:
            best_theta, best_loss = theta.copy(), loss
    if loss > best_loss:
        theta, loss = best_theta, best_loss
        _, grad = f_g(theta)
    gnorm = float(np.abs(grad).max())
    converged = gnorm < opts.grad_tol
    if not converged and warning is None:
        warning = "iteration limit reached before gradient tolerance"
    n = theta.size // 2
    return OptimizeResult(InterpolantCoeffs(theta[:n], theta[n:], gs),
                          float(loss), gnorm, it, converged, warning)


def _fd_hessian(f_g, theta: np.ndarray, eps: float) -> np.ndarray:
    m = theta.size
    hess = np.empty((m, m))
    for j in range(m):
        e = eps * max(1.0, abs(theta[j]))
        tp, tm = theta.copy(), theta.copy()
        tp[j] += e
        tm[j] -= e
        _, gp = f_g(tp)
        _, gm = f_g(tm)
        hess[:, j] = (gp - gm) / (2.0 * e)
    return 0.5 * (hess + hess.T)


def _damped_newton_direction(hess: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Solve (H + lam I) p = -g, doubling lam until H is positive definite."""
    m = hess.shape[0]
    lam = 0.0
    scale = max(1.0, np.abs(np.diag(hess)).max())
    for _ in range(60):
        try:
            chol = np.linalg.cholesky(hess + lam * np.eye(m))
            return -np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        except np.linalg.LinAlgError:
            lam = 1e-8 * scale if lam == 0.0 else 2.0 * lam
    return -grad  # heavily damped: effectively gradient descent
