"""Residual convolutional drift approximator with exact reverse-mode gradients.

The network maps (x_tau, history, tau) to a drift of the same shape as the
state.  Layout:

    input   : x_tau concatenated with the l+1 conditioning states
              -> (l+2) * state_channels input channels
    stem    : periodic k x k conv to `channels`
    blocks  : depth x residual blocks
                  h <- h + conv(gelu(conv(h) + bias(tau)))
              where bias(tau) is a per-channel, per-block linear readout of
              the shared tau-embedding MLP
    head    : 1 x 1 conv back to state_channels, zero-initialized so the
              freshly initialized drift is exactly zero.

All convolutions use circular padding (implemented with rolls), so the
network is exactly translation-equivariant.  Parameters live in one flat
float64 vector; forward/backward are hand-written, and `loss_and_grad`
returns the exact gradient of the mean squared drift-matching error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

SQRT1_2 = 1.0 / np.sqrt(2.0)
INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * SQRT1_2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * SQRT1_2)) + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI


@dataclass(frozen=True)
class TimeEmbedding:
    """Sinusoidal features of tau with a geometric frequency ladder."""

    dim: int = 32
    min_freq: float = 1.0
    max_freq: float = 100.0

    def __post_init__(self):
        if self.dim % 2 or self.dim < 2:
            raise ValueError(f"embedding dimension must be even and >= 2, got {self.dim}")

    def frequencies(self) -> np.ndarray:
        half = self.dim // 2
        return np.exp(np.linspace(np.log(self.min_freq), np.log(self.max_freq), half))

    def __call__(self, tau: np.ndarray) -> np.ndarray:
        t = np.atleast_1d(np.asarray(tau, dtype=float))[:, None]
        w = self.frequencies()[None, :]
        return np.concatenate([np.sin(w * t), np.cos(w * t)], axis=1)  # (B, dim)


@dataclass(frozen=True)
class DriftNetArch:
    channels: int = 32
    depth: int = 4
    kernel: int = 3
    emb_dim: int = 32
    history: int = 1  # number of past states besides the current one
    state_channels: int = 2

    def __post_init__(self):
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd")
        if self.history < 0:
            raise ValueError("history length must be >= 0")

    @property
    def in_channels(self) -> int:
        return (self.history + 2) * self.state_channels


def _param_layout(arch: DriftNetArch) -> list[tuple[str, tuple[int, ...]]]:
    e, c, k = arch.emb_dim, arch.channels, arch.kernel
    layout = [
        ("emb_w1", (e, e)), ("emb_b1", (e,)),
        ("emb_w2", (e, e)), ("emb_b2", (e,)),
        ("stem_w", (c, arch.in_channels, k, k)), ("stem_b", (c,)),
    ]
    for i in range(arch.depth):
        layout += [
            (f"blk{i}_p", (c, e)), (f"blk{i}_c", (c,)),
            (f"blk{i}_w1", (c, c, k, k)), (f"blk{i}_b1", (c,)),
            (f"blk{i}_w2", (c, c, k, k)), (f"blk{i}_b2", (c,)),
        ]
    layout += [("head_w", (arch.state_channels, c)), ("head_b", (arch.state_channels,))]
    return layout


class DriftNet:
    """Flat-parameter drift network; see module docstring for the layout."""

    def __init__(self, arch: DriftNetArch, n: int, params: np.ndarray):
        self.arch = arch
        self.n = n
        self.embedding = TimeEmbedding(arch.emb_dim)
        self._layout = _param_layout(arch)
        self._slices: dict[str, tuple[slice, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in self._layout:
            size = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        self.n_params = offset
        if params.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {params.shape}")
        self.params = params.astype(float)

    def view(self, name: str, params: np.ndarray | None = None) -> np.ndarray:
        sl, shape = self._slices[name]
        return (self.params if params is None else params)[sl].reshape(shape)

    @classmethod
    def init(cls, arch: DriftNetArch, n: int, seed: int = 0) -> "DriftNet":
        """He-scaled conv weights, zero biases, zero-initialized head."""
        layout = _param_layout(arch)
        rng = np.random.default_rng(seed)
        chunks = []
        for name, shape in layout:
            if name.startswith("head"):
                chunks.append(np.zeros(int(np.prod(shape))))
            elif name.endswith(("_b", "_b1", "_b2", "_c")) or len(shape) == 1:
                chunks.append(np.zeros(int(np.prod(shape))))
            else:
                fan_in = int(np.prod(shape[1:]))
                std = np.sqrt(2.0 / fan_in)
                chunks.append(rng.standard_normal(int(np.prod(shape))) * std)
        return cls(arch, n, np.concatenate(chunks))

    def with_params(self, params: np.ndarray) -> "DriftNet":
        return DriftNet(self.arch, self.n, params)

    # -- forward / backward -------------------------------------------------

    def _stack_inputs(self, x_tau: np.ndarray, history: np.ndarray) -> np.ndarray:
        cs = self.arch.state_channels
        b = x_tau.shape[0]
        if history.shape[1] != self.arch.history + 1:
            raise ValueError(
                f"expected {self.arch.history + 1} conditioning states, got {history.shape[1]}"
            )
        hist_flat = history.reshape(b, (self.arch.history + 1) * cs, self.n, self.n)
        return np.concatenate([x_tau, hist_flat], axis=1)

    def forward(self, x_tau: np.ndarray, history: np.ndarray, tau) -> np.ndarray:
        """Evaluate the drift; accepts single samples or batches."""
        single = x_tau.ndim == 3
        if single:
            x_tau, history = x_tau[None], history[None]
            tau = np.atleast_1d(tau)
        out, _ = self._forward(x_tau, history, np.asarray(tau, dtype=float))
        return out[0] if single else out

    def _forward(self, x_tau, history, tau):
        arch = self.arch
        cache = {"tau": tau}
        emb0 = self.embedding(tau)
        z1 = emb0 @ self.view("emb_w1").T + self.view("emb_b1")
        a1 = gelu(z1)
        emb = a1 @ self.view("emb_w2").T + self.view("emb_b2")
        cache.update(emb0=emb0, z1=z1, a1=a1, emb=emb)

        xin = self._stack_inputs(x_tau, history)
        h = conv_periodic(xin, self.view("stem_w"), self.view("stem_b"))
        cache.update(xin=xin)
        blocks = []
        for i in range(arch.depth):
            bias = emb @ self.view(f"blk{i}_p").T + self.view(f"blk{i}_c")
            z = conv_periodic(h, self.view(f"blk{i}_w1"), self.view(f"blk{i}_b1"))
            z = z + bias[:, :, None, None]
            a = gelu(z)
            r = conv_periodic(a, self.view(f"blk{i}_w2"), self.view(f"blk{i}_b2"))
            blocks.append({"h_in": h, "z": z, "a": a})
            h = h + r
        cache["blocks"] = blocks
        cache["h_out"] = h
        b = h.shape[0]
        out = (self.view("head_w") @ h.reshape(b, arch.channels, -1)).reshape(
            b, arch.state_channels, self.n, self.n
        ) + self.view("head_b")[None, :, None, None]
        return out, cache

    def loss_and_grad(self, x_tau: np.ndarray, history: np.ndarray, tau,
                      target: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean over the batch of ||forward - target||^2 / d, plus its gradient."""
        single = x_tau.ndim == 3
        if single:
            x_tau, history, target = x_tau[None], history[None], target[None]
            tau = np.atleast_1d(tau)
        tau = np.asarray(tau, dtype=float)
        out, cache = self._forward(x_tau, history, tau)
        b = out.shape[0]
        d = out[0].size
        resid = out - target
        loss = float(np.sum(resid**2) / (d * b))
        g_out = (2.0 / (d * b)) * resid
        grad = self._backward(g_out, cache)
        return loss, grad

    def _backward(self, g_out, cache):
        arch = self.arch
        grad = np.zeros_like(self.params)

        def gview(name):
            return self.view(name, grad)

        b = g_out.shape[0]
        h_out = cache["h_out"].reshape(b, arch.channels, -1)
        go = g_out.reshape(b, arch.state_channels, -1)
        gview("head_w")[...] = np.einsum("bop,bcp->oc", go, h_out)
        gview("head_b")[...] = go.sum(axis=(0, 2))
        g_h = (self.view("head_w").T @ go).reshape(b, arch.channels, self.n, self.n)

        g_emb = np.zeros_like(cache["emb"])
        for i in reversed(range(arch.depth)):
            blk = cache["blocks"][i]
            g_r = g_h  # residual branch
            g_a, gw2, gb2 = conv_periodic_backward(blk["a"], self.view(f"blk{i}_w2"), g_r)
            gview(f"blk{i}_w2")[...] = gw2
            gview(f"blk{i}_b2")[...] = gb2
            g_z = g_a * gelu_grad(blk["z"])
            g_bias = g_z.sum(axis=(2, 3))  # (B, C)
            gview(f"blk{i}_p")[...] = g_bias.T @ cache["emb"]
            gview(f"blk{i}_c")[...] = g_bias.sum(axis=0)
            g_emb += g_bias @ self.view(f"blk{i}_p")
            g_hin, gw1, gb1 = conv_periodic_backward(blk["h_in"], self.view(f"blk{i}_w1"), g_z)
            gview(f"blk{i}_w1")[...] = gw1
            gview(f"blk{i}_b1")[...] = gb1
            g_h = g_h + g_hin  # skip connection
        _, gws, gbs = conv_periodic_backward(cache["xin"], self.view("stem_w"), g_h,
                                             need_input_grad=False)
        gview("stem_w")[...] = gws
        gview("stem_b")[...] = gbs

        gview("emb_w2")[...] = g_emb.T @ cache["a1"]
        gview("emb_b2")[...] = g_emb.sum(axis=0)
        g_a1 = g_emb @ self.view("emb_w2")
        g_z1 = g_a1 * gelu_grad(cache["z1"])
        gview("emb_w1")[...] = g_z1.T @ cache["emb0"]
        gview("emb_b1")[...] = g_z1.sum(axis=0)
        return grad


def conv_periodic(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular 2-d convolution, x (B, Ci, n, n), w (Co, Ci, k, k)."""
    bs, ci, n, _ = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    out = np.zeros((bs, co, n * n))
    for dy in range(k):
        for dx in range(k):
            xs = np.roll(x, (p - dy, p - dx), axis=(2, 3)).reshape(bs, ci, n * n)
            out += w[:, :, dy, dx] @ xs
    return out.reshape(bs, co, n, n) + b[None, :, None, None]


def conv_periodic_backward(x: np.ndarray, w: np.ndarray, g_out: np.ndarray,
                           need_input_grad: bool = True):
    """Gradients of conv_periodic w.r.t. input, weights, and bias."""
    bs, ci, n, _ = x.shape
    co, _, k, _ = w.shape
    p = k // 2
    go = g_out.reshape(bs, co, n * n)
    g_w = np.empty_like(w)
    g_x = np.zeros_like(x) if need_input_grad else None
    for dy in range(k):
        for dx in range(k):
            xs = np.roll(x, (p - dy, p - dx), axis=(2, 3)).reshape(bs, ci, n * n)
            g_w[:, :, dy, dx] = np.einsum("bop,bip->oi", go, xs)
            if need_input_grad:
                gi = (w[:, :, dy, dx].T @ go).reshape(bs, ci, n, n)
                g_x += np.roll(gi, (dy - p, dx - p), axis=(2, 3))
    g_b = go.sum(axis=(0, 2))
    return g_x, g_w, g_b


def forward(net: DriftNet, x_tau: np.ndarray, history: np.ndarray, tau) -> np.ndarray:
    return net.forward(x_tau, history, tau)


def loss_and_grad(net: DriftNet, x_tau: np.ndarray, history: np.ndarray, tau,
                  target: np.ndarray) -> tuple[float, np.ndarray]:
    return net.loss_and_grad(x_tau, history, tau, target)
