"""Closed-form trial function for one segment.

The stress in a segment with zero initial stress and Neumann data
``d(sigma)/dx = k-(t)`` at x = 0 and ``k+(t)`` at x = L is written as an
image series of the half-space kernel ``g``; time-varying boundary
gradients enter through a Duhamel convolution evaluated with
Gauss-Legendre quadrature.  All routines work in whatever consistent unit
system the caller uses (training uses scaled units).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import special

from .geometry import NodeContext, SegmentContext

_SQRT_PI = math.sqrt(math.pi)
# beyond this kernel argument g underflows relative to sqrt(kappa t)
_Z_CUTOFF = 6.0


class OrderOutOfRange(ValueError):
    pass


class ZeroTotalWidth(ValueError):
    pass


class DegreeMismatch(ValueError):
    pass


class OutOfDomain(ValueError):
    pass


@dataclass(frozen=True)
class TrialConfig:
    n_gauss: int = 8
    n_reflections: int = 3
    erfc_tolerance: float = 1e-12

    def __post_init__(self):
        if not 1 <= self.n_gauss <= 64:
            raise OrderOutOfRange(f"n_gauss must be in [1, 64], got {self.n_gauss}")
        if not 1 <= self.n_reflections <= 16:
            raise ValueError(f"n_reflections must be in [1, 16], got {self.n_reflections}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrialConfig":
        return cls(**(data or {}))


@dataclass
class GradientSpec:
    """Boundary stress gradients of one segment.

    ``dprev``/``dnext`` map an array of times to dk/dt at the C-/C+ end;
    ``None`` means a constant gradient.
    """

    k0_prev: float
    k0_next: float
    dprev: Callable[[np.ndarray], np.ndarray] | None = None
    dnext: Callable[[np.ndarray], np.ndarray] | None = None

    def gradient_prev(self, t, n_gauss: int = 32):
        return self.k0_prev + _integrate(self.dprev, t, n_gauss)

    def gradient_next(self, t, n_gauss: int = 32):
        return self.k0_next + _integrate(self.dnext, t, n_gauss)


def _integrate(fn, t, n_gauss):
    if fn is None:
        return 0.0
    nodes, weights = gauss_legendre(n_gauss)
    t = np.asarray(t, dtype=float)
    return sum(w * t / 2 * fn(t / 2 * (1 + z)) for z, w in zip(nodes, weights))


def erfc(x):
    return special.erfc(x)


def basis_g(x, t, kappa):
    """Half-space kernel 2 sqrt(kappa t / pi) exp(-x^2 / 4 kappa t) - x erfc(x / 2 sqrt(kappa t)).

    Its x-derivative is ``-erfc(x / 2 sqrt(kappa t))``; g(x, 0) = 0.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    out = np.zeros(x.shape)
    live = t > 0
    if not np.any(live):
        return out if out.ndim else float(out)
    s = np.sqrt(kappa * t[live])
    z = x[live] / (2 * s)
    val = 2 * s * (np.exp(-z * z) / _SQRT_PI - z * special.erfc(z))
    val[z > _Z_CUTOFF] = 0.0
    out[live] = val
    return out if out.ndim else float(out)


def _legendre_pair(n: int, x: np.ndarray):
    """P_n(x) and P_{n-1}(x) by the three-term recurrence."""
    p_prev, p = np.ones_like(x), x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


@lru_cache(maxsize=None)
def _legendre_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    if not 1 <= n <= 64:
        raise OrderOutOfRange(f"Gauss-Legendre order must be in [1, 64], got {n}")
    x = np.cos(np.pi * (np.arange(1, n + 1) - 0.25) / (n + 0.5))
    for _ in range(100):
        p, p_prev = _legendre_pair(n, x)
        dp = n * (x * p - p_prev) / (x * x - 1)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-15:
            break
    p, p_prev = _legendre_pair(n, x)
    dp = n * (x * p - p_prev) / (x * x - 1)
    w = 2.0 / ((1 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n_gauss: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes (ascending, in (-1, 1)) and positive weights of the n-point rule."""
    return _legendre_rule(int(n_gauss))


def image_basis(x, t, L: float, kappa: float, n_reflections: int = 3):
    """Image sums multiplying the C- and C+ gradient data.

    Returns ``(Bm, Bp)`` with
    ``Bm = sum_n g((2n+2)L - x) + g(2nL + x)`` and
    ``Bp = sum_n g((2n+1)L - x) + g((2n+1)L + x)``,
    so a segment with constant gradients has stress ``-k- Bm + k+ Bp``.
    """
    x = np.asarray(x, dtype=float)
    Bm = 0.0
    Bp = 0.0
    for n in range(n_reflections):
        Bm = Bm + basis_g((2 * n + 2) * L - x, t, kappa) + basis_g(2 * n * L + x, t, kappa)
        Bp = Bp + basis_g((2 * n + 1) * L - x, t, kappa) + basis_g((2 * n + 1) * L + x, t, kappa)
    return Bm, Bp


def initial_gradient_J(ctx: NodeContext) -> np.ndarray:
    """Stress gradient at t = 0+ for each segment incident to a node.

    Terminals are blocked (gradient -G).  At a junction, equal stress on
    every branch at early time plus width-weighted flux balance give
    ``k_m(0) = -s_m * sum_j(s_j w_j G_j) / sum_j(w_j)``.
    """
    M = ctx.degree
    G = ctx.adj_G[:M]
    if M == 1:
        return np.array([-G[0]])
    w = ctx.adj_w[:M]
    s = ctx.signs[:M]
    total = w.sum()
    if total == 0:
        raise ZeroTotalWidth(f"node {ctx.node_id}: incident widths sum to zero")
    return -s * np.dot(s * w, G) / total


def h_matrix(ctx: NodeContext, n_outputs: int = 3) -> np.ndarray:
    """Linear map (M x n_outputs) from network outputs to all M gradient
    derivatives at a node; zero at terminals."""
    M = ctx.degree
    H = np.zeros((M, n_outputs))
    if M == 1:
        return H
    if M - 1 > n_outputs:
        raise DegreeMismatch(f"node {ctx.node_id}: degree {M} needs {M - 1} outputs")
    s = ctx.signs[:M]
    w = ctx.adj_w[:M]
    H[: M - 1, : M - 1] = np.eye(M - 1)
    H[M - 1, : M - 1] = -(s[M - 1] / w[M - 1]) * s[: M - 1] * w[: M - 1]
    return H


def transform_H(ctx: NodeContext, d_first) -> np.ndarray:
    """Complete the M-1 free derivatives at a junction so that the
    width-weighted signed sum vanishes; terminals get 0."""
    d_first = np.atleast_1d(np.asarray(d_first, dtype=float))
    M = ctx.degree
    if d_first.shape[-1] != M - 1:
        raise DegreeMismatch(f"node {ctx.node_id}: expected {M - 1} derivatives, got {d_first.shape[-1]}")
    if M == 1:
        return np.zeros(d_first.shape[:-1] + (1,))
    return d_first @ h_matrix(ctx, M - 1).T


def trial_eval(x, t, seg: SegmentContext, grads: GradientSpec, cfg: TrialConfig = TrialConfig()):
    """Quadrature-discretised trial stress at local position(s) x and time(s) t."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    tol = 1e-12 * seg.L
    if np.any(x < -tol) or np.any(x > seg.L + tol) or np.any(t < 0):
        raise OutOfDomain(f"(x, t) outside [0, {seg.L}] x [0, inf)")
    x = np.clip(x, 0.0, seg.L)
    x, t = np.broadcast_arrays(x, t)
    kappa, L, nr = seg.kappa, seg.L, cfg.n_reflections
    Bm, Bp = image_basis(x, t, L, kappa, nr)
    sigma = -grads.k0_prev * Bm + grads.k0_next * Bp
    if grads.dprev is not None or grads.dnext is not None:
        nodes, weights = gauss_legendre(cfg.n_gauss)
        for z, a in zip(nodes, weights):
            tau = t / 2 * (1 + z)
            Bm_j, Bp_j = image_basis(x, t / 2 * (1 - z), L, kappa, nr)
            term = 0.0
            if grads.dprev is not None:
                term = term - grads.dprev(tau) * Bm_j
            if grads.dnext is not None:
                term = term + grads.dnext(tau) * Bp_j
            sigma = sigma + a * t / 2 * term
    sigma = np.where(t > 0, sigma, 0.0)
    return sigma if sigma.ndim else float(sigma)


def pde_residual(seg: SegmentContext, grads: GradientSpec, cfg: TrialConfig,
                 xs, ts, h_x: float | None = None, h_t: float | None = None) -> float:
    """Max |sigma_t - kappa sigma_xx| over an interior grid, using
    fourth-order central differences of ``trial_eval``."""
    X, T = np.meshgrid(np.asarray(xs, dtype=float), np.asarray(ts, dtype=float), indexing="ij")
    h_x = h_x or 1e-3 * seg.L
    h_t = h_t or 1e-3 * float(np.min(ts))
    if np.any(X - 2 * h_x < 0) or np.any(X + 2 * h_x > seg.L) or np.any(T - 2 * h_t <= 0):
        raise OutOfDomain("finite-difference stencil leaves the interior")

    def f(dx, dt):
        return trial_eval(X + dx, T + dt, seg, grads, cfg)

    s_t = (-f(0, 2 * h_t) + 8 * f(0, h_t) - 8 * f(0, -h_t) + f(0, -2 * h_t)) / (12 * h_t)
    s_xx = (-f(2 * h_x, 0) + 16 * f(h_x, 0) - 30 * f(0, 0) + 16 * f(-h_x, 0)
            - f(-2 * h_x, 0)) / (12 * h_x ** 2)
    return float(np.max(np.abs(s_t - seg.kappa * s_xx)))


def neumann_residual(seg: SegmentContext, grads: GradientSpec, cfg: TrialConfig, ts) -> float:
    """Max deviation of the end gradients of the trial function from the
    prescribed k-(t), k+(t), computed analytically from dg/dx = -erfc.

    Only the constant-gradient part is checked exactly; it exposes the
    image-series truncation error.
    """
    ts = np.asarray(ts, dtype=float)
    s = np.sqrt(seg.kappa * ts)
    L, nr = seg.L, cfg.n_reflections
    # dBm/dx and dBp/dx at x = 0 and x = L
    def dBm(x):
        return sum(special.erfc(((2 * n + 2) * L - x) / (2 * s))
                   - special.erfc((2 * n * L + x) / (2 * s)) for n in range(nr))

    def dBp(x):
        return sum(special.erfc(((2 * n + 1) * L - x) / (2 * s))
                   - special.erfc(((2 * n + 1) * L + x) / (2 * s)) for n in range(nr))

    g0 = -grads.k0_prev * dBm(0.0) + grads.k0_next * dBp(0.0)
    gL = -grads.k0_prev * dBm(L) + grads.k0_next * dBp(L)
    return float(max(np.max(np.abs(g0 - grads.k0_prev)), np.max(np.abs(gL - grads.k0_next))))
