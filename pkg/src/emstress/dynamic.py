"""Effective-time transform for time-varying temperature.

With kappa(t) = kappa(T(t)), substituting T' = int_0^t kappa(s)/kappa0 ds
turns the varying-diffusivity problem into one with constant kappa0, so
the constant-temperature trial function applies unchanged in T'.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import SegmentContext
from .physics import MaterialParams, TemperatureModel, diffusivity, temperature
from .trial import GradientSpec, TrialConfig, trial_eval


def adaptive_simpson(f, a: float, b: float, rel_tol: float = 1e-8, max_depth: int = 50) -> float:
    """Adaptive Simpson quadrature of a scalar function on [a, b]."""
    if b == a:
        return 0.0
    fa, fm, fb = f(a), f((a + b) / 2), f(b)
    whole = (b - a) / 6 * (fa + 4 * fm + fb)
    tol = rel_tol * abs(whole) if whole else rel_tol

    def rec(a, b, fa, fm, fb, whole, tol, depth):
        m = (a + b) / 2
        lm, rm = (a + m) / 2, (m + b) / 2
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6 * (fa + 4 * flm + fm)
        right = (b - m) / 6 * (fm + 4 * frm + fb)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15 * tol:
            return left + right + delta / 15
        return (rec(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + rec(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    return rec(a, b, fa, fm, fb, whole, tol, max_depth)


@dataclass
class EffectiveTimeMap:
    """Cached map t -> T'(t) for one temperature history.

    The horizon is cut into ``n_panels`` equal panels whose integrals are
    computed once; a query integrates only the partial panel it lands in.
    """

    model: TemperatureModel
    material: MaterialParams = field(default_factory=MaterialParams)
    kappa0: float | None = None
    t_max: float = 1e8
    n_panels: int = 256
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.kappa0 is None:
            self.kappa0 = diffusivity(reference_temperature(self.model), self.material)
        self._constant = self.model.kind == "constant" and \
            math.isclose(diffusivity(self.model.T0, self.material), self.kappa0, rel_tol=1e-15)
        self._knots = np.linspace(0.0, self.t_max, self.n_panels + 1)
        self._cum = np.zeros_like(self._knots)
        self._cache: dict[float, float] = {}
        if not self._constant:
            parts = [adaptive_simpson(self.ratio, a, b, self.rel_tol)
                     for a, b in zip(self._knots[:-1], self._knots[1:])]
            self._cum[1:] = np.cumsum(parts)

    def ratio(self, t: float) -> float:
        return diffusivity(temperature(t, self.model), self.material) / self.kappa0

    def _one(self, t: float) -> float:
        if t < 0:
            raise ValueError("effective time queried at negative t")
        if self._constant:
            return t
        hit = self._cache.get(t)
        if hit is not None:
            return hit
        if t >= self.t_max:
            base, start = self._cum[-1], self.t_max
        else:
            k = int(np.searchsorted(self._knots, t, side="right")) - 1
            base, start = self._cum[k], self._knots[k]
        val = base + adaptive_simpson(self.ratio, start, t, self.rel_tol)
        self._cache[t] = val
        return val

    def __call__(self, t):
        if np.ndim(t) == 0:
            return self._one(float(t))
        arr = np.asarray(t, dtype=float)
        return np.array([self._one(v) for v in arr.ravel()]).reshape(arr.shape)


def reference_temperature(model: TemperatureModel) -> float:
    if model.kind == "tabulated":
        return model.table[0][1]
    return model.T0


def effective_time(t, model: TemperatureModel, material: MaterialParams = MaterialParams(),
                   kappa0: float | None = None):
    """T'(t) in seconds; a one-off map sized to the query."""
    t_max = float(np.max(t)) if np.size(t) else 1.0
    return EffectiveTimeMap(model, material, kappa0, t_max=max(t_max, 1.0))(t)


def dynamic_stress(x, t, seg: SegmentContext, grads: GradientSpec, cfg: TrialConfig,
                   tmap: EffectiveTimeMap, time_scale: float = 1.0):
    """Trial stress at wall-clock time(s) ``t`` (seconds).

    ``seg`` must carry kappa0; ``time_scale`` converts seconds to the time
    unit of ``seg`` (omega_t for scaled contexts).
    """
    return trial_eval(x, tmap(t) * time_scale, seg, grads, cfg)
