"""Reference solver: implicit finite volumes for Korhonen's equation on a
tree, plus stress-field containers, error metrics and nucleation time.

Each segment is split into equal cells.  Nodes of the tree carry one
shared unknown (stress continuity); their control volume collects a
half-cell from every incident branch, weighted by branch width, so the
discrete atom content ``sum_i w_i * int sigma_i dx`` is conserved exactly
and junction flux balance holds by construction.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .geometry import InterconnectTree, locate
from .physics import (MaterialParams, ScalingFactors, TemperatureModel, diffusivity,
                      em_driving_force, temperature, unscale_stress)

log = logging.getLogger(__name__)


class SingularSystem(RuntimeError):
    pass


class StepTooLarge(RuntimeError):
    pass


class KeyMismatch(ValueError):
    pass


class NonMonotoneWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FdmConfig:
    dx_target: float = 5e-8
    dt0: float = 10.0
    growth: float = 1.2
    dt_max: float | None = None
    t_end: float = 1e8
    scheme: str = "implicit_euler"
    # combine a run with halved steps (Richardson) for second order in time
    richardson: bool = True

    def __post_init__(self):
        if not self.dx_target > 0:
            raise ValueError("dx_target must be positive")
        if not (self.dt0 > 0 and self.growth >= 1.0 and self.t_end > 0):
            raise ValueError("invalid time-step schedule")
        if self.scheme != "implicit_euler":
            raise ValueError(f"unsupported scheme {self.scheme!r}")

    @classmethod
    def from_dict(cls, data: dict | None) -> "FdmConfig":
        return cls(**(data or {}))


@dataclass
class StressField:
    segment_id: np.ndarray
    x_m: np.ndarray
    t_s: np.ndarray
    sigma_Pa: np.ndarray
    source: str = "oracle"

    def __post_init__(self):
        self.segment_id = np.asarray(self.segment_id, dtype=int)
        self.x_m = np.asarray(self.x_m, dtype=float)
        self.t_s = np.asarray(self.t_s, dtype=float)
        self.sigma_Pa = np.asarray(self.sigma_Pa, dtype=float)
        if not np.all(np.isfinite(self.sigma_Pa)):
            raise ValueError("stress field contains non-finite values")

    def __len__(self):
        return len(self.sigma_Pa)

    def keys(self) -> list[tuple[int, float, float]]:
        return [(int(s), _key(x), _key(t)) for s, x, t in zip(self.segment_id, self.x_m, self.t_s)]

    def at_time(self, t: float) -> "StressField":
        m = np.isclose(self.t_s, t, rtol=1e-12, atol=0)
        return StressField(self.segment_id[m], self.x_m[m], self.t_s[m], self.sigma_Pa[m], self.source)

    def write_csv(self, path, meta: dict | None = None):
        with open(path, "w", newline="") as fh:
            if meta:
                fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
            w = csv.writer(fh)
            w.writerow(["segment_id", "x_m", "t_s", "sigma_Pa", "source"])
            for s, x, t, v in zip(self.segment_id, self.x_m, self.t_s, self.sigma_Pa):
                w.writerow([int(s), repr(float(x)), repr(float(t)), repr(float(v)), self.source])

    @classmethod
    def read_csv(cls, path) -> "StressField":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        body = rows[1:]
        return cls([int(r[0]) for r in body], [float(r[1]) for r in body],
                   [float(r[2]) for r in body], [float(r[3]) for r in body],
                   body[0][4] if body else "oracle")


def _key(v: float) -> float:
    return float(f"{v:.12g}")


@dataclass
class Probes:
    """Evaluation points: (segment, fraction) pairs crossed with times."""

    points: list[tuple[int, float]]
    times: list[float]

    @classmethod
    def default(cls, tree: InterconnectTree, times: Sequence[float] | None = None,
                n_interior: int = 9) -> "Probes":
        times = list(times) if times is not None else default_times()
        fracs = np.linspace(0.0, 1.0, n_interior + 2)
        pts = [(s.id, float(f)) for s in tree.segments for f in fracs]
        return cls(pts, [float(t) for t in times])

    def expand(self, tree: InterconnectTree):
        seg = np.array([p[0] for p in self.points], dtype=int)
        x = np.array([locate(tree, s, f) for s, f in self.points])
        T = np.repeat(np.asarray(self.times, dtype=float), len(seg))
        return np.tile(seg, len(self.times)), np.tile(x, len(self.times)), T


def default_times(n: int = 10, t_min: float = 1e5, t_max: float = 1e8) -> list[float]:
    return [float(v) for v in np.geomspace(t_min, t_max, n)]


class FdmSystem:
    """Spatial discretisation of a tree: ``M dsigma/dt = kappa (K sigma + b)``
    in scaled units."""

    def __init__(self, tree: InterconnectTree, material: MaterialParams, cfg: FdmConfig,
                 factors: ScalingFactors):
        self.tree, self.material, self.cfg, self.factors = tree, material, cfg, factors
        n_nodes = len(tree.nodes)
        self.cells = []
        self.seg_index = []
        nxt = n_nodes
        for s in tree.segments:
            n = max(2, math.ceil(s.length_m / cfg.dx_target - 1e-9))
            idx = np.empty(n + 1, dtype=int)
            idx[0], idx[-1] = s.node_prev, s.node_next
            idx[1:-1] = np.arange(nxt, nxt + n - 1)
            nxt += n - 1
            self.cells.append(n)
            self.seg_index.append(idx)
        self.n = nxt
        mass = np.zeros(self.n)
        b = np.zeros(self.n)
        rows, cols, vals = [], [], []
        for s, idx, n in zip(tree.segments, self.seg_index, self.cells):
            h = factors.length(s.length_m) / n
            w = s.width_m
            G = factors.driving_force(em_driving_force(s.current_density_A_per_m2, material))
            a, c = idx[:-1], idx[1:]
            np.add.at(mass, a, w * h / 2)
            np.add.at(mass, c, w * h / 2)
            # cell flux q = (sigma_c - sigma_a)/h + G enters a, leaves c
            coef = w / h
            rows += [a, a, c, c]
            cols += [c, a, a, c]
            vals += [np.full(n, coef), np.full(n, -coef), np.full(n, coef), np.full(n, -coef)]
            b[idx[0]] += w * G
            b[idx[-1]] -= w * G
        self.mass = mass
        self.K = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(self.n, self.n))
        self.b = b

    def kappa(self, t_si: float, temp: TemperatureModel) -> float:
        return self.factors.kappa(diffusivity(temperature(t_si, temp), self.material))

    def segment_values(self, sigma: np.ndarray, sid: int) -> np.ndarray:
        return sigma[self.seg_index[sid]]

    def atom_content(self, sigma: np.ndarray) -> float:
        return float(self.mass @ sigma)

    def flux_balance_residual(self, sigma_new, sigma_old, dt_s, kappa_s) -> float:
        r = self.mass * (sigma_new - sigma_old) - dt_s * kappa_s * (self.K @ sigma_new + self.b)
        scale = np.max(np.abs(self.mass * sigma_new)) + np.max(np.abs(dt_s * kappa_s * self.b)) + 1e-300
        return float(np.max(np.abs(r)) / scale)


def time_grid(cfg: FdmConfig, targets: Iterable[float], t_end: float | None = None) -> np.ndarray:
    """Geometric step schedule that lands exactly on every target time."""
    t_end = t_end if t_end is not None else cfg.t_end
    targets = sorted({float(t) for t in targets if 0 < t <= t_end} | {float(t_end)})
    dt_max = cfg.dt_max or t_end / 100
    grid = [0.0]
    dt = cfg.dt0
    t = 0.0
    for target in targets:
        while t < target * (1 - 1e-14):
            step = min(dt, target - t)
            # avoid a sliver step right before a target
            if target - (t + step) < 0.05 * step:
                step = target - t
            t = target if step == target - t else t + step
            grid.append(t)
            dt = min(dt * cfg.growth, dt_max)
    return np.asarray(grid)


def _march(system: FdmSystem, temp: TemperatureModel, grid: np.ndarray, substeps: int,
           record: set[float], check: bool = False) -> dict[float, np.ndarray]:
    f = system.factors
    sigma = np.zeros(system.n)
    out = {}
    lu_cache = {}
    for t0, t1 in zip(grid[:-1], grid[1:]):
        h = (t1 - t0) / substeps
        for k in range(substeps):
            t_new = t0 + (k + 1) * h if k < substeps - 1 else t1
            dt_s = f.time(h)
            kap = system.kappa(t_new, temp)
            key = (round(dt_s * kap, 15),)
            lu = lu_cache.get(key)
            if lu is None:
                A = sparse.diags(system.mass) - (dt_s * kap) * system.K
                try:
                    lu = splu(A.tocsc())
                except RuntimeError as exc:
                    raise SingularSystem(str(exc)) from exc
                if temp.kind == "constant":
                    lu_cache = {key: lu}
            rhs = system.mass * sigma + dt_s * kap * system.b
            new = lu.solve(rhs)
            if not np.all(np.isfinite(new)):
                raise StepTooLarge(f"non-finite stress after step to t={t_new:g} s")
            if check and system.flux_balance_residual(new, sigma, dt_s, kap) > 1e-10:
                raise StepTooLarge(f"flux-balance residual too large at t={t_new:g} s")
            sigma = new
        if t1 in record:
            out[t1] = sigma.copy()
    return out


def fdm_states(tree: InterconnectTree, material: MaterialParams, temp: TemperatureModel,
               cfg: FdmConfig, times: Sequence[float],
               factors: ScalingFactors | None = None) -> tuple[FdmSystem, dict[float, np.ndarray]]:
    """Scaled nodal stress vectors at the requested times."""
    factors = factors or ScalingFactors()
    times = [float(t) for t in times]
    if any(t > cfg.t_end * (1 + 1e-12) for t in times):
        raise ValueError("probe time beyond t_end")
    system = FdmSystem(tree, material, cfg, factors)
    grid = time_grid(cfg, times)
    record = {float(g) for g in grid if any(abs(g - t) <= 1e-12 * t for t in times)}
    coarse = _march(system, temp, grid, 1, record)
    if cfg.richardson:
        fine = _march(system, temp, grid, 2, record)
        states = {t: 2 * fine[t] - coarse[t] for t in coarse}
    else:
        states = coarse
    by_request = {}
    for t in times:
        if t <= 0 or not states:
            by_request[t] = np.zeros(system.n)
        else:
            by_request[t] = states[min(states, key=lambda g: abs(g - t))]
    return system, by_request


def fdm_solve(tree: InterconnectTree, material: MaterialParams, temp: TemperatureModel,
              cfg: FdmConfig, probes: Probes, factors: ScalingFactors | None = None) -> StressField:
    factors = factors or ScalingFactors()
    system, states = fdm_states(tree, material, temp, cfg, probes.times, factors)
    seg, x, T = probes.expand(tree)
    sigma = np.empty(len(seg))
    for i, (sid, xm, t) in enumerate(zip(seg, x, T)):
        vals = system.segment_values(states[t], sid)
        L = tree.segments[sid].length_m
        grid = np.linspace(0.0, L, len(vals))
        sigma[i] = np.interp(xm, grid, vals)
    return StressField(seg, x, T, unscale_stress(sigma, factors), "oracle")


@dataclass
class ErrorReport:
    global_rel: float
    per_time: dict[float, float] = field(default_factory=dict)
    absolute: bool = False


def relative_error(pred: StressField, ref: StressField) -> ErrorReport:
    """||pred - ref||_2 / ||ref||_2 over matched samples, plus per time."""
    rk = {k: i for i, k in enumerate(ref.keys())}
    pk = pred.keys()
    if len(pk) != len(rk) or any(k not in rk for k in pk):
        raise KeyMismatch("prediction and reference samples do not match")
    order = np.array([rk[k] for k in pk])
    p = pred.sigma_Pa
    r = ref.sigma_Pa[order]
    t = ref.t_s[order]

    def ratio(mask):
        num = np.linalg.norm(p[mask] - r[mask])
        den = np.linalg.norm(r[mask])
        return (num / den, False) if den > 0 else (num, True)

    glob, absolute = ratio(np.ones(len(p), dtype=bool))
    per = {}
    for tv in np.unique(t):
        per[float(tv)] = ratio(t == tv)[0]
    if absolute:
        warnings.warn("reference field is identically zero; reporting absolute norm")
    return ErrorReport(float(glob), per, absolute)


def nucleation_time(max_stress: Callable[[float], float], sigma_crit: float,
                    probe_times: Sequence[float], rel_tol: float = 0.01) -> float | None:
    """First time the peak tensile stress reaches ``sigma_crit``.

    ``max_stress(t)`` returns max over the tree of sigma at time t.  The
    crossing is bracketed on ``probe_times`` and refined by bisection (in
    log time) to ``rel_tol``; None if never reached.
    """
    times = sorted(float(t) for t in probe_times if t > 0)
    vals = [max_stress(t) for t in times]
    if np.any(np.diff(vals) < -1e-9 * max(1.0, max(abs(v) for v in vals))):
        warnings.warn("peak stress is not monotone; using a dense scan", NonMonotoneWarning)
        dense = np.geomspace(times[0], times[-1], 1000)
        for t in dense:
            if max_stress(t) >= sigma_crit:
                return float(t)
        return None
    hit = next((i for i, v in enumerate(vals) if v >= sigma_crit), None)
    if hit is None:
        return None
    if hit == 0:
        lo, hi = 0.0, times[0]
    else:
        lo, hi = times[hit - 1], times[hit]
    while hi - lo > rel_tol * hi / 4:
        mid = math.sqrt(lo * hi) if lo > 0 else hi / 2
        if max_stress(mid) >= sigma_crit:
            hi = mid
        else:
            lo = mid
    return float(hi)
