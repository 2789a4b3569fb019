"""Junction-continuity training of the gradient-derivative network.

The trial stress at a junction end is affine in the network outputs at
the quadrature-shifted times, so the continuity residuals of a fixed
training set are ``r = c + A @ F(X).ravel()`` with a sparse ``A``.  The
pair geometry is therefore assembled once and every loss evaluation costs
one batched forward pass (plus one backward pass for the gradient).
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np
from scipy import sparse

from .dynamic import EffectiveTimeMap, reference_temperature
from .geometry import InterconnectTree, RandomTreeSpec, SegmentContext, \
    generate_random_tree, node_contexts
from .neural import MlpModel, backward, encode_inputs, forward, forward_cached
from .physics import MaterialParams, ScalingFactors, TemperatureModel
from .trial import TrialConfig, gauss_legendre, h_matrix, image_basis, initial_gradient_J


# network outputs are multiplied by this fraction of max|G| / horizon;
# chosen from loss-reduction runs on the four-segment wire
OUTPUT_SCALE_FRACTION = 0.3


class NonFiniteLoss(FloatingPointError):
    pass


class LineSearchFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    n_c: int = 30
    t_steady: float = 1e8
    max_iters: int = 2000
    lbfgs_memory: int = 8
    c1: float = 1e-4
    c2: float = 0.9
    grad_tolerance: float = 1e-8
    loss_tolerance: float = 0.0
    rel_change_tol: float = 1e-10
    rel_change_window: int = 20
    learning_rate: float = 1e-3
    t_min_fraction: float = 1e-4
    seed: int = 0
    mode: str = "per_case"

    def __post_init__(self):
        if self.n_c < 1:
            raise ValueError("n_c must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("Wolfe constants need 0 < c1 < c2 < 1")
        if not 3 <= self.lbfgs_memory <= 20:
            raise ValueError("lbfgs_memory must be in [3, 20]")
        if self.mode not in ("per_case", "parameterized"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if not (self.t_steady > 0 and 0 < self.t_min_fraction < 1):
            raise ValueError("need t_steady > 0 and 0 < t_min_fraction < 1")

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainingConfig":
        return cls(**(data or {}))


@dataclass(frozen=True)
class ContinuityPair:
    """Stress at ``junction`` seen from two adjacent incident segments.

    ``x_a``/``x_b`` are local positions (0 or the segment length) and ``t``
    the sample time, in the units of the contexts the pair was built from.
    """

    junction: int
    seg_a: int
    seg_b: int
    x_a: float
    x_b: float
    t: float
    case: int = 0


@dataclass
class TrainReport:
    iterations: int
    final_loss: float
    initial_loss: float
    loss_history: list[float]
    grad_norms: list[float]
    wall_times: list[float]
    wall_time: float
    stop_reason: str
    n_evaluations: int
    n_pairs: int
    learning_rate: float

    def write_csv(self, path, header: dict | None = None):
        with open(path, "w", newline="") as fh:
            if header:
                fh.write("# " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "grad_norm", "wall_time_s"])
            for i, (f, g, s) in enumerate(zip(self.loss_history, self.grad_norms, self.wall_times)):
                w.writerow([i, repr(f), repr(g), f"{s:.6f}"])


def sample_times(cfg: TrainingConfig, horizon: float, rng: np.random.Generator) -> np.ndarray:
    """Stratified log-uniform times in [t_min_fraction * horizon, horizon].

    One draw per equal-width bin in log time, so no decade is left thin;
    the last one sits on the horizon so the end of the window is covered.
    """
    edges = np.linspace(math.log(cfg.t_min_fraction * horizon), math.log(horizon), cfg.n_c + 1)
    t = np.exp(edges[:-1] + rng.uniform(0.0, 1.0, cfg.n_c) * np.diff(edges))
    t[-1] = horizon
    return t


def build_training_set(contexts, cfg: TrainingConfig, horizon: float | None = None,
                       case: int = 0, rng: np.random.Generator | None = None) -> list[ContinuityPair]:
    """Chained adjacent-segment pairs at every junction times ``n_c`` times.

    ``contexts`` is the (node, segment) context pair from ``node_contexts``;
    ``horizon`` is the observation range in context time units.  One set
    of sample times is shared by all junctions of a tree.
    """
    ctxs, segs = contexts
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    times = sample_times(cfg, cfg.t_steady if horizon is None else horizon, rng)
    pairs = []
    for nid, ctx in ctxs.items():
        if ctx.degree < 2:
            continue
        for m in range(ctx.degree - 1):
            sa, sb = ctx.segment_ids[m], ctx.segment_ids[m + 1]
            xa = segs[sa].L if ctx.signs[m] > 0 else 0.0
            xb = segs[sb].L if ctx.signs[m + 1] > 0 else 0.0
            pairs.extend(ContinuityPair(nid, sa, sb, xa, xb, float(t), case) for t in times)
    return pairs


class ContinuityProblem:
    """Affine residual map for a fixed list of pairs over one or more trees.

    ``cases`` is a list of (node contexts, segment contexts); each pair's
    ``case`` field indexes it.
    """

    def __init__(self, pairs, cases, trial_cfg: TrialConfig = TrialConfig(), mode: str = "per_case"):
        self.pairs = list(pairs)
        self.cases = cases
        self.trial_cfg = trial_cfg
        self.mode = mode
        z, a = gauss_legendre(trial_cfg.n_gauss)
        self._z, self._a = np.asarray(z), np.asarray(a)
        self._blocks: dict[tuple, int] = {}
        self._block_keys: list[tuple] = []
        rows, cols, vals = [], [], []
        c = np.zeros(len(self.pairs))
        groups: dict[tuple, list[int]] = {}
        for p, pair in enumerate(self.pairs):
            key = (pair.case, pair.junction, pair.seg_a, pair.seg_b, pair.x_a, pair.x_b)
            groups.setdefault(key, []).append(p)
        for (case, _, sa, sb, xa, xb), idx in groups.items():
            idx = np.asarray(idx)
            ts = np.array([self.pairs[p].t for p in idx])
            for sign, sid, x in ((1.0, sa, xa), (-1.0, sb, xb)):
                const, terms = self._segment_terms(case, sid, x, ts)
                c[idx] += sign * const
                for node_id, coef in terms:
                    # coef: (n_t, N_g, 3)
                    for k, t in enumerate(ts):
                        b = self._block(case, node_id, t)
                        base = b * len(self._z) * 3
                        rows.append(np.full(coef[k].size, idx[k]))
                        cols.append(base + np.arange(coef[k].size))
                        vals.append(sign * coef[k].ravel())
        self.c = c
        n_cols = len(self._block_keys) * len(self._z) * 3
        if rows:
            self.A = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                       shape=(len(self.pairs), n_cols))
        else:
            self.A = sparse.csr_matrix((len(self.pairs), n_cols))
        self.X = self._inputs()

    def _block(self, case, node_id, t) -> int:
        key = (case, node_id, float(t))
        b = self._blocks.get(key)
        if b is None:
            b = self._blocks[key] = len(self._block_keys)
            self._block_keys.append(key)
        return b

    def _segment_terms(self, case: int, sid: int, x: float, ts: np.ndarray):
        """Constant part and per-end network coefficients of the trial
        stress of segment ``sid`` at local position ``x`` and times ``ts``."""
        ctxs, segs = self.cases[case]
        seg: SegmentContext = segs[sid]
        nr = self.trial_cfg.n_reflections
        Bm, Bp = image_basis(x, ts, seg.L, seg.kappa, nr)
        k_prev = initial_gradient_J(seg.ctx_prev)[seg.slot_prev]
        k_next = initial_gradient_J(seg.ctx_next)[seg.slot_next]
        const = -k_prev * Bm + k_next * Bp
        lag = ts[:, None] * (1 - self._z[None, :]) / 2
        Bm_j, Bp_j = image_basis(x, lag, seg.L, seg.kappa, nr)
        w = self._a[None, :] * ts[:, None] / 2
        terms = []
        for ctx, slot, basis, sgn in ((seg.ctx_prev, seg.slot_prev, Bm_j, -1.0),
                                      (seg.ctx_next, seg.slot_next, Bp_j, 1.0)):
            if ctx.degree < 2:
                continue
            h = h_matrix(ctx)[slot]
            terms.append((ctx.node_id, sgn * (w * basis)[:, :, None] * h[None, None, :]))
        return const, terms

    def _inputs(self) -> np.ndarray:
        n_in = 7 if self.mode == "per_case" else 15
        if not self._block_keys:
            return np.zeros((0, n_in))
        out = []
        for case, node_id, t in self._block_keys:
            ctx = self.cases[case][0][node_id]
            out.append(encode_inputs(ctx, t * (1 + self._z) / 2, self.mode))
        return np.vstack(out)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def residuals(self, model: MlpModel, params: np.ndarray | None = None) -> np.ndarray:
        if self.X.shape[0] == 0:
            return self.c.copy()
        return self.c + self.A @ forward(model, self.X, params).ravel()

    def loss(self, model: MlpModel, params: np.ndarray | None = None) -> float:
        r = self.residuals(model, params)
        val = float(r @ r)
        if not math.isfinite(val):
            raise NonFiniteLoss(f"loss is {val}; {np.sum(~np.isfinite(r))} non-finite residuals")
        return val

    def loss_and_grad(self, model: MlpModel, params: np.ndarray | None = None):
        p = model.params if params is None else params
        if self.X.shape[0] == 0:
            return float(self.c @ self.c), np.zeros_like(p)
        y, acts = forward_cached(model, self.X, p)
        r = self.c + self.A @ y.ravel()
        val = float(r @ r)
        if not math.isfinite(val):
            raise NonFiniteLoss(f"loss is {val}; {np.sum(~np.isfinite(r))} non-finite residuals")
        ct = (2.0 * (self.A.T @ r)).reshape(y.shape)
        g, _ = backward(model, self.X, ct, p, cache=acts)
        return val, g


def loss(model: MlpModel, pairs, contexts, trial_cfg: TrialConfig = TrialConfig()) -> float:
    if not pairs:
        return 0.0
    return ContinuityProblem(pairs, [contexts], trial_cfg, _mode_of(model)).loss(model)


def loss_gradient(model: MlpModel, pairs, contexts, trial_cfg: TrialConfig = TrialConfig()) -> np.ndarray:
    if not pairs:
        return np.zeros_like(model.params)
    return ContinuityProblem(pairs, [contexts], trial_cfg, _mode_of(model)).loss_and_grad(model)[1]


def _mode_of(model: MlpModel) -> str:
    return "parameterized" if model.n_in == 15 else "per_case"


# --------------------------------------------------------------------- L-BFGS

@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    history: list[float]
    grad_norms: list[float]
    times: list[float]
    stop_reason: str
    n_evals: int


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimiser of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    den = gb - ga + 2 * d2
    if den == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / den


def strong_wolfe(fg, x, f0, g0, d, alpha0, c1=1e-4, c2=0.9, max_iter=25, max_halvings=30):
    """Line search returning (alpha, f, g, n_evals) satisfying the strong
    Wolfe conditions, or a sufficient-decrease point if zoom stalls.

    Non-finite trial values halve the step; raises LineSearchFailed if no
    acceptable step is found.
    """
    dphi0 = float(g0 @ d)
    n_evals = 0
    halvings = 0

    def phi(alpha):
        nonlocal n_evals
        n_evals += 1
        try:
            f, g = fg(x + alpha * d)
        except NonFiniteLoss:
            return math.nan, None
        return f, g

    a_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    best = None

    def zoom(lo, f_lo, dphi_lo, g_lo, hi, f_hi, dphi_hi):
        nonlocal best
        for _ in range(30):
            a = _cubic_min(lo, f_lo, dphi_lo, hi, f_hi, dphi_hi)
            span = hi - lo
            if a is None or not (min(lo, hi) + 0.1 * abs(span) <= a <= max(lo, hi) - 0.1 * abs(span)):
                a = lo + span / 2
            fa, ga = phi(a)
            if not math.isfinite(fa):
                hi, f_hi, dphi_hi = a, math.inf, 0.0
                continue
            dphi_a = float(ga @ d)
            if fa > f0 + c1 * a * dphi0 or fa >= f_lo:
                hi, f_hi, dphi_hi = a, fa, dphi_a
            else:
                if abs(dphi_a) <= -c2 * dphi0:
                    return a, fa, ga
                if dphi_a * (hi - lo) >= 0:
                    hi, f_hi, dphi_hi = lo, f_lo, dphi_lo
                lo, f_lo, dphi_lo, g_lo = a, fa, dphi_a, ga
            if abs(hi - lo) < 1e-16 * max(1.0, abs(lo)):
                break
        if lo > 0 and f_lo < f0:
            return lo, f_lo, g_lo
        raise LineSearchFailed("zoom did not find an acceptable step")

    g_prev = g0
    for i in range(max_iter):
        fa, ga = phi(alpha)
        if not math.isfinite(fa):
            halvings += 1
            if halvings > max_halvings:
                raise LineSearchFailed("non-finite loss after repeated step halving")
            alpha = a_prev + (alpha - a_prev) / 2
            continue
        dphi_a = float(ga @ d)
        if fa > f0 + c1 * alpha * dphi0 or (i > 0 and fa >= f_prev):
            return (*zoom(a_prev, f_prev, dphi_prev, g_prev, alpha, fa, dphi_a), n_evals)
        if abs(dphi_a) <= -c2 * dphi0:
            return alpha, fa, ga, n_evals
        if dphi_a >= 0:
            return (*zoom(alpha, fa, dphi_a, ga, a_prev, f_prev, dphi_prev), n_evals)
        best = (alpha, fa, ga)
        a_next = _cubic_min(a_prev, f_prev, dphi_prev, alpha, fa, dphi_a)
        lo, hi = alpha + 1.1 * (alpha - a_prev), alpha + 10 * (alpha - a_prev)
        if a_next is None or not lo <= a_next <= hi:
            a_next = alpha + 2 * (alpha - a_prev)
        a_prev, f_prev, dphi_prev, g_prev = alpha, fa, dphi_a, ga
        alpha = a_next
    if best is not None:
        return (*best, n_evals)
    raise LineSearchFailed("no acceptable step within the iteration budget")


def lbfgs(fg, x0: np.ndarray, cfg: TrainingConfig, callback=None) -> LbfgsResult:
    """Limited-memory BFGS with the two-loop recursion and strong-Wolfe steps."""
    t_start = time.perf_counter()
    x = x0.copy()
    f, g = fg(x)
    n_evals = 1
    history, gnorms, times = [f], [float(np.max(np.abs(g)))], [0.0]
    S, Y, RHO = [], [], []
    reason = "max_iters"
    for it in range(cfg.max_iters):
        if gnorms[-1] < cfg.grad_tolerance or f <= cfg.loss_tolerance:
            reason = "converged"
            break
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(RHO)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y, rho), a in zip(zip(S, Y, RHO), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if g @ d >= 0:
            S, Y, RHO = [], [], []
            d = -g
        alpha0 = 1.0 if S else cfg.learning_rate * min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))
        try:
            alpha, f_new, g_new, ne = strong_wolfe(fg, x, f, g, d, alpha0, cfg.c1, cfg.c2)
        except LineSearchFailed:
            if S:
                S, Y, RHO = [], [], []
                continue
            reason = "line_search_failed"
            break
        n_evals += ne
        if f_new > f:
            raise AssertionError("accepted step increased the loss")
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
            S.append(s)
            Y.append(y)
            RHO.append(1.0 / sy)
            if len(S) > cfg.lbfgs_memory:
                S.pop(0), Y.pop(0), RHO.pop(0)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
        gnorms.append(float(np.max(np.abs(g))))
        times.append(time.perf_counter() - t_start)
        if callback is not None:
            callback(it, f)
        w = cfg.rel_change_window
        if len(history) > w and history[-w - 1] - f <= cfg.rel_change_tol * max(abs(f), 1e-300):
            reason = "converged"
            break
    return LbfgsResult(x, f, history, gnorms, times, reason, n_evals)


# ------------------------------------------------------------------- training

def fit_normalization(model: MlpModel, X: np.ndarray, output_scale: float) -> None:
    """Fix the input shift/scale to the training-input statistics and the
    output scale to the expected derivative magnitude."""
    if X.shape[0] == 0:
        return
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    tiny = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    model.input_shift = mean
    model.input_scale = np.where(tiny, 1.0, std)
    model.output_scale = np.full(model.n_out, output_scale if output_scale > 0 else 1.0)
    model.meta["normalized"] = True


def training_horizon(cfg: TrainingConfig, temperature_model: TemperatureModel | None,
                     material: MaterialParams, factors: ScalingFactors) -> float:
    """Observation range in scaled (effective) time."""
    if temperature_model is None or temperature_model.kind == "constant":
        return factors.time(cfg.t_steady)
    tmap = EffectiveTimeMap(temperature_model, material, t_max=cfg.t_steady)
    return factors.time(tmap(cfg.t_steady))


def _reference_T(temperature_model: TemperatureModel | None) -> float:
    return 350.0 if temperature_model is None else reference_temperature(temperature_model)


def _run(model: MlpModel, problem: ContinuityProblem, cfg: TrainingConfig, horizon: float):
    if problem.n_pairs == 0:
        return model, TrainReport(0, 0.0, 0.0, [0.0], [0.0], [0.0], 0.0, "converged", 0, 0,
                                  cfg.learning_rate)
    if not model.meta.get("normalized"):
        gmax = max(float(np.max(np.abs(ctx.adj_G))) for ctxs, _ in problem.cases
                   for ctx in ctxs.values())
        fit_normalization(model, problem.X, OUTPUT_SCALE_FRACTION * gmax / horizon)
    t0 = time.perf_counter()
    res = lbfgs(lambda p: problem.loss_and_grad(model, p), model.params, cfg)
    model.params = res.x
    wall = time.perf_counter() - t0
    return model, TrainReport(len(res.history) - 1, res.f, res.history[0], res.history,
                              res.grad_norms, res.times, wall, res.stop_reason, res.n_evals,
                              problem.n_pairs, cfg.learning_rate)


def train(model: MlpModel, tree: InterconnectTree, material: MaterialParams = MaterialParams(),
          trial_cfg: TrialConfig = TrialConfig(), cfg: TrainingConfig = TrainingConfig(),
          factors: ScalingFactors = ScalingFactors(),
          temperature_model: TemperatureModel | None = None):
    """Fit ``model`` (in place) to one tree; returns (model, TrainReport)."""
    contexts = node_contexts(tree, material, _reference_T(temperature_model), factors)
    horizon = training_horizon(cfg, temperature_model, material, factors)
    pairs = build_training_set(contexts, cfg, horizon)
    problem = ContinuityProblem(pairs, [contexts], trial_cfg, cfg.mode)
    model.meta.update(training_meta(material, trial_cfg, cfg, factors, temperature_model))
    return _run(model, problem, cfg, horizon)


def train_parameterized(model: MlpModel, spec: RandomTreeSpec, n_cases: int,
                        material: MaterialParams = MaterialParams(),
                        trial_cfg: TrialConfig = TrialConfig(),
                        cfg: TrainingConfig = TrainingConfig(mode="parameterized"),
                        factors: ScalingFactors = ScalingFactors()):
    """Batched label-free training over ``n_cases`` random trees drawn from
    ``spec`` (case i uses seed ``spec.seed + i``)."""
    if cfg.mode != "parameterized":
        cfg = replace(cfg, mode="parameterized")
    horizon = factors.time(cfg.t_steady)
    rng = np.random.default_rng(cfg.seed)
    cases, pairs = [], []
    for i in range(n_cases):
        tree = generate_random_tree(replace(spec, seed=spec.seed + i))
        contexts = node_contexts(tree, material, 350.0, factors)
        cases.append(contexts)
        pairs.extend(build_training_set(contexts, cfg, horizon, case=i, rng=rng))
    problem = ContinuityProblem(pairs, cases, trial_cfg, "parameterized")
    model.meta.update(training_meta(material, trial_cfg, cfg, factors, None))
    return _run(model, problem, cfg, horizon)


def training_meta(material, trial_cfg, cfg, factors, temperature_model) -> dict:
    return {"scaling": factors.to_dict(), "trial": asdict(trial_cfg), "training": asdict(cfg),
            "material": asdict(material),
            "temperature": None if temperature_model is None else temperature_model.to_dict()}


__all__ = ["TrainingConfig", "ContinuityPair", "TrainReport", "ContinuityProblem", "NonFiniteLoss",
           "LineSearchFailed", "build_training_set", "loss", "loss_gradient", "lbfgs", "strong_wolfe",
           "train", "train_parameterized", "fit_normalization", "training_horizon"]
