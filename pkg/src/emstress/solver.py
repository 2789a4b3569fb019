"""Stress prediction from a trained network: trial functions on every
segment with boundary-gradient data supplied by J and H(F)."""

from __future__ import annotations

import numpy as np

from .dynamic import EffectiveTimeMap, reference_temperature
from .geometry import InterconnectTree, locate, node_contexts
from .neural import MlpModel, encode_inputs, forward
from .oracle import Probes, StressField
from .physics import MaterialParams, ScalingFactors, TemperatureModel, unscale_stress
from .trial import GradientSpec, TrialConfig, gauss_legendre, h_matrix, image_basis, \
    initial_gradient_J, trial_eval


class TrialSolver:
    """Evaluates the network-driven trial solution of one tree.

    Times passed in are wall-clock seconds; under a non-constant
    temperature they are mapped to effective time first.
    """

    def __init__(self, tree: InterconnectTree, model: MlpModel,
                 material: MaterialParams = MaterialParams(),
                 trial_cfg: TrialConfig = TrialConfig(),
                 factors: ScalingFactors = ScalingFactors(),
                 temperature_model: TemperatureModel | None = None):
        self.tree = tree
        self.model = model
        self.material = material
        self.trial_cfg = trial_cfg
        self.factors = factors
        self.mode = "parameterized" if model.n_in == 15 else "per_case"
        self.temperature_model = temperature_model or TemperatureModel.constant()
        self.ctxs, self.segs = node_contexts(tree, material, reference_temperature(self.temperature_model),
                                             factors)
        self._tmap = None
        if self.temperature_model.kind != "constant":
            self._tmap = EffectiveTimeMap(self.temperature_model, material)

    def scaled_time(self, t_s):
        t = np.asarray(t_s, dtype=float)
        if self._tmap is not None:
            t = self._tmap(t)
        return self.factors.time(t)

    def node_derivatives(self, node_id: int, tau) -> np.ndarray:
        """dk/dt for every incident segment at scaled times ``tau`` (n, M)."""
        ctx = self.ctxs[node_id]
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        if ctx.degree < 2:
            return np.zeros((tau.size, 1))
        out = forward(self.model, encode_inputs(ctx, tau.ravel(), self.mode))
        return out @ h_matrix(ctx, self.model.n_out).T

    def gradient_spec(self, segment_id: int) -> GradientSpec:
        """Boundary data of one segment in scaled units."""
        seg = self.segs[segment_id]

        def end(ctx, slot):
            if ctx.degree < 2:
                return None
            return lambda tau: self.node_derivatives(ctx.node_id, tau)[:, slot].reshape(np.shape(tau))

        return GradientSpec(initial_gradient_J(seg.ctx_prev)[seg.slot_prev],
                            initial_gradient_J(seg.ctx_next)[seg.slot_next],
                            end(seg.ctx_prev, seg.slot_prev), end(seg.ctx_next, seg.slot_next))

    def stress(self, segment_id: int, x_m, t_s):
        """Reference path: stress in Pa at local positions (m) and times (s)."""
        seg = self.segs[segment_id]
        x = self.factors.length(np.asarray(x_m, dtype=float))
        sig = trial_eval(x, self.scaled_time(t_s), seg, self.gradient_spec(segment_id), self.trial_cfg)
        return unscale_stress(sig, self.factors)

    def segment_grid(self, segment_id: int, x_m, t_s) -> np.ndarray:
        """Stress (Pa) on the tensor grid ``x_m`` x ``t_s`` -> (n_x, n_t)."""
        return self._grid({segment_id: np.asarray(x_m, dtype=float)}, np.asarray(t_s, dtype=float))[segment_id]

    def _grid(self, xs_by_seg: dict[int, np.ndarray], t_s: np.ndarray) -> dict[int, np.ndarray]:
        z, a = gauss_legendre(self.trial_cfg.n_gauss)
        t = np.atleast_1d(self.scaled_time(t_s))
        tau = t[:, None] * (1 + z[None, :]) / 2
        lag = t[:, None] * (1 - z[None, :]) / 2
        w = a[None, :] * t[:, None] / 2
        needed = set()
        for sid in xs_by_seg:
            seg = self.segs[sid]
            for ctx in (seg.ctx_prev, seg.ctx_next):
                if ctx.degree > 1:
                    needed.add(ctx.node_id)
        nodes = sorted(needed)
        deriv = {}
        if nodes:
            X = np.vstack([encode_inputs(self.ctxs[n], tau.ravel(), self.mode) for n in nodes])
            F = forward(self.model, X).reshape(len(nodes), t.size, z.size, -1)
            for i, n in enumerate(nodes):
                deriv[n] = F[i] @ h_matrix(self.ctxs[n], self.model.n_out).T
        nr = self.trial_cfg.n_reflections
        out = {}
        for sid, x_m in xs_by_seg.items():
            seg = self.segs[sid]
            x = self.factors.length(x_m)[:, None]
            Bm, Bp = image_basis(x, t[None, :], seg.L, seg.kappa, nr)
            sig = (-initial_gradient_J(seg.ctx_prev)[seg.slot_prev] * Bm
                   + initial_gradient_J(seg.ctx_next)[seg.slot_next] * Bp)
            Bm_j, Bp_j = image_basis(x[:, :, None], lag[None], seg.L, seg.kappa, nr)
            if seg.ctx_prev.degree > 1:
                sig = sig - np.sum(w * deriv[seg.ctx_prev.node_id][:, :, seg.slot_prev] * Bm_j, axis=2)
            if seg.ctx_next.degree > 1:
                sig = sig + np.sum(w * deriv[seg.ctx_next.node_id][:, :, seg.slot_next] * Bp_j, axis=2)
            out[sid] = unscale_stress(np.where(t[None, :] > 0, sig, 0.0), self.factors)
        return out

    def field(self, probes: Probes) -> StressField:
        """Stress at all probe points and times, ordered like the oracle output."""
        by_seg: dict[int, list[float]] = {}
        for sid, frac in probes.points:
            by_seg.setdefault(sid, []).append(locate(self.tree, sid, frac))
        times = np.asarray(probes.times, dtype=float)
        grids = self._grid({s: np.asarray(v) for s, v in by_seg.items()}, times)
        rows = np.array([grids[sid][by_seg[sid].index(locate(self.tree, sid, frac))]
                         for sid, frac in probes.points])
        seg, x, T = probes.expand(self.tree)
        # expand() is time-major, rows is point-major
        return StressField(seg, x, T, rows.T.ravel(), "trial")

    def junction_mismatch(self, t_s) -> float:
        """Largest stress jump (Pa) across any junction at the given times."""
        t_s = np.atleast_1d(np.asarray(t_s, dtype=float))
        worst = 0.0
        for nid, ctx in self.ctxs.items():
            if ctx.degree < 2:
                continue
            vals = [self.segment_grid(sid, [self.tree.segments[sid].length_m if s > 0 else 0.0], t_s)[0]
                    for sid, s in zip(ctx.segment_ids, ctx.signs[:ctx.degree])]
            vals = np.array(vals)
            worst = max(worst, float(np.max(vals.max(axis=0) - vals.min(axis=0))))
        return worst
