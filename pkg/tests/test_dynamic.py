import math

import numpy as np
import pytest

from emstress import cases
from emstress.dynamic import EffectiveTimeMap, adaptive_simpson, dynamic_stress, effective_time
from emstress.geometry import node_contexts
from emstress.oracle import FdmConfig, Probes, fdm_solve, relative_error
from emstress.physics import MaterialParams, NonpositiveTemperature, ScalingFactors, TemperatureModel, diffusivity, \
    temperature
from emstress.trial import GradientSpec, TrialConfig, trial_eval

MAT = MaterialParams()
SINE = TemperatureModel.sinusoidal()


def test_adaptive_simpson_on_known_integrals():
    assert adaptive_simpson(math.sin, 0.0, math.pi, 1e-12) == pytest.approx(2.0, rel=1e-11)
    assert adaptive_simpson(math.exp, 0.0, 1.0, 1e-12) == pytest.approx(math.e - 1, rel=1e-11)
    assert adaptive_simpson(math.exp, 1.0, 1.0) == 0.0


def test_constant_temperature_is_identity():
    t = np.geomspace(1.0, 1e8, 50)
    out = effective_time(t, TemperatureModel.constant(), MAT)
    assert np.max(np.abs(out - t) / t) <= 1e-10


def test_constant_temperature_with_other_reference():
    # T' = t * kappa(T)/kappa0 when the reference differs from T
    kappa0 = diffusivity(330.0, MAT)
    tmap = EffectiveTimeMap(TemperatureModel.constant(350.0), MAT, kappa0=kappa0, t_max=1e6)
    ratio = diffusivity(350.0, MAT) / kappa0
    assert tmap(1e6) == pytest.approx(1e6 * ratio, rel=1e-10)


def trapezoid_oracle(t_end, n_panels=10 ** 6):
    grid = np.linspace(0.0, t_end, n_panels + 1)
    r = diffusivity(temperature(grid, SINE), MAT) / diffusivity(SINE.T0, MAT)
    return float(np.sum((r[1:] + r[:-1]) / 2) * (grid[1] - grid[0]))


def test_sinusoidal_matches_brute_force_quadrature():
    tmap = EffectiveTimeMap(SINE, MAT)
    assert tmap(1e8) == pytest.approx(trapezoid_oracle(1e8), rel=1e-6)


def test_map_is_strictly_increasing():
    tmap = EffectiveTimeMap(SINE, MAT)
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = np.sort(rng.uniform(0.0, 1e8, 2))
        assert tmap(b) > tmap(a)
    assert tmap(0.0) == 0.0


def test_map_beyond_table_and_caching():
    tmap = EffectiveTimeMap(SINE, MAT, t_max=1e7)
    far = tmap(3e7)
    assert far == pytest.approx(EffectiveTimeMap(SINE, MAT, t_max=3e7)(3e7), rel=1e-9)
    assert tmap(3e7) == far


def test_array_queries_match_scalar():
    tmap = EffectiveTimeMap(SINE, MAT)
    t = np.array([[1e5, 1e6], [1e7, 1e8]])
    out = tmap(t)
    assert out.shape == t.shape
    assert out[1, 0] == tmap(1e7)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        EffectiveTimeMap(SINE, MAT)(-1.0)


def test_nonpositive_temperature_rejected():
    with pytest.raises(NonpositiveTemperature):
        TemperatureModel.sinusoidal(T0=20.0, amplitude=30.0)


def test_tabulated_reference_is_first_entry():
    model = TemperatureModel(kind="tabulated", table=((0.0, 340.0), (1e8, 360.0)))
    tmap = EffectiveTimeMap(model, MAT)
    assert tmap.kappa0 == diffusivity(340.0, MAT)
    assert tmap(1e8) > 1e8


def test_dynamic_stress_equals_trial_eval_for_constant_temperature():
    f = ScalingFactors()
    _, segs = node_contexts(cases.two_segment_dynamic(), MAT, 350.0, f)
    seg = segs[0]
    grads = GradientSpec(-seg.G, 0.7 * seg.G, None, lambda tau: 0.1 * np.cos(np.asarray(tau)))
    tmap = EffectiveTimeMap(TemperatureModel.constant(), MAT)
    x = np.linspace(0.0, seg.L, 7)
    for t in (1e5, 1e7, 1e8):
        a = dynamic_stress(x, t, seg, grads, TrialConfig(), tmap, f.omega_t)
        b = trial_eval(x, f.time(t), seg, grads, TrialConfig())
        assert np.array_equal(a, b)


def test_transform_equivalence_in_oracle():
    tree = cases.blocked_wire(20e-6)
    times = list(np.geomspace(1e6, 1e8, 6))
    tmap = EffectiveTimeMap(SINE, MAT)
    mapped = [float(tmap(t)) for t in times]
    varying = fdm_solve(tree, MAT, SINE, FdmConfig(), Probes([(0, f) for f in np.linspace(0, 1, 11)], times))
    const = fdm_solve(tree, MAT, TemperatureModel.constant(SINE.T0), FdmConfig(t_end=max(mapped)),
                      Probes([(0, f) for f in np.linspace(0, 1, 11)], mapped))
    relabelled = type(const)(const.segment_id, const.x_m, np.repeat(times, 11), const.sigma_Pa)
    assert relative_error(relabelled, varying).global_rel <= 0.01
