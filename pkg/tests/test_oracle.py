import warnings

import numpy as np
import pytest

from analytic import fourier_blocked
from emstress import cases
from emstress.geometry import chain_tree
from emstress.oracle import (FdmConfig, FdmSystem, KeyMismatch, NonMonotoneWarning, Probes, StressField,
                             _march, fdm_solve, fdm_states, nucleation_time, relative_error, time_grid)
from emstress.physics import MaterialParams, ScalingFactors, TemperatureModel, diffusivity, em_driving_force
from emstress.solver import TrialSolver
from emstress.neural import MlpModel, default_architecture, param_count

MAT = MaterialParams()
CONST = TemperatureModel.constant()
L = 10e-6
G = em_driving_force(4e9, MAT)
KAPPA = diffusivity(350.0, MAT)


def blocked_probes(times):
    return Probes([(0, f) for f in np.linspace(0, 1, 11)], list(times))


def test_zero_current_gives_zero_stress():
    tree = chain_tree([10e-6, 20e-6, 5e-6], [0.0, 0.0, 0.0])
    f = fdm_solve(tree, MAT, CONST, FdmConfig(), Probes.default(tree))
    assert np.all(f.sigma_Pa == 0.0)


def test_blocked_wire_reaches_linear_profile():
    pr = blocked_probes([1e8])
    f = fdm_solve(cases.blocked_wire(), MAT, CONST, FdmConfig(), pr)
    exact = G * (L / 2 - f.x_m)
    assert np.max(np.abs(f.sigma_Pa - exact)) <= 1e-3 * G * L / 2


def test_blocked_wire_matches_series_in_transient():
    pr = blocked_probes([1e5, 1e6, 1e7])
    f = fdm_solve(cases.blocked_wire(), MAT, CONST, FdmConfig(dx_target=L / 200), pr)
    ref = fourier_blocked(f.x_m, f.t_s, L, G, KAPPA)
    assert np.max(np.abs(f.sigma_Pa - ref)) <= 5e-3 * G * L / 2


def test_refinement_reduces_error():
    pr = blocked_probes([1e6, 1e7])
    errors = []
    for k in range(4):
        dx, dt = L / 10 / 2 ** k, 4000.0 / 2 ** k
        cfg = FdmConfig(dx_target=dx, dt0=dt, dt_max=100 * dt, t_end=1e7, richardson=False)
        f = fdm_solve(cases.blocked_wire(), MAT, CONST, cfg, pr)
        errors.append(np.max(np.abs(f.sigma_Pa - fourier_blocked(f.x_m, f.t_s, L, G, KAPPA))))
    assert errors[0] >= 2 * errors[1]
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_atom_content_conserved_on_blocked_tree():
    tree = cases.cross(mixed_width=True)
    times = [1e4, 1e5, 1e6, 1e7, 1e8]
    system, states = fdm_states(tree, MAT, CONST, FdmConfig(), times)
    for t in times:
        s = states[t]
        assert abs(system.atom_content(s)) <= 1e-3 * float(system.mass @ np.abs(s))


def test_flux_balance_residual_per_step():
    tree = cases.cross()
    cfg = FdmConfig(t_end=1e6)
    system = FdmSystem(tree, MAT, cfg, ScalingFactors())
    # raises StepTooLarge if any step's residual exceeds 1e-10
    _march(system, CONST, time_grid(cfg, [1e6]), 1, {1e6}, check=True)


def test_junction_values_are_shared():
    tree = cases.four_segment()
    system, states = fdm_states(tree, MAT, CONST, FdmConfig(), [1e6])
    s = states[1e6]
    for a, b in zip(tree.segments, tree.segments[1:]):
        assert system.segment_values(s, a.id)[-1] == system.segment_values(s, b.id)[0]


def test_time_grid_hits_targets():
    cfg = FdmConfig()
    targets = [1e5, 3.3e6, 1e8]
    grid = time_grid(cfg, targets)
    assert grid[0] == 0.0 and np.all(np.diff(grid) > 0)
    for t in targets:
        assert t in grid


def test_probe_at_time_zero_is_zero():
    f = fdm_solve(cases.four_segment(), MAT, CONST, FdmConfig(), Probes.default(cases.four_segment(), [0.0, 1e6]))
    assert np.all(f.at_time(0.0).sigma_Pa == 0.0)
    assert np.any(f.at_time(1e6).sigma_Pa != 0.0)


def test_probe_beyond_horizon_rejected():
    with pytest.raises(ValueError):
        fdm_solve(cases.blocked_wire(), MAT, CONST, FdmConfig(t_end=1e6), blocked_probes([2e6]))


def test_fdm_is_deterministic():
    pr = Probes.default(cases.cross())
    a = fdm_solve(cases.cross(), MAT, CONST, FdmConfig(), pr)
    b = fdm_solve(cases.cross(), MAT, CONST, FdmConfig(), pr)
    assert np.array_equal(a.sigma_Pa, b.sigma_Pa)


def test_csv_round_trip(tmp_path):
    pr = Probes.default(cases.four_segment(), [1e5, 1e7])
    f = fdm_solve(cases.four_segment(), MAT, CONST, FdmConfig(), pr)
    path = tmp_path / "field.csv"
    f.write_csv(path, {"seed": 0, "config": "abc"})
    text = path.read_text().splitlines()
    assert text[0] == "# seed=0, config=abc"
    assert text[1] == "segment_id,x_m,t_s,sigma_Pa,source"
    g = StressField.read_csv(path)
    assert g.source == "oracle"
    for name in ("segment_id", "x_m", "t_s", "sigma_Pa"):
        assert np.array_equal(getattr(f, name), getattr(g, name))


def test_relative_error_basics():
    pr = Probes.default(cases.four_segment(), [1e6, 1e7])
    ref = fdm_solve(cases.four_segment(), MAT, CONST, FdmConfig(), pr)
    assert relative_error(ref, ref).global_rel == 0.0
    scaled = StressField(ref.segment_id, ref.x_m, ref.t_s, 1.01 * ref.sigma_Pa, "trial")
    rep = relative_error(scaled, ref)
    assert rep.global_rel == pytest.approx(0.01, rel=1e-12)
    assert set(rep.per_time) == {1e6, 1e7}
    assert all(v == pytest.approx(0.01, rel=1e-12) for v in rep.per_time.values())


def test_relative_error_ignores_sample_order():
    pr = Probes.default(cases.cross(), [1e6])
    ref = fdm_solve(cases.cross(), MAT, CONST, FdmConfig(), pr)
    perm = np.random.default_rng(0).permutation(len(ref))
    shuffled = StressField(ref.segment_id[perm], ref.x_m[perm], ref.t_s[perm], 1.02 * ref.sigma_Pa[perm])
    assert relative_error(shuffled, ref).global_rel == pytest.approx(0.02, rel=1e-12)


def test_relative_error_key_mismatch():
    a = StressField([0, 0], [0.0, 1e-6], [1e5, 1e5], [1.0, 2.0])
    b = StressField([0, 1], [0.0, 1e-6], [1e5, 1e5], [1.0, 2.0])
    with pytest.raises(KeyMismatch):
        relative_error(a, b)
    with pytest.raises(KeyMismatch):
        relative_error(a, StressField([0], [0.0], [1e5], [1.0]))


def test_relative_error_zero_reference_is_flagged():
    a = StressField([0], [0.0], [1e5], [3.0])
    z = StressField([0], [0.0], [1e5], [0.0])
    with pytest.warns(UserWarning):
        rep = relative_error(a, z)
    assert rep.absolute and rep.global_rel == 3.0


def test_non_finite_field_rejected():
    with pytest.raises(ValueError):
        StressField([0], [0.0], [1.0], [np.nan])


def series_peak(length):
    g = em_driving_force(4e9, MAT)
    return lambda t: float(fourier_blocked(0.0, t, length, g, KAPPA)[0])


def test_nucleation_never_reached():
    peak = series_peak(L)
    assert nucleation_time(peak, 10 * G * L / 2, np.geomspace(1e4, 1e8, 10)) is None


def test_nucleation_bisection_matches_dense_scan():
    sigma_crit = 4e8
    length = 4 * sigma_crit / G  # G L / 2 = 2 sigma_crit
    peak = series_peak(length)
    probe_t = np.geomspace(1e3, 1e10, 10)
    t_nuc = nucleation_time(peak, sigma_crit, probe_t)
    dense = np.geomspace(probe_t[0], probe_t[-1], 1000)
    scan = next(t for t in dense if peak(t) >= sigma_crit)
    assert t_nuc == pytest.approx(scan, rel=0.01)
    assert peak(t_nuc) >= sigma_crit * (1 - 0.01)


def test_nucleation_monotone_in_threshold():
    peak = series_peak(40e-6)
    probe_t = np.geomspace(1e3, 1e10, 10)
    last = 0.0
    for s in (5e7, 1e8, 2e8, 3e8):
        t = nucleation_time(peak, s, probe_t)
        assert t is not None and t >= last
        last = t


def test_nucleation_non_monotone_falls_back_to_scan():
    def bumpy(t):
        return 1.0 if 1e5 < t < 2e5 else (0.0 if t < 1e6 else 2.0)

    with pytest.warns(NonMonotoneWarning):
        t = nucleation_time(bumpy, 1.5, [1e4, 1.5e5, 5e5, 1e7])
    assert 1e6 <= t <= 1.02e6


def test_untrained_trial_matches_oracle_on_blocked_wire():
    tree = cases.blocked_wire()
    arch = default_architecture()
    solver = TrialSolver(tree, MlpModel(arch, np.zeros(param_count(arch))))
    times = np.geomspace(1e5, 1e8, 10)
    pr = blocked_probes(times)
    ref = fdm_solve(tree, MAT, CONST, FdmConfig(dx_target=L / 200, dt0=10.0, growth=1.2), pr)
    assert relative_error(solver.field(pr), ref).global_rel <= 5e-3


def test_scaling_factors_do_not_change_unscaled_field():
    tree = chain_tree([20e-6, 30e-6], [4e9, -1e10])
    pr = Probes.default(tree, [1e5, 1e6, 1e7])
    a = fdm_solve(tree, MAT, CONST, FdmConfig(), pr, ScalingFactors())
    b = fdm_solve(tree, MAT, CONST, FdmConfig(), pr, ScalingFactors(omega_x=3e-6, omega_t=2e-8, omega_sigma=1e-9))
    assert np.max(np.abs(a.sigma_Pa - b.sigma_Pa)) <= 1e-10 * np.max(np.abs(a.sigma_Pa))
