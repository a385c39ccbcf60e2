import math

import numpy as np
import pytest

import iterlog
from iterlog._csf import (
    PHI_CONSTANT,
    ansatz_functions,
    coupling_matrix,
    phi,
)

PUNCTURE_VALUES = (0.5, -0.4, -0.3, 0.2, -0.1)


@pytest.fixture
def five_punctures():
    return iterlog.build_cylinder(5.0, [0.0, 1.0, 2.0, 3.0, 4.0])


@pytest.mark.parametrize(
    ["args", "kwargs", "match"],
    [
        ((0.0, []), {}, "circumference"),
        ((1.0, []), {"rho": "cubic"}, "unknown density"),
        ((1.0, []), {"boundary": "neumann"}, "unknown boundary"),
        ((5.0, [1.0, 1.0]), {}, "distinct and sorted"),
        ((5.0, [1.0, 5.0]), {}, "must lie in \\[0, L\\)"),
        ((5.0, [1.0, 2.0]), {"boundary": "dirichlet"}, "interior puncture"),
    ],
)
def test_build_cylinder_validation(args, kwargs, match):
    with pytest.raises(iterlog.DomainError, match=match):
        iterlog.build_cylinder(*args, **kwargs)


def test_cylinder_geometry(five_punctures):
    cfg = five_punctures
    assert cfg.masses == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert cfg.reduced_punctures == (1, 2, 3, 4, 0)
    assert cfg.distance(np.array([4.5, 0.25]), 0.0) == pytest.approx([0.5, 0.25])

    pinned = iterlog.build_cylinder(3.0, [0.0, 1.0, 2.0], boundary="dirichlet")
    assert pinned.masses == (1.0, 1.0)
    assert pinned.reduced_punctures == (1,)


def test_density_vanishes_quadratically_at_punctures(five_punctures):
    cfg = five_punctures
    assert float(cfg.density(np.array(2.0), np.array(0.0))) == 0.0
    for d in (1e-2, 1e-3):
        value = float(cfg.density(np.array(2.0 + d), np.array(0.0)))
        assert value / d**2 == pytest.approx(1.0, rel=10 * d**2)
    assert float(cfg.density(np.array(2.0), np.array(0.3))) > 0


def test_density_derivative_matches_finite_differences(five_punctures):
    cfg = five_punctures
    x = np.linspace(0.1, 4.9, 7)
    y = 0.2
    h = 1e-6
    numeric = (cfg.density(x, np.full_like(x, y + h)) - cfg.density(x, np.full_like(x, y - h))) / (2 * h)
    assert cfg.density_dy(x, np.full_like(x, y)) == pytest.approx(numeric, rel=1e-5)


def test_grid_contains_the_punctures(five_punctures):
    g = iterlog.grid(five_punctures)
    assert [g.nodes[i] for i in g.punctures] == [0.0, 1.0, 2.0, 3.0, 4.0]
    assert np.all(np.diff(g.nodes) > 0)
    assert g.nodes[-1] < 5.0
    left, right = g.spacing()
    assert 2.5e-4 < np.min(right) <= 5e-4 + 1e-12
    assert np.max(right) <= 2 * 5.0 / 200


def test_second_difference_on_a_uniform_circle():
    cfg = iterlog.build_cylinder(2 * math.pi, [], rho="constant")
    g = iterlog.grid(cfg, uniform=400)
    d2 = g.second_difference()
    assert d2 @ np.sin(g.nodes) == pytest.approx(-np.sin(g.nodes), abs=1e-4)


def test_pinned_second_difference_has_empty_end_rows():
    cfg = iterlog.build_cylinder(3.0, [0.0, 1.0, 2.0], boundary="dirichlet")
    g = iterlog.grid(cfg)
    d2 = g.second_difference().toarray()
    assert not d2[0].any()
    assert not d2[-1].any()
    assert g.nodes[-1] == 2.0


def test_heat_equation_decay():
    cfg = iterlog.build_cylinder(2 * math.pi, [], rho="constant")
    g = iterlog.grid(cfg, uniform=400)
    f0 = iterlog.initial_curve(cfg, g, fourier=[(1, 1.0, 0.0)])
    traj = iterlog.integrate_pde(cfg, f0, 1.0, t_eval=[0.5, 1.0])
    assert traj.event is None
    for t, values in zip(traj.times[1:], traj.values[1:]):
        assert np.max(values) == pytest.approx(math.exp(-t), rel=0.02)


def test_initial_curve_through_puncture_values(five_punctures):
    cfg = five_punctures
    g = iterlog.grid(cfg)
    state = iterlog.initial_curve(cfg, g, puncture_values=PUNCTURE_VALUES)
    assert state.signs() == (1, -1, -1, 1, -1)
    assert [state.values[i] for i in g.punctures] == pytest.approx(PUNCTURE_VALUES)

    with pytest.raises(iterlog.DomainError, match="passes through a puncture"):
        iterlog.initial_curve(cfg, g, puncture_values=(0.5, 0.0, -0.3, 0.2, -0.1))
    with pytest.raises(iterlog.DomainError, match="one height per puncture"):
        iterlog.initial_curve(cfg, g, puncture_values=(0.5, -0.1))


def test_extract_y_follows_reduced_order(five_punctures):
    cfg = five_punctures
    g = iterlog.grid(cfg)
    f0 = iterlog.initial_curve(cfg, g, puncture_values=PUNCTURE_VALUES)
    traj = iterlog.integrate_pde(cfg, f0, 1e-3, t_eval=[1e-3])
    series = iterlog.extract_y(traj, cfg)
    order = list(cfg.reduced_punctures)
    assert series.signs == (-1, -1, 1, -1, 1)
    assert series.y[0] == pytest.approx(np.abs(np.array(PUNCTURE_VALUES)[order]) / math.pi)
    assert series.times[-1] == 1e-3
    assert np.all(series.y[-1] > 0)


@pytest.mark.parametrize("shift", [0.02, 0.05])
def test_ordered_curves_stay_ordered(five_punctures, shift):
    cfg = five_punctures
    g = iterlog.grid(cfg)
    lower = iterlog.initial_curve(cfg, g, puncture_values=PUNCTURE_VALUES)
    upper = iterlog.initial_curve(
        cfg, g, puncture_values=tuple(v + shift for v in PUNCTURE_VALUES)
    )
    assert np.all(upper.values - lower.values >= -1e-12)

    t_eval = [0.01, 0.05, 0.1, 0.2]
    f = iterlog.integrate_pde(cfg, lower, 0.2, t_eval=t_eval)
    h = iterlog.integrate_pde(cfg, upper, 0.2, t_eval=t_eval)
    assert f.event is None and h.event is None
    assert list(f.times) == list(h.times)
    for below, above in zip(f.values, h.values):
        assert np.min(above - below) >= -1e-8


def test_pde_sample_times_must_be_positive(five_punctures):
    cfg = five_punctures
    g = iterlog.grid(cfg)
    f0 = iterlog.initial_curve(cfg, g, puncture_values=PUNCTURE_VALUES)
    with pytest.raises(iterlog.DomainError, match="sample times"):
        iterlog.integrate_pde(cfg, f0, 1.0, t_eval=[0.0, 1.0])


def test_coupling_matrix_of_the_middle_cycle(middle_cycle):
    m = coupling_matrix(middle_cycle)
    expected = np.array(
        [
            [-2, -1, 0, 0, -1],
            [-1, -2, 1, 0, 0],
            [0, 1, -2, -1, 0],
            [0, 0, -1, -2, -1],
            [-1, 0, 0, -1, -2],
        ],
        dtype=float,
    )
    assert np.array_equal(m, expected)


def test_coupling_matrix_of_a_pinned_path():
    graph = iterlog.OrientedCycleGraph((1, 1, 1), (1, -1), periodic=False)
    assert np.array_equal(coupling_matrix(graph), [[-2.0, -1.0], [-1.0, -2.0]])


def test_ode_is_autonomous_in_log_time(middle_cycle):
    y0 = np.full(5, 0.1)
    t_eval = np.array([2.0, 10.0, 100.0])
    base = iterlog.integrate_ode(middle_cycle, y0, 100.0, 1.0, t_eval=t_eval)
    c = 3.0
    shifted = iterlog.integrate_ode(middle_cycle, y0 / c, c * 100.0, c, t_eval=c * t_eval)
    assert shifted.v == pytest.approx(base.v, abs=1e-7)
    assert shifted.t == pytest.approx(c * t_eval)


@pytest.mark.parametrize(
    ["y0", "t_end", "t0", "match"],
    [
        ((0.1, 0.1, -0.1, 0.1, 0.1), 10.0, 1.0, "positive"),
        ((0.1, 0.1, 0.1, 0.1), 10.0, 1.0, "one per puncture"),
        ((0.1,) * 5, 1.0, 1.0, "0 < t0 < t_end"),
    ],
)
def test_integrate_ode_validation(middle_cycle, y0, t_end, t0, match):
    with pytest.raises(iterlog.DomainError, match=match):
        iterlog.integrate_ode(middle_cycle, y0, t_end, t0)


@pytest.mark.parametrize(
    ["masses", "rates"],
    [
        ((1, 1, 1, 1, 1), (-0.5, 0.0, 0.0, -0.5, 0.0)),
        ((4, 2, 1, 1, 1), (0.0, 0.0, 0.0, -1.0, 0.0)),
    ],
)
def test_chamber_rates(masses, rates):
    assert iterlog.chamber_rates(iterlog.five_cycle(masses)) == pytest.approx(rates)


def test_slopes_approach_chamber_rates(middle_cycle):
    t_eval = np.exp(np.linspace(1.0, 30.0, 30))
    traj = iterlog.integrate_ode(middle_cycle, np.full(5, 0.1), float(t_eval[-1]), t_eval=t_eval)
    rates = iterlog.chamber_rates(middle_cycle)
    assert traj.slopes()[-1] == pytest.approx(rates, abs=0.05)


def test_fixed_point_of_the_middle_chamber(middle_cycle):
    fp = iterlog.fixed_point(middle_cycle)
    assert fp.tight == (1, 2, 4)
    assert np.isneginf(fp.v[0]) and np.isneginf(fp.v[3])
    assert fp.v[[1, 2, 4]] == pytest.approx([0.0, 0.0, math.log(0.5)])
    assert fp.residual < 1e-12


def test_fixed_point_of_a_degenerate_two_cycle():
    graph = iterlog.OrientedCycleGraph((1, 1), (1, -1))
    fp = iterlog.fixed_point(graph)
    assert fp.tight == (0, 1)
    assert fp.v == pytest.approx([-math.log(4)] * 2)


def test_phi():
    x = np.array([-3.0, -0.5, 0.0, 0.7, 2.0])
    assert phi(np.array(0.0)) == 0.0
    h = 1e-4
    second = (phi(x + h) - 2 * phi(x) + phi(x - h)) / h**2
    assert second == pytest.approx(1 / (1 + x**2), rel=1e-5)

    big = np.array([1e4, -1e4])
    tail = phi(big) - math.pi * np.abs(big) / 2 + np.log(np.abs(big))
    assert tail == pytest.approx([PHI_CONSTANT] * 2, abs=1e-6)


def test_ansatz_segment_equation(five_punctures):
    cfg = five_punctures
    ansatz = ansatz_functions(1, cfg)
    assert (ansatz.start, ansatz.end) == (1.0, 2.0)
    x = np.linspace(1.2, 1.8, 7)
    h = 1e-3
    second = (ansatz.chi(x + h) - 2 * ansatz.chi(x) + ansatz.chi(x - h)) / h**2
    rho = cfg.density(x, np.zeros_like(x))
    assert rho * second == pytest.approx(x - ansatz.start, rel=1e-3)
    # Logarithmic singularity at the far end, regular at the near end.
    d = 1e-4
    assert abs(float(ansatz.chi(np.array(ansatz.end - d))) + math.log(d)) < 5e-3
    assert abs(float(ansatz.psi(np.array(ansatz.end - d)))) < 5e-3


def test_ansatz_functions_need_a_quadratic_density(five_punctures):
    with pytest.raises(iterlog.DomainError, match="quadratic"):
        ansatz_functions(0, iterlog.build_cylinder(1.0, [], rho="constant"))
    with pytest.raises(iterlog.DomainError, match="no segment 7"):
        ansatz_functions(7, five_punctures)


def test_compare_needs_two_punctures():
    cfg = iterlog.build_cylinder(2.0, [0.0])
    g = iterlog.grid(cfg)
    f0 = iterlog.initial_curve(cfg, g, fourier=[(0, 0.5, 0.0)])
    with pytest.raises(iterlog.DomainError, match="at least two punctures"):
        iterlog.compare_pde_ode(cfg, f0, 1.0)


@pytest.mark.slow
def test_pde_heights_track_the_reduced_system():
    cfg = iterlog.build_cylinder(5.0, [0.0, 1.0, 2.2, 2.8, 4.0])
    g = iterlog.grid(cfg, ratio=1.1, h_min=5e-4)
    f0 = iterlog.initial_curve(cfg, g, puncture_values=(-0.5, 0.5, -0.5, -0.5, 0.5))
    report = iterlog.compare_pde_ode(cfg, f0, 1000.0)
    assert report.bounded
    assert report.handoff < 1000.0
    assert report.pde.shape == report.ode.shape


@pytest.mark.slow
def test_ansatz_fit_on_a_pde_run(five_punctures):
    cfg = five_punctures
    g = iterlog.grid(cfg)
    f0 = iterlog.initial_curve(cfg, g, puncture_values=PUNCTURE_VALUES)
    traj = iterlog.integrate_pde(cfg, f0, 10.0, t_eval=np.geomspace(1.0, 10.0, 5))
    report = iterlog.fit_ansatz(traj, cfg, samples=[1, 2, 3, 4, 5])
    assert len(report.fits) == 5
    for fit in report.fits:
        assert fit.matching.shape == (5, 6)
        assert tuple(np.sign(fit.a[:, 0])) == (-1, -1, 1, -1, 1)
    assert math.isfinite(report.dynamic) and math.isfinite(report.reduced)


def test_ansatz_fit_needs_a_periodic_cylinder():
    cfg = iterlog.build_cylinder(3.0, [0.0, 1.0, 2.0], boundary="dirichlet")
    g = iterlog.grid(cfg)
    f0 = iterlog.initial_curve(cfg, g, puncture_values=(0.1, 0.2, 0.1))
    traj = iterlog.integrate_pde(cfg, f0, 1e-3, t_eval=[1e-3])
    with pytest.raises(iterlog.DomainError, match="periodic"):
        iterlog.fit_ansatz(traj, cfg)


@pytest.mark.slow
@pytest.mark.parametrize(
    ["masses", "drifting"],
    [
        ((1, 1, 1, 1, 1), False),
        ((1, 4, 1, 1, 1), True),
    ],
)
def test_wall_asymptotics(masses, drifting):
    report = iterlog.wall_asymptotics(iterlog.five_cycle(masses), [0.1] * 5)
    assert bool(report.drifting) is drifting
    assert report.window == (15.0, 25.0)
