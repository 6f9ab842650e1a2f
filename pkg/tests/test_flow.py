import math

import numpy as np
import pytest

from hqflow.flow import (
    FlowConfig,
    GraphState,
    MonitorViolation,
    StiffnessCollapse,
    check_monotone,
    diffusion_bound,
    geometry,
    monitors,
    propose_dt,
    run,
    scalar_rhs,
    step,
    with_t_end,
)
from hqflow.geometry import KConvexityLost
from hqflow.grids import build_grid
from hqflow.quermass import invert_phi1, slice_phi


def perturbed_state(N=128, n=2, amp=0.1):
    g = build_grid("axisymmetric", n, N)
    return GraphState(g, 1.0 + amp * np.cos(g.theta))


# -- state and config validation ----------------------------------------------------------

def test_graph_state_validation():
    g = build_grid("axisymmetric", 2, 16)
    with pytest.raises(ValueError, match="shape"):
        GraphState(g, np.ones(17))
    with pytest.raises(ValueError, match="positive"):
        GraphState(g, -np.ones(16))
    with pytest.raises(ValueError, match="finite"):
        GraphState(g, np.full(16, np.nan))
    with pytest.raises(ValueError, match="k must"):
        GraphState(g, np.ones(16), k=3)
    s = GraphState(g, np.ones(16), k=2)
    assert s.n == 2 and not s.experimental
    assert GraphState(build_grid("axisymmetric", 3, 16), np.ones(16), k=3).experimental


@pytest.mark.parametrize(
    "kwargs",
    [dict(cfl=1.0), dict(cfl=0.0), dict(t_end=-1.0), dict(upsilon_min=0.0), dict(step_scheme="rk4"), dict(fixed_dt=0.0)],
)
def test_flow_config_validation(kwargs):
    with pytest.raises(ValueError):
        FlowConfig(**kwargs)


def test_flow_config_defaults():
    c = FlowConfig()
    assert (c.cfl, c.upsilon_min, c.umbilicity_tol, c.monitor_slack, c.dt_min) == (0.2, 1e-3, 1e-8, 1e-8, 1e-12)
    assert with_t_end(c, 3.0).t_end == 3.0


# -- right-hand side and time step -----------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3, 4])
def test_slice_is_stationary(n):
    g = build_grid("axisymmetric", n, 64)
    assert np.abs(scalar_rhs(GraphState(g, np.ones(64)))).max() <= 1e-12


def test_rhs_sign_at_extrema():
    s = perturbed_state()
    rhs = scalar_rhs(s)
    assert rhs[np.argmax(s.r)] < 0
    assert rhs[np.argmin(s.r)] > 0


def test_propose_dt_scaling():
    dts = []
    for N in (128, 256):
        g = build_grid("axisymmetric", 2, N)
        dts.append(propose_dt(GraphState(g, np.ones(N))))
    assert math.isfinite(dts[0]) and dts[0] > 0
    assert dts[0] / dts[1] == pytest.approx(4.0, rel=0.02)


def test_propose_dt_slice_closed_form():
    # on a slice: D = (lam'/F^2)(1/lam^2) sum dF/dkappa = 1/sinh(rho) for k = 2, n = 2
    g = build_grid("axisymmetric", 2, 64)
    s = GraphState(g, np.full(64, 1.0))
    D = diffusion_bound(geometry(s))
    assert np.allclose(D, 1.0 / math.sinh(1.0), rtol=1e-12)
    assert propose_dt(s) == pytest.approx(0.2 * g.h_theta**2 * math.sinh(1.0), rel=1e-12)


def test_stiffness_collapse():
    s = perturbed_state()
    with pytest.raises(StiffnessCollapse, match="stiffness collapse"):
        propose_dt(s, config=FlowConfig(dt_min=1.0))


# -- stepping ----------------------------------------------------------------------------------

def test_step_keeps_slice_fixed():
    g = build_grid("axisymmetric", 3, 64)
    s = GraphState(g, np.full(64, 0.8))
    new, rep = step(s, FlowConfig())
    assert np.abs(new.r - s.r).max() <= 1e-12
    assert rep.violations == [] and rep.dt_taken > 0


def test_thousand_steps_without_violations():
    s = perturbed_state(N=256)
    cfg = FlowConfig(t_end=1e9, stop_on_convergence=False)
    fields = geometry(s, cfg)
    mon = monitors(s, fields, cfg)
    for _ in range(1000):
        s, rep = step(s, cfg, fields, mon)
        assert rep.violations == []
        fields, mon = rep.fields_after, rep.after
    assert s.t > 0


def test_non_convex_initial_data_rejected_before_stepping():
    g = build_grid("axisymmetric", 2, 64)
    r = 0.4 - 0.15 * np.exp(-((g.theta / 0.2) ** 2))
    with pytest.raises(KConvexityLost):
        run(GraphState(g, r), FlowConfig(t_end=0.1))


def test_check_monotone_flags_each_direction():
    s = perturbed_state(N=64)
    m0 = monitors(s)
    m1 = monitors(GraphState(s.grid, s.r * 1.001))
    names = {name for name, _ in check_monotone(m0, m1, 1e-8)}
    assert "max_r" in names and "min_r" not in names
    assert check_monotone(m0, m0, 1e-8) == []


def test_monitor_violation_aborts_loudly():
    # a fixed step far beyond the parabolic limit amplifies the grid mode until a monitor breaks
    s = perturbed_state(N=64)
    dt = 20 * propose_dt(s)
    traj = run(s, FlowConfig(fixed_dt=dt, t_end=4000 * dt, max_retries=0))
    assert traj.stop_reason == "monitor violation"
    assert isinstance(traj.error, MonitorViolation)
    assert "monitor violation" in str(traj.error) and traj.violations
    assert traj.steps < 4000
    # the offending state is still recorded
    assert len(traj.times) == traj.steps + 1


# -- monitors ------------------------------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.3, 1.0, 2.0])
def test_slice_monitors(rho):
    g = build_grid("axisymmetric", 3, 64)
    m = monitors(GraphState(g, np.full(64, rho)))
    assert abs(m.max_omega) <= 1e-12
    assert abs(m.umbilicity_deficit) <= 1e-10
    assert all(abs(x) <= 1e-10 for x in m.minkowski_residuals)
    assert abs(m.af.slack) <= 1e-10
    scale = max(abs(v) for v in m.A.as_dict().values())
    assert all(abs(v) <= 1e-14 * scale for v in m.rates.values())


def test_umbilicity_deficit_nonnegative_pointwise():
    # Newton-Maclaurin: E_1^2 >= E_2 wherever E_2 > 0
    s = perturbed_state(N=64, n=3)
    f = geometry(s)
    assert np.all(f.E[..., 1] ** 2 - f.E[..., 2] >= -1e-14)
    assert monitors(s).umbilicity_deficit > 0


@pytest.mark.parametrize("n", [2, 3, 4])
def test_umbilicity_ratio_cross_check(n):
    # E_2/E_1^2 = n/(n-1) (1 - |A|^2/H^2) with H = n E_1
    s = perturbed_state(N=64, n=n)
    f = geometry(s)
    H = f.kappa.sum(-1)
    A2 = (f.kappa**2).sum(-1)
    assert np.allclose(f.E[..., 2] / f.E[..., 1] ** 2, n / (n - 1) * (1 - A2 / H**2), rtol=1e-12)


def test_monitor_row_columns():
    row = monitors(perturbed_state(N=32)).row()
    for key in ("t", "max_r", "min_r", "max_u", "min_F", "max_omega", "umbilicity_deficit",
                "A_minus1", "A_0", "A_1", "A_2", "minkowski_res_1", "minkowski_res_2"):
        assert key in row


# -- runs -------------------------------------------------------------------------------------------

def test_slice_run_converges_immediately():
    g = build_grid("axisymmetric", 2, 64)
    traj = run(GraphState(g, np.full(64, 1.2)), FlowConfig(t_end=1.0))
    assert traj.converged and traj.steps == 0
    rep = traj.limit_report()
    assert rep["spread"] == 0.0
    assert rep["rho_predicted"] == pytest.approx(1.2, rel=1e-10)


def test_short_run_monotone_and_conservative():
    s = perturbed_state(N=128)
    traj = run(s, FlowConfig(t_end=0.05, snapshot_interval=0.02))
    assert traj.stop_reason == "t_end" and traj.error is None
    assert traj.times[-1] == pytest.approx(0.05)
    for name in ("max_r", "max_u", "max_omega"):
        assert np.diff(traj.series(name)).max() <= 1e-8
    for name in ("min_r", "min_F"):
        assert np.diff(traj.series(name)).min() >= -1e-8
    a1 = traj.A(1)
    assert abs(a1[-1] - a1[0]) / a1[0] < 1e-5
    assert np.diff(traj.A(2)).min() >= -1e-8
    assert [round(t, 10) for t, _ in traj.snapshots[:3]] == [0.0, pytest.approx(0.02, abs=1e-3), pytest.approx(0.04, abs=1e-3)]
    assert len(traj.columns["dt"]) == traj.steps + 1


def test_run_three_dimensional_af_slack_positive_and_growing_A2():
    g = build_grid("axisymmetric", 3, 128)
    traj = run(GraphState(g, 1.0 + 0.1 * np.cos(g.theta) + 0.05 * np.cos(2 * g.theta)), FlowConfig(t_end=0.02))
    slack = traj.series("af_slack")
    assert slack.min() > 1e-7
    assert np.diff(traj.A(2)).min() >= -1e-8


def test_limit_report_uses_initial_A1():
    s = perturbed_state(N=64)
    traj = run(s, FlowConfig(t_end=0.01))
    rep = traj.limit_report()
    assert rep["rho_predicted"] == pytest.approx(invert_phi1(traj.A(1)[0], 2))
    assert slice_phi(rep["rho_predicted"], 1, 2) == pytest.approx(traj.A(1)[0], rel=1e-12)


def test_run_determinism_across_workers():
    g = build_grid("latlong", 2, 24)
    th, ph = g.theta[:, None], g.phi[None, :]
    s = GraphState(g, 1.0 + 0.05 * np.cos(th) + 0.03 * np.sin(th) * np.cos(ph) * np.ones_like(ph))
    a = run(s, FlowConfig(t_end=0.01, workers=1))
    b = run(s, FlowConfig(t_end=0.01, workers=4))
    for key in a.columns:
        assert a.columns[key].tobytes() == b.columns[key].tobytes()
