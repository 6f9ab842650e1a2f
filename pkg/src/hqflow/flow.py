"""Scalar graph flow dr/dt = upsilon (u - lam'/F) and its runtime monitors.

Every accepted step is checked against the quantities that the flow keeps
monotone: max r and max u never increase, min r and min F never decrease.
A violation beyond ``monitor_slack`` aborts the run.
"""
from __future__ import annotations

import logging
import math
from array import array
from dataclasses import dataclass, field, replace

import numpy as np

from . import grids, quermass
from .geometry import GeometryError, GeometryFields, assemble
from .grids import Grid, integrate, sphere_area
from .symfun import ConeError

log = logging.getLogger(__name__)


class FlowError(RuntimeError):
    pass


class StiffnessCollapse(FlowError):
    pass


class NumericalAbort(FlowError):
    pass


class MonitorViolation(FlowError):
    def __init__(self, report: "StepReport"):
        self.report = report
        names = ", ".join(f"{name} by {mag:.3e}" for name, mag in report.violations)
        super().__init__(f"monitor violation at t={report.after.t:.10g}: {names}")


@dataclass(frozen=True, eq=False)
class GraphState:
    grid: Grid
    r: np.ndarray
    t: float = 0.0
    k: int = 2

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        if r.shape != self.grid.shape:
            raise ValueError(f"r has shape {r.shape}, grid expects {self.grid.shape}")
        if not np.all(np.isfinite(r)):
            raise ValueError("r must be finite")
        if r.min() <= 0.0:
            raise ValueError("r must be positive")
        if not 1 <= self.k <= self.grid.n:
            raise ValueError(f"k must lie in 1..{self.grid.n}")
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def experimental(self) -> bool:
        return self.k >= 3


@dataclass(frozen=True)
class FlowConfig:
    cfl: float = 0.2
    t_end: float = 1.0
    upsilon_min: float = 1e-3
    umbilicity_tol: float = 1e-8
    monitor_slack: float = 1e-8
    dt_min: float = 1e-12
    step_scheme: str = "rk2"
    max_retries: int = 12
    k_max: int = 2
    fixed_dt: float | None = None
    abort_on_violation: bool = True
    stop_on_convergence: bool = True
    snapshot_interval: float | None = None
    workers: int | None = None

    def __post_init__(self):
        for name in ("cfl", "t_end", "upsilon_min", "umbilicity_tol", "monitor_slack", "dt_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.cfl >= 1:
            raise ValueError("cfl must be < 1")
        if self.step_scheme != "rk2":
            raise ValueError("only the rk2 scheme is implemented")
        if self.fixed_dt is not None and not self.fixed_dt > 0:
            raise ValueError("fixed_dt must be positive")


@dataclass(frozen=True)
class Monitors:
    t: float
    max_r: float
    min_r: float
    max_u: float
    min_F: float
    max_omega: float
    min_upsilon: float
    umbilicity_deficit: float
    minkowski_residuals: tuple[float, ...]
    A: quermass.QuermassVector
    af: quermass.AFReport | None
    rates: dict[int, float]

    def row(self) -> dict[str, float]:
        out = {
            "t": self.t,
            "max_r": self.max_r,
            "min_r": self.min_r,
            "max_u": self.max_u,
            "min_F": self.min_F,
            "max_omega": self.max_omega,
            "umbilicity_deficit": self.umbilicity_deficit,
        }
        for l, v in self.A.as_dict().items():
            out[_a_name(l)] = v
        for j, v in enumerate(self.minkowski_residuals, start=1):
            out[f"minkowski_res_{j}"] = v
        nan = float("nan")
        out["af_rho_star"] = self.af.rho_star if self.af else nan
        out["af_bound"] = self.af.bound if self.af else nan
        out["af_slack"] = self.af.slack if self.af else nan
        for l, v in self.rates.items():
            out["rate_" + _a_name(l)] = v
        out["min_upsilon"] = self.min_upsilon
        return out


def _a_name(l: int) -> str:
    return "A_minus1" if l == -1 else f"A_{l}"


@dataclass
class StepReport:
    dt_taken: float
    before: Monitors
    after: Monitors
    violations: list[tuple[str, float]]
    retries: int = 0
    fields_after: GeometryFields | None = field(default=None, repr=False)


def geometry(state: GraphState, config: FlowConfig | None = None) -> GeometryFields:
    """Assemble and validate the geometry of a state (spacelike, k-convex)."""
    config = config or FlowConfig()
    return assemble(
        state.grid, state.r, state.k, upsilon_min=config.upsilon_min, workers=config.workers
    )


def scalar_rhs(state: GraphState, fields: GeometryFields | None = None, config: FlowConfig | None = None):
    if fields is None:
        fields = geometry(state, config)
    return fields.upsilon * fields.speed


def diffusion_bound(fields: GeometryFields) -> np.ndarray:
    """Pointwise bound on the diffusion strength of the linearized flow.

    upsilon * lam'/F^2 * (largest eigenvalue of g^{-1} relative to sigma)
    * sum_i dF/dkappa_i; the eigenvalue is 1/(lam upsilon)^2 in closed form.
    """
    ginv_max = 1.0 / (fields.lam * fields.upsilon) ** 2
    return fields.upsilon * fields.dlam / fields.F**2 * ginv_max * fields.gradF.sum(axis=-1)


def propose_dt(state: GraphState, fields: GeometryFields | None = None, config: FlowConfig | None = None) -> float:
    config = config or FlowConfig()
    if fields is None:
        fields = geometry(state, config)
    D = diffusion_bound(fields)
    with np.errstate(divide="ignore"):
        local = state.grid.spacing**2 / D
    dt = config.cfl * float(np.min(local))
    if not dt >= config.dt_min:
        raise StiffnessCollapse(f"stiffness collapse: proposed dt {dt:.3e} < dt_min {config.dt_min:g} at t={state.t:.10g}")
    return dt


def monitors(state: GraphState, fields: GeometryFields | None = None, config: FlowConfig | None = None) -> Monitors:
    config = config or FlowConfig()
    if fields is None:
        fields = geometry(state, config)
    grid, n = state.grid, state.n
    omega = np.log(fields.F) + np.log(fields.u) - np.log(fields.dlam)
    E = fields.E
    if n >= 2 and np.all(E[..., 2] > 0.0):
        deficit = integrate(fields.dlam * (E[..., 1] ** 2 / E[..., 2] - 1.0) * fields.area_density, grid)
    else:
        deficit = float("nan")
    k_max = min(max(config.k_max, state.k), n)
    A = quermass.quermassintegrals(fields, k_max)
    try:
        af = quermass.af_check(A) if A.k_max >= 2 else None
    except ValueError:
        af = None
    mink = tuple(quermass.minkowski_residual(fields, j) for j in range(1, max(2, state.k) + 1) if j <= n)
    rates = {l: quermass.variation_rate(fields, l) for l in range(-1, k_max + 1)}
    return Monitors(
        t=state.t,
        max_r=float(state.r.max()),
        min_r=float(state.r.min()),
        max_u=float(fields.u.max()),
        min_F=float(fields.F.min()),
        max_omega=float(omega.max()),
        min_upsilon=float(fields.upsilon.min()),
        umbilicity_deficit=deficit,
        minkowski_residuals=mink,
        A=A,
        af=af,
        rates=rates,
    )


def check_monotone(before: Monitors, after: Monitors, slack: float) -> list[tuple[str, float]]:
    out = []
    for name, sign in (("max_r", 1), ("min_r", -1), ("max_u", 1), ("min_F", -1)):
        change = sign * (getattr(after, name) - getattr(before, name))
        if change > slack:
            out.append((name, change))
    return out


def _advance(state: GraphState, rhs0: np.ndarray, dt: float, config: FlowConfig):
    grid = state.grid
    mid = GraphState(grid, state.r + 0.5 * dt * rhs0, state.t + 0.5 * dt, state.k)
    f_mid = geometry(mid, config)
    rhs1 = grids.polar_filter(scalar_rhs(mid, f_mid), grid)
    new = GraphState(grid, state.r + dt * rhs1, state.t + dt, state.k)
    return new, geometry(new, config)


def step(
    state: GraphState,
    config: FlowConfig,
    fields: GeometryFields | None = None,
    before: Monitors | None = None,
    dt: float | None = None,
) -> tuple[GraphState, StepReport]:
    """One explicit midpoint step with rejection and dt halving on failure."""
    if fields is None:
        fields = geometry(state, config)
    if before is None:
        before = monitors(state, fields, config)
    if dt is None:
        dt = config.fixed_dt if config.fixed_dt is not None else propose_dt(state, fields, config)
    rhs0 = grids.polar_filter(scalar_rhs(state, fields), state.grid)
    retries = 0
    while True:
        try:
            new, f_new = _advance(state, rhs0, dt, config)
            break
        except (GeometryError, ConeError, ValueError) as exc:
            retries += 1
            if retries > config.max_retries:
                raise NumericalAbort(
                    f"step from t={state.t:.10g} failed after {config.max_retries} dt halvings: {exc}"
                ) from exc
            log.debug("step rejected at t=%.10g (dt=%.3e): %s", state.t, dt, exc)
            dt *= 0.5
            if dt < config.dt_min:
                raise StiffnessCollapse(f"dt fell below dt_min at t={state.t:.10g}: {exc}") from exc
    after = monitors(new, f_new, config)
    report = StepReport(
        dt_taken=dt,
        before=before,
        after=after,
        violations=check_monotone(before, after, config.monitor_slack),
        retries=retries,
        fields_after=f_new,
    )
    if report.violations and config.abort_on_violation:
        raise MonitorViolation(report)
    return new, report


@dataclass
class Trajectory:
    initial: GraphState
    final: GraphState
    columns: dict[str, array]
    snapshots: list[tuple[float, np.ndarray]]
    steps: int = 0
    converged: bool = False
    stop_reason: str = ""
    violations: list[tuple[float, str, float]] = field(default_factory=list)
    error: Exception | None = None

    def series(self, name: str) -> np.ndarray:
        return np.frombuffer(self.columns[name], dtype=float).copy()

    @property
    def times(self) -> np.ndarray:
        return self.series("t")

    def A(self, l: int) -> np.ndarray:
        return self.series(_a_name(l))

    def rate(self, l: int) -> np.ndarray:
        return self.series("rate_" + _a_name(l))

    def limit_report(self) -> dict[str, float]:
        """Final spread and comparison with the slice predicted by A_1 conservation."""
        grid, r = self.final.grid, self.final.r
        mean_r = integrate(r, grid) / sphere_area(grid.n)
        A1_0 = float(self.A(1)[0])
        rho_pred = quermass.invert_phi1(A1_0, grid.n)
        return {
            "spread": float(r.max() - r.min()),
            "mean_r": mean_r,
            "rho_predicted": rho_pred,
            "limit_error": abs(mean_r - rho_pred),
        }


def _record(columns: dict[str, array], row: dict[str, float], dt: float) -> None:
    row = {"t": row["t"], "dt": dt, **{k: v for k, v in row.items() if k != "t"}}
    if not columns:
        for key in row:
            columns[key] = array("d")
    for key, val in row.items():
        columns[key].append(val)


def run(initial: GraphState, config: FlowConfig, on_step=None) -> Trajectory:
    """Integrate from ``initial`` until t_end or until the umbilicity deficit drops below tolerance.

    Errors after the first step are stored on the returned trajectory
    (``error``) together with everything recorded up to that point; errors
    on the initial state propagate.
    """
    fields = geometry(initial, config)
    mon = monitors(initial, fields, config)
    columns: dict[str, array] = {}
    _record(columns, mon.row(), 0.0)
    traj = Trajectory(initial, initial, columns, [(initial.t, initial.r.copy())])
    next_snap = initial.t + config.snapshot_interval if config.snapshot_interval else math.inf

    state = initial
    while True:
        if config.stop_on_convergence and mon.umbilicity_deficit < config.umbilicity_tol:
            traj.converged = True
            traj.stop_reason = "converged"
            break
        remaining = config.t_end - state.t
        if remaining <= 1e-12 * max(1.0, config.t_end):
            traj.stop_reason = "t_end"
            break
        try:
            dt = config.fixed_dt if config.fixed_dt is not None else propose_dt(state, fields, config)
            dt = min(dt, remaining)
            state, report = step(state, config, fields, mon, dt=dt)
        except MonitorViolation as exc:
            rep = exc.report
            traj.violations.extend((rep.after.t, name, mag) for name, mag in rep.violations)
            _record(columns, rep.after.row(), rep.dt_taken)
            traj.final = GraphState(initial.grid, rep.fields_after.r, rep.after.t, initial.k)
            traj.steps += 1
            traj.error = exc
            traj.stop_reason = "monitor violation"
            return traj
        except FlowError as exc:
            traj.error = exc
            traj.stop_reason = "numerical abort"
            traj.final = state
            return traj
        fields, mon = report.fields_after, report.after
        traj.violations.extend((mon.t, name, mag) for name, mag in report.violations)
        _record(columns, mon.row(), report.dt_taken)
        traj.steps += 1
        traj.final = state
        if state.t >= next_snap - 1e-12:
            traj.snapshots.append((state.t, state.r.copy()))
            next_snap += config.snapshot_interval
        if on_step is not None:
            on_step(state, report)
    if traj.snapshots[-1][0] != state.t:
        traj.snapshots.append((state.t, state.r.copy()))
    return traj


def with_t_end(config: FlowConfig, t_end: float) -> FlowConfig:
    return replace(config, t_end=t_end)
