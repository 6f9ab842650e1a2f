"""Command-line experiment runner.

    hqflow --spec run.yaml --out results/            # one run
    hqflow --spec run.yaml --out study/ --levels 3   # dyadic refinement study

Exit status: 0 all monitors held, 2 monitor violation, 3 invalid spec or
initial data, 4 numerical abort. The worker count for field assembly comes
from the HQFLOW_WORKERS environment variable.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import shutil
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentSpec, SpecError, dump_spec, parse_spec
from .flow import GraphState, MonitorViolation, Trajectory, _a_name, run, scalar_rhs
from .geometry import WORKERS_ENV, GeometryError, assemble, hessian_identity_residuals
from .grids import write_snapshot
from .symfun import ConeError

log = logging.getLogger("hqflow")

EXIT_OK, EXIT_VIOLATION, EXIT_INVALID, EXIT_ABORT = 0, 2, 3, 4
EXACT_LEVEL = 1e-11


@dataclass
class RunResult:
    exit_code: int
    summary: dict
    trajectory: Trajectory | None = None
    out_dir: Path | None = None


def workers_from_env() -> int | None:
    raw = os.environ.get(WORKERS_ENV)
    return int(raw) if raw else None


# -- CSV ----------------------------------------------------------------------

def format_csv(traj: Trajectory, every: int = 1) -> str:
    """Monitor series as CSV; every ``every``-th row plus the last one."""
    names = list(traj.columns)
    nrows = len(traj.columns["t"])
    rows = sorted(set(range(0, nrows, every)) | {nrows - 1})
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    cols = [traj.columns[c] for c in names]
    for i in rows:
        buf.write(",".join(repr(float(c[i])) for c in cols) + "\n")
    return buf.getvalue()


# -- summaries ----------------------------------------------------------------

def _is_stationary(state: GraphState, config) -> bool:
    rhs = scalar_rhs(state, config=config)
    return float(np.abs(rhs).max()) <= 1e-12


def summarize(spec: ExperimentSpec, traj: Trajectory | None, *, stationary=False, error=None, scale=1.0) -> dict:
    out = {
        "n": spec.n,
        "k": spec.k,
        "grid": spec.grid,
        "resolution": list(spec.resolution),
        "experimental": spec.k >= 3,
    }
    if scale != 1.0:
        out["amplitude_scale"] = scale
    if traj is None:
        out["status"] = "invalid"
        out["error"] = str(error)
        return out
    out.update(
        status="stationary" if stationary else (traj.stop_reason or "t_end"),
        steps=traj.steps,
        t_final=float(traj.final.t),
        violations=[{"t": t, "monitor": name, "magnitude": mag} for t, name, mag in traj.violations],
    )
    labels = [l for l in range(-1, spec.n + 1) if _a_name(l) in traj.columns]
    out["A_initial"] = {str(l): float(traj.A(l)[0]) for l in labels}
    out["A_final"] = {str(l): float(traj.A(l)[-1]) for l in labels}
    if "A_1" in traj.columns:
        a1 = traj.A(1)
        out["A1_drift"] = float(np.max(np.abs(a1 - a1[0])) / abs(a1[0]))
    if "A_2" in traj.columns:
        a2 = traj.A(2)
        out["A2_gain"] = float(a2[-1] - a2[0])
        out["A2_min_step_change"] = float(np.diff(a2).min()) if a2.size > 1 else 0.0
    if "af_slack" in traj.columns:
        slack = traj.series("af_slack")
        out["af_slack_initial"] = float(slack[0])
        out["af_slack_final"] = float(slack[-1])
        out["af_slack_min"] = float(np.nanmin(slack))
    out["umbilicity_deficit_final"] = float(traj.series("umbilicity_deficit")[-1])
    if "A_1" in traj.columns and traj.A(1)[0] > 0:
        lim = traj.limit_report()
        out["rho_infinity"] = lim["mean_r"]
        out["rho_predicted"] = lim["rho_predicted"]
        out["limit_error"] = lim["limit_error"]
        out["final_spread"] = lim["spread"]
    if error is not None:
        out["error"] = str(error)
    return out


def format_summary(summary: dict) -> str:
    lines = [f"status: {summary['status']}"]
    for key, val in summary.items():
        if key == "status":
            continue
        if isinstance(val, float):
            lines.append(f"{key}: {val:.12g}")
        elif isinstance(val, dict):
            inner = ", ".join(f"A_{k}={v:.12g}" for k, v in val.items())
            lines.append(f"{key}: {inner}")
        elif isinstance(val, list) and val and isinstance(val[0], dict):
            lines.append(f"{key}:")
            lines.extend(f"  t={v['t']:.10g} {v['monitor']} by {v['magnitude']:.3e}" for v in val)
        else:
            lines.append(f"{key}: {val}")
    return "\n".join(lines) + "\n"


# -- output directory ----------------------------------------------------------

class OutputDir:
    """Stage every artifact in a sibling temp directory, rename into place at the end."""

    def __init__(self, target):
        self.target = Path(target)
        if self.target.exists() and (not self.target.is_dir() or any(self.target.iterdir())):
            raise FileExistsError(f"output directory {self.target} exists and is not empty")
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.staging = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.staging-", dir=self.target.parent))

    def path(self, name: str) -> Path:
        p = self.staging / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write(self, name: str, text: str) -> None:
        with open(self.path(name), "w", newline="\n") as fh:
            fh.write(text)

    def commit(self) -> Path:
        if self.target.exists():
            self.target.rmdir()
        os.replace(self.staging, self.target)
        return self.target

    def discard(self) -> None:
        shutil.rmtree(self.staging, ignore_errors=True)


# -- single run ----------------------------------------------------------------

def run_experiment(spec: ExperimentSpec, out=None, *, workers: int | None = None) -> RunResult:
    """Run one experiment; artifacts go to ``out`` (or ``spec.output``) when given."""
    target = out if out is not None else spec.output
    outdir = OutputDir(target) if target is not None else None
    try:
        result = _execute(spec, workers)
        if outdir is not None:
            _write_artifacts(outdir, spec, result)
            result.out_dir = outdir.commit()
        return result
    except BaseException:
        if outdir is not None:
            outdir.discard()
        raise


def _execute(spec: ExperimentSpec, workers: int | None) -> RunResult:
    workers = workers if workers is not None else workers_from_env()
    try:
        config = spec.flow_config(workers)
        init = spec.initial_data(upsilon_min=config.upsilon_min)
    except (GeometryError, ConeError, ValueError) as exc:
        msg = f"construction failed: {exc}"
        log.error(msg)
        return RunResult(EXIT_INVALID, summarize(spec, None, error=msg))

    stationary = _is_stationary(init.state, config)
    traj = run(init.state, config)
    if isinstance(traj.error, MonitorViolation):
        code = EXIT_VIOLATION
    elif traj.error is not None:
        code = EXIT_ABORT
    elif traj.violations:
        code = EXIT_VIOLATION
    else:
        code = EXIT_OK
    if traj.error is not None:
        log.error("%s", traj.error)
    summary = summarize(spec, traj, stationary=stationary and code == EXIT_OK, error=traj.error, scale=init.scale)
    summary["exit_code"] = code
    return RunResult(code, summary, traj)


def _write_artifacts(outdir: OutputDir, spec: ExperimentSpec, result: RunResult) -> None:
    outdir.write("spec.yaml", dump_spec(spec))
    traj = result.trajectory
    if traj is not None:
        outdir.write("monitors.csv", format_csv(traj, spec.csv_every))
        grid = traj.initial.grid
        for i, (t, r) in enumerate(traj.snapshots):
            write_snapshot(outdir.path(f"snapshots/snap_{i:04d}.txt"), grid, r, t)
    outdir.write("summary.txt", format_summary(result.summary))
    outdir.write("summary.json", json.dumps(_jsonable(result.summary), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# -- refinement study ------------------------------------------------------------

@dataclass
class RefinementTable:
    resolutions: list[tuple[int, ...]]
    errors: dict[str, list[float]] = field(default_factory=dict)
    exit_codes: list[int] = field(default_factory=list)

    def orders(self) -> dict[str, list[float | str]]:
        """Observed order log2(e_i / e_{i+1}); "exact" when both errors sit at rounding level."""
        out = {}
        for name, errs in self.errors.items():
            row = []
            for a, b in zip(errs[:-1], errs[1:]):
                if max(abs(a), abs(b)) <= EXACT_LEVEL:
                    row.append("exact")
                elif a == 0.0 or b == 0.0 or not (math.isfinite(a) and math.isfinite(b)):
                    row.append(float("nan"))
                else:
                    row.append(math.log2(abs(a) / abs(b)))
            out[name] = row
        return out

    def format(self) -> str:
        buf = io.StringIO()
        res = ["x".join(map(str, r)) for r in self.resolutions]
        buf.write("quantity," + ",".join(f"N={r}" for r in res) + "," + ",".join(
            f"order {a}->{b}" for a, b in zip(res[:-1], res[1:])) + "\n")
        orders = self.orders()
        for name, errs in self.errors.items():
            cells = [repr(float(e)) for e in errs]
            cells += [o if isinstance(o, str) else f"{o:.4f}" for o in orders[name]]
            buf.write(name + "," + ",".join(cells) + "\n")
        return buf.getvalue()


def refinement_study(spec: ExperimentSpec, levels: int, *, workers: int | None = None) -> RefinementTable:
    """Repeat the run at resolutions N, 2N, 4N, ... and tabulate error measures."""
    if levels < 2:
        raise ValueError("a refinement study needs levels >= 2")
    table = RefinementTable([])
    names = ("A1_drift", "minkowski_res_1", "minkowski_res_2", "res_hol", "res_hos")
    for name in names:
        table.errors[name] = []
    for lev in range(levels):
        sub = spec.refined(2**lev)
        table.resolutions.append(sub.resolution)
        res = _execute(sub, workers)
        table.exit_codes.append(res.exit_code)
        traj = res.trajectory
        if traj is None:
            raise RuntimeError(f"refinement level {lev}: {res.summary.get('error')}")
        a1 = traj.A(1)
        table.errors["A1_drift"].append(float(np.max(np.abs(a1 - a1[0]))))
        for j in (1, 2):
            col = f"minkowski_res_{j}"
            vals = traj.series(col) if col in traj.columns else np.array([np.nan])
            table.errors[col].append(float(np.max(np.abs(vals))))
        fields = assemble(traj.initial.grid, traj.initial.r, spec.k, workers=workers)
        hol, hos = hessian_identity_residuals(fields)
        table.errors["res_hol"].append(float(hol))
        table.errors["res_hos"].append(float(hos))
    return table


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hqflow", description="Locally constrained inverse curvature flow in de Sitter space.")
    p.add_argument("--spec", required=True, help="YAML experiment spec")
    p.add_argument("--out", help="output directory (must not exist or be empty)")
    p.add_argument("--levels", type=int, help="run a dyadic refinement study with this many levels")
    p.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        text = Path(args.spec).read_text()
        spec = parse_spec(text)
    except (OSError, SpecError) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID

    if args.levels is not None:
        try:
            table = refinement_study(spec, args.levels)
        except (ValueError, RuntimeError) as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_INVALID
        text = table.format()
        target = args.out or spec.output
        if target:
            outdir = OutputDir(target)
            outdir.write("refinement.csv", text)
            outdir.commit()
        if not args.quiet:
            print(text, end="")
        return max(table.exit_codes)

    try:
        result = run_experiment(spec, args.out)
    except FileExistsError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    if not args.quiet:
        print(format_summary(result.summary), end="")
    elif result.exit_code:
        print(result.summary.get("error", result.summary["status"]), file=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
