"""Experiment specifications: YAML text in, a validated ``ExperimentSpec`` out.

Example::

    n: 2
    k: 2
    grid: axisymmetric        # or latlong (n = 2 only)
    resolution: 256           # latlong: 64 or [64, 128]
    initial:
      kind: perturbed         # slice | perturbed | random
      rho0: 1.0
      modes: [[1, 0, 0.1]]    # [degree, order, amplitude]
    t_end: 5.0
    tolerances:
      cfl: 0.4
    snapshot_interval: 0.5
    seed: 0

Validation collects every problem before reporting, so a broken file is
fixed in one round trip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .flow import FlowConfig
from .grids import KINDS, MIN_RESOLUTION, Grid, build_grid
from .initial import InitialData, Mode, make_initial, random_modes

TOP_KEYS = {
    "n", "k", "grid", "resolution", "initial", "t_end", "tolerances",
    "output", "snapshot_interval", "seed", "csv_every", "k_max",
}
INITIAL_KEYS = {"kind", "rho0", "modes", "max_degree", "amplitude", "auto_shrink"}
TOLERANCE_KEYS = {
    "cfl", "upsilon_min", "umbilicity_tol", "monitor_slack", "dt_min",
    "step_scheme", "max_retries", "stop_on_convergence",
}


class SpecError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid experiment spec:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "slice"
    rho0: float = 1.0
    modes: tuple[Mode, ...] = ()
    max_degree: int = 3
    amplitude: float = 0.05
    auto_shrink: bool = False


@dataclass(frozen=True)
class ExperimentSpec:
    n: int = 2
    k: int = 2
    grid: str = "axisymmetric"
    resolution: tuple[int, ...] = (128,)
    initial: InitialSpec = field(default_factory=InitialSpec)
    t_end: float = 1.0
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    snapshot_interval: float | None = None
    seed: int = 0
    csv_every: int = 1
    k_max: int = 2

    def build_grid(self) -> Grid:
        return build_grid(self.grid, self.n, self.resolution)

    def flow_config(self, workers: int | None = None) -> FlowConfig:
        return FlowConfig(
            t_end=self.t_end,
            k_max=max(self.k_max, self.k),
            snapshot_interval=self.snapshot_interval,
            workers=workers,
            **self.tolerances,
        )

    def modes(self, grid: Grid) -> list[Mode]:
        if self.initial.kind == "slice":
            return []
        if self.initial.kind == "perturbed":
            return list(self.initial.modes)
        rng = np.random.default_rng(self.seed)
        return random_modes(rng, grid, self.initial.max_degree, self.initial.amplitude)

    def initial_data(self, grid: Grid | None = None, upsilon_min: float | None = None) -> InitialData:
        grid = grid or self.build_grid()
        ups = upsilon_min if upsilon_min is not None else self.flow_config().upsilon_min
        return make_initial(
            grid, self.initial.rho0, self.modes(grid), self.k,
            upsilon_min=ups, shrink=self.initial.auto_shrink,
        )

    def refined(self, factor: int) -> "ExperimentSpec":
        return replace(self, resolution=tuple(factor * x for x in self.resolution))

    def to_dict(self) -> dict:
        ini = self.initial
        return {
            "n": self.n,
            "k": self.k,
            "grid": self.grid,
            "resolution": list(self.resolution),
            "initial": {
                "kind": ini.kind,
                "rho0": ini.rho0,
                "modes": [[m.degree, m.order, m.amplitude] for m in ini.modes],
                "max_degree": ini.max_degree,
                "amplitude": ini.amplitude,
                "auto_shrink": ini.auto_shrink,
            },
            "t_end": self.t_end,
            "tolerances": dict(self.tolerances),
            "output": self.output,
            "snapshot_interval": self.snapshot_interval,
            "seed": self.seed,
            "csv_every": self.csv_every,
            "k_max": self.k_max,
        }


def _number(value, kind, errors, name, *, positive=False, minimum=None):
    if isinstance(value, bool):
        errors.append(f"{name}: expected a number, got {value!r}")
        return None
    if kind is int:
        if not isinstance(value, int):
            errors.append(f"{name}: expected an integer, got {value!r}")
            return None
        out = value
    else:
        # PyYAML reads "1e-8" (no dot) as a string
        try:
            out = float(value)
        except (TypeError, ValueError):
            errors.append(f"{name}: expected a number, got {value!r}")
            return None
        if not math.isfinite(out):
            errors.append(f"{name}: must be finite")
            return None
    if positive and not out > 0:
        errors.append(f"{name}: must be positive, got {out}")
        return None
    if minimum is not None and out < minimum:
        errors.append(f"{name}: must be >= {minimum}, got {out}")
        return None
    return out


def _parse_modes(raw, errors) -> tuple[Mode, ...]:
    if not isinstance(raw, (list, tuple)):
        errors.append("initial.modes: expected a list of [degree, order, amplitude]")
        return ()
    out = []
    for i, item in enumerate(raw):
        name = f"initial.modes[{i}]"
        if isinstance(item, dict):
            item = [item.get("degree"), item.get("order", 0), item.get("amplitude")]
        if not isinstance(item, (list, tuple)) or len(item) != 3:
            errors.append(f"{name}: expected [degree, order, amplitude]")
            continue
        deg = _number(item[0], int, errors, f"{name}.degree", minimum=0)
        order = _number(item[1], int, errors, f"{name}.order")
        amp = _number(item[2], float, errors, f"{name}.amplitude")
        if None in (deg, order, amp):
            continue
        if abs(order) > deg:
            errors.append(f"{name}: |order| {abs(order)} exceeds degree {deg}")
            continue
        out.append(Mode(deg, order, amp))
    return tuple(out)


def parse_spec(text: str) -> ExperimentSpec:
    """Parse and validate YAML spec text; raises SpecError listing every problem."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpecError([f"not valid YAML: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise SpecError(["top level must be a mapping of keys to values"])
    return spec_from_dict(raw)


def spec_from_dict(raw: dict) -> ExperimentSpec:
    errors: list[str] = []
    defaults = ExperimentSpec()
    for key in sorted(set(raw) - TOP_KEYS, key=str):
        errors.append(f"unknown key {key!r}")

    n = _number(raw.get("n", defaults.n), int, errors, "n", minimum=2)
    k = _number(raw.get("k", defaults.k), int, errors, "k", minimum=1)
    if n is not None and k is not None and k > n:
        errors.append(f"k={k} exceeds n={n}: k <= n required")

    kind = raw.get("grid", defaults.grid)
    if kind not in KINDS:
        errors.append(f"grid: unknown kind {kind!r} (expected one of {sorted(KINDS)})")
    elif kind == "latlong" and n is not None and n != 2:
        errors.append(f"grid: latlong requires n = 2, got n={n}")

    res_raw = raw.get("resolution", list(defaults.resolution))
    res_list = res_raw if isinstance(res_raw, (list, tuple)) else [res_raw]
    resolution = tuple(
        _number(v, int, errors, f"resolution[{i}]", minimum=MIN_RESOLUTION) for i, v in enumerate(res_list)
    )
    if None in resolution:
        resolution = defaults.resolution
    elif kind == "axisymmetric" and len(resolution) != 1:
        errors.append("resolution: axisymmetric grids take a single integer")
    elif kind == "latlong":
        if len(resolution) == 1:
            resolution = (resolution[0], 2 * resolution[0])
        if len(resolution) != 2:
            errors.append("resolution: latlong grids take N or [N_theta, N_phi]")
        elif resolution[1] % 2:
            errors.append("resolution: latlong azimuth count must be even")

    ini_raw = raw.get("initial", {"kind": "slice", "rho0": 1.0})
    initial = InitialSpec()
    if not isinstance(ini_raw, dict):
        errors.append("initial: expected a mapping")
    else:
        for key in sorted(set(ini_raw) - INITIAL_KEYS, key=str):
            errors.append(f"unknown key 'initial.{key}'")
        ikind = ini_raw.get("kind", "perturbed" if "modes" in ini_raw else "slice")
        if ikind not in ("slice", "perturbed", "random"):
            errors.append(f"initial.kind: expected slice, perturbed or random, got {ikind!r}")
        rho0 = _number(ini_raw.get("rho0", 1.0), float, errors, "initial.rho0", positive=True)
        modes = _parse_modes(ini_raw.get("modes", []), errors)
        if ikind == "perturbed" and not modes and "modes" not in ini_raw:
            errors.append("initial.modes: required for kind 'perturbed'")
        if kind == "axisymmetric":
            for m in modes:
                if m.order != 0:
                    errors.append(f"initial.modes: order {m.order} needs a latlong grid")
        max_degree = _number(ini_raw.get("max_degree", 3), int, errors, "initial.max_degree", minimum=1)
        amplitude = _number(ini_raw.get("amplitude", 0.05), float, errors, "initial.amplitude", minimum=0.0)
        shrink = ini_raw.get("auto_shrink", False)
        if not isinstance(shrink, bool):
            errors.append("initial.auto_shrink: expected true or false")
        initial = InitialSpec(ikind, rho0 or 1.0, modes, max_degree or 3, amplitude or 0.0, bool(shrink))

    t_end = _number(raw.get("t_end", defaults.t_end), float, errors, "t_end", positive=True)

    tol_raw = raw.get("tolerances", {}) or {}
    tolerances = {}
    if not isinstance(tol_raw, dict):
        errors.append("tolerances: expected a mapping")
    else:
        for key, val in tol_raw.items():
            if key not in TOLERANCE_KEYS:
                errors.append(f"unknown key 'tolerances.{key}'")
            elif key == "step_scheme":
                if val != "rk2":
                    errors.append(f"tolerances.step_scheme: only 'rk2' is available, got {val!r}")
                tolerances[key] = val
            elif key == "stop_on_convergence":
                if not isinstance(val, bool):
                    errors.append("tolerances.stop_on_convergence: expected true or false")
                tolerances[key] = bool(val)
            elif key == "max_retries":
                v = _number(val, int, errors, f"tolerances.{key}", minimum=0)
                if v is not None:
                    tolerances[key] = v
            else:
                v = _number(val, float, errors, f"tolerances.{key}", positive=True)
                if v is not None:
                    tolerances[key] = v
        if "cfl" in tolerances and tolerances["cfl"] >= 1:
            errors.append("tolerances.cfl: must be < 1")

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        errors.append("output: expected a directory path")
    snap = raw.get("snapshot_interval")
    if snap is not None:
        snap = _number(snap, float, errors, "snapshot_interval", positive=True)
    seed = _number(raw.get("seed", 0), int, errors, "seed", minimum=0)
    csv_every = _number(raw.get("csv_every", 1), int, errors, "csv_every", minimum=1)
    k_max = _number(raw.get("k_max", 2), int, errors, "k_max", minimum=0)
    if k_max is not None and n is not None and k_max > n:
        errors.append(f"k_max={k_max} exceeds n={n}")

    if errors:
        raise SpecError(errors)
    return ExperimentSpec(
        n=n, k=k, grid=kind, resolution=resolution, initial=initial, t_end=t_end,
        tolerances=tolerances, output=output, snapshot_interval=snap, seed=seed,
        csv_every=csv_every, k_max=k_max,
    )


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec.to_dict(), sort_keys=False)

