"""Scenario files: YAML documents with a versioned schema.

Top-level keys::

    schema_version: 1
    name: str
    params: {k_v, l1, l2, kappa, delta_max, v_eff, gamma1, gamma2, dt, t_end,
             c, c1, c2, tau_min, tau_max, tau_points, completion_radius,
             cert_sample_hz}            # all optional
    features: [str, ...]
    capabilities: [str, ...]
    feature_capabilities: [[feature, capability], ...]
    robots:
      - id: str
        position: [x, y]
        velocity: [vx, vy]              # body frame, optional
        heading: theta                  # rad, optional
        modes:
          - name: str
            kind: cruise | hovering
            features: [str, ...]
            energy: {weights: [..], u_eff: [..]}   # optional
    tasks:
      - id: str
        target: [x, y]
        capabilities: [str, ...]
        n_min: int                      # default 1
        n_max: int                      # default 1
    restrictions:
      - region: {x: [xmin, xmax], y: [ymin, ymax]}
        modes: [mode name, ...]
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .allocator import AllocationParams
from .cbf import LinearClassK, TaskSpec
from .dynamics import (CRUISE_COLUMNS, HOVERING_COLUMNS, EnergyParams, ModeSpec, UavState)
from .encoding import EncodingError, EncodingGraph, Region, Restriction, RobotSpec

SCHEMA_VERSION = 1
_ID = re.compile(r"^[A-Za-z0-9_.-]+$")  # ids end up in file names and CSV headers


class ScenarioError(ValueError):
    """Parse or validation failure; ``where`` names the offending line or field."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass(frozen=True)
class SimParams:
    k_v: float = 4.0
    l1: float = 1e6
    l2: float = 1e-4
    kappa: float = 1e4
    delta_max: float = 1e4
    v_eff: float = 2.0
    gamma1: float = 5.0
    gamma2: float = 1.0
    dt: float = 0.01
    t_end: float = 10.0
    c: float = 1.0
    c1: float = 1.0
    c2: float = 1.0
    tau_min: float = 1e-3
    tau_max: float = 1e3
    tau_points: int = 13
    completion_radius: float = 0.05
    cert_sample_hz: float = 1.0

    def validate(self) -> None:
        if not self.dt > 0:
            raise ScenarioError("dt must be positive", "params.dt")
        if not self.t_end >= self.dt:
            raise ScenarioError("t_end must be at least dt", "params.t_end")
        for name in ("k_v", "l1", "l2", "delta_max", "v_eff", "gamma1", "gamma2", "c", "c1",
                     "c2", "tau_min", "tau_max", "completion_radius", "cert_sample_hz"):
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be positive", f"params.{name}")
        if not self.kappa > 1:
            raise ScenarioError("kappa must exceed 1", "params.kappa")
        if self.tau_points < 1 or self.tau_min > self.tau_max:
            raise ScenarioError("empty tau grid", "params.tau_points")

    @property
    def allocation(self) -> AllocationParams:
        return AllocationParams(self.l1, self.l2, self.kappa, self.delta_max)

    @property
    def tau_grid(self) -> np.ndarray:
        return np.geomspace(self.tau_min, self.tau_max, self.tau_points)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class RobotSetup:
    id: str
    initial: UavState
    modes: tuple[ModeSpec, ...]


@dataclass(frozen=True)
class Scenario:
    name: str
    graph: EncodingGraph
    robots: tuple[RobotSetup, ...]
    tasks: tuple[TaskSpec, ...]
    restrictions: tuple[Restriction, ...] = ()
    params: SimParams = field(default_factory=SimParams)

    def with_params(self, **changes) -> "Scenario":
        from dataclasses import replace
        params = replace(self.params, **changes)
        params.validate()
        return replace(self, params=params)

    @property
    def modes(self) -> list[ModeSpec]:
        """Mode specs in virtual-robot order."""
        return [m for r in self.robots for m in r.modes]


def _get(d, key, where, default=..., kind=None):
    if key not in d:
        if default is ...:
            raise ScenarioError("missing required field", f"{where}.{key}")
        return default
    val = d[key]
    if kind is not None and not isinstance(val, kind):
        raise ScenarioError(f"expected {getattr(kind, '__name__', kind)}", f"{where}.{key}")
    return val


def _ident(val, where) -> str:
    val = str(val)
    if not _ID.match(val):
        raise ScenarioError(f"identifier {val!r} may only use letters, digits, '_', '.', '-'", where)
    return val


def _vec(val, n, where):
    try:
        arr = np.array(val, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ScenarioError(f"expected a list of {n} numbers", where) from None
    if arr.size != n or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"expected a list of {n} finite numbers", where)
    return arr


_KINDS = {"cruise": CRUISE_COLUMNS, "hovering": HOVERING_COLUMNS}


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("top level must be a mapping")
    version = _get(doc, "schema_version", "scenario")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema version {version!r}", "scenario.schema_version")
    raw_params = _get(doc, "params", "scenario", {}, dict) or {}
    known = set(SimParams.__dataclass_fields__)
    for key in raw_params:
        if key not in known:
            raise ScenarioError("unknown parameter", f"params.{key}")
    try:
        kwargs = {k: (int(v) if k == "tau_points" else float(v)) for k, v in raw_params.items()}
    except (TypeError, ValueError):
        raise ScenarioError("parameters must be numeric", "params") from None
    params = SimParams(**kwargs)
    params.validate()

    features = [str(f) for f in _get(doc, "features", "scenario", [], list)]
    capabilities = [str(c) for c in _get(doc, "capabilities", "scenario", [], list)]
    fc_edges = []
    for n, e in enumerate(_get(doc, "feature_capabilities", "scenario", [], list)):
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise ScenarioError("expected [feature, capability]", f"feature_capabilities[{n}]")
        fc_edges.append((str(e[0]), str(e[1])))

    robots, robot_specs, mf_edges = [], [], []
    for n, r in enumerate(_get(doc, "robots", "scenario", kind=list)):
        where = f"robots[{n}]"
        if not isinstance(r, dict):
            raise ScenarioError("expected a mapping", where)
        rid = _ident(_get(r, "id", where), f"{where}.id")
        x = _vec(_get(r, "position", where), 2, f"{where}.position")
        vel = _vec(_get(r, "velocity", where, [0.0, 0.0]), 2, f"{where}.velocity")
        theta = float(_get(r, "heading", where, 0.0))
        modes = []
        for k, m in enumerate(_get(r, "modes", where, kind=list)):
            mw = f"{where}.modes[{k}]"
            if not isinstance(m, dict):
                raise ScenarioError("expected a mapping", mw)
            name = _ident(_get(m, "name", mw), f"{mw}.name")
            kind = str(_get(m, "kind", mw))
            if kind not in _KINDS:
                raise ScenarioError(f"unknown mode kind {kind!r}", f"{mw}.kind")
            default_eff = (params.v_eff, 0.0) if kind == "cruise" else (0.0, 0.0)
            energy = _get(m, "energy", mw, {}, dict) or {}
            try:
                ep = EnergyParams(_vec(energy.get("weights", [1.0, 1.0]), 2, f"{mw}.energy.weights"),
                                  _vec(energy.get("u_eff", default_eff), 2, f"{mw}.energy.u_eff"))
            except ValueError as exc:
                if isinstance(exc, ScenarioError):
                    raise
                raise ScenarioError(str(exc), f"{mw}.energy") from None
            modes.append(ModeSpec(name, _KINDS[kind], ep))
            for feat in _get(m, "features", mw, [], list):
                mf_edges.append((rid, name, str(feat)))
        robots.append(RobotSetup(rid, UavState(x, [vel[0], vel[1], theta]), tuple(modes)))
        robot_specs.append(RobotSpec(rid, tuple(m.name for m in modes)))

    tasks, tc_edges = [], []
    for n, t in enumerate(_get(doc, "tasks", "scenario", kind=list)):
        where = f"tasks[{n}]"
        if not isinstance(t, dict):
            raise ScenarioError("expected a mapping", where)
        tid = _ident(_get(t, "id", where), f"{where}.id")
        try:
            tasks.append(TaskSpec(tid, _vec(_get(t, "target", where), 2, f"{where}.target"),
                                  LinearClassK(params.gamma1), LinearClassK(params.gamma2),
                                  int(_get(t, "n_min", where, 1)), int(_get(t, "n_max", where, 1))))
        except ScenarioError:
            raise
        except ValueError as exc:
            raise ScenarioError(str(exc), where) from None
        for cap in _get(t, "capabilities", where, [], list):
            tc_edges.append((tid, str(cap)))

    restrictions = []
    for n, rr in enumerate(_get(doc, "restrictions", "scenario", [], list) or []):
        where = f"restrictions[{n}]"
        region = _get(rr, "region", where, kind=dict)
        xs = _vec(_get(region, "x", f"{where}.region"), 2, f"{where}.region.x")
        ys = _vec(_get(region, "y", f"{where}.region"), 2, f"{where}.region.y")
        try:
            reg = Region(xs[0], xs[1], ys[0], ys[1])
        except EncodingError as exc:
            raise ScenarioError(str(exc), f"{where}.region") from None
        restrictions.append(Restriction(reg, frozenset(str(m) for m in _get(rr, "modes", where, kind=list))))

    try:
        graph = EncodingGraph(tuple(robot_specs), tuple(features), tuple(capabilities),
                              tuple(t.id for t in tasks), tuple(mf_edges), tuple(fc_edges),
                              tuple(tc_edges))
    except EncodingError as exc:
        raise ScenarioError(str(exc), "graph") from None
    all_modes = {m for r in robot_specs for m in r.modes}
    for n, rr in enumerate(restrictions):
        for m in rr.modes:
            if m not in all_modes:
                raise ScenarioError(f"unknown mode {m!r}", f"restrictions[{n}].modes")
    if not robots or not tasks:
        raise ScenarioError("need at least one robot and one task", "scenario")
    return Scenario(str(doc.get("name", "scenario")), graph, tuple(robots), tuple(tasks),
                    tuple(restrictions), params)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise ScenarioError(f"parse error: {exc.problem}", where) from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"parse error: {exc}", str(path)) from None
    return scenario_from_dict(doc)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (``single_uav`` or ``band_mud``)."""
    ref = resources.files("multimode_mrta") / "scenarios" / f"{name}.yaml"
    return Path(str(ref))


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_scenario_path(name))
