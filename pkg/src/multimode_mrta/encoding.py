"""Task-to-mode encoding: virtual robots, mapping matrices and specialization.

Each (robot, mode) pair is a *virtual robot*. Capabilities reach a virtual
robot through the features of that mode; tasks require capabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class EncodingError(ValueError):
    """Structural problem in an encoding graph."""


@dataclass(frozen=True)
class RobotSpec:
    id: str
    modes: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))


@dataclass(frozen=True)
class EncodingGraph:
    """Robots (with modes), features, capabilities, tasks and the edges among them."""

    robots: tuple[RobotSpec, ...]
    features: tuple[str, ...]
    capabilities: tuple[str, ...]
    tasks: tuple[str, ...]
    mode_feature_edges: tuple[tuple[str, str, str], ...] = ()
    feature_capability_edges: tuple[tuple[str, str], ...] = ()
    task_capability_edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        for name in ("robots", "features", "capabilities", "tasks",
                     "mode_feature_edges", "feature_capability_edges",
                     "task_capability_edges"):
            object.__setattr__(self, name, tuple(tuple(e) if isinstance(e, list) else e
                                                 for e in getattr(self, name)))
        self.validate()

    @property
    def robot_ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.robots)

    def validate(self) -> None:
        for label, ids in (("robot", self.robot_ids), ("feature", self.features),
                           ("capability", self.capabilities), ("task", self.tasks)):
            seen = set()
            for i in ids:
                if i in seen:
                    raise EncodingError(f"duplicate {label} id {i!r}")
                seen.add(i)
        for r in self.robots:
            if len(r.modes) < 1:
                raise EncodingError(f"robot {r.id!r} has no modes")
        features, caps, tasks = set(self.features), set(self.capabilities), set(self.tasks)
        modes = {(r.id, m) for r in self.robots for m in r.modes}
        for robot, mode, feat in self.mode_feature_edges:
            if (robot, mode) not in modes:
                raise EncodingError(f"edge references unknown robot/mode ({robot!r}, {mode!r})")
            if feat not in features:
                raise EncodingError(f"edge references unknown feature {feat!r}")
        for feat, cap in self.feature_capability_edges:
            if feat not in features:
                raise EncodingError(f"edge references unknown feature {feat!r}")
            if cap not in caps:
                raise EncodingError(f"edge references unknown capability {cap!r}")
        for task, cap in self.task_capability_edges:
            if task not in tasks:
                raise EncodingError(f"edge references unknown task {task!r}")
            if cap not in caps:
                raise EncodingError(f"edge references unknown capability {cap!r}")


@dataclass(frozen=True)
class ModeIndex:
    """Bijection between (robot, mode) pairs and virtual robot indices.

    Indices are 0-based here; the ordering is lexicographic in
    (robot position, mode position).
    """

    pairs: tuple[tuple[int, int], ...]
    forward: dict = field(compare=False)
    inverse: dict = field(compare=False)

    @property
    def n_vr(self) -> int:
        return len(self.pairs)

    def modes_of(self, robot: int) -> list[int]:
        """Virtual robot indices belonging to ``robot``, in mode order."""
        return [v for v, (i, _) in enumerate(self.pairs) if i == robot]

    @property
    def robot_of(self) -> np.ndarray:
        return np.array([i for i, _ in self.pairs], dtype=int)


def build_mode_index(graph_or_counts: EncodingGraph | Sequence[int]) -> ModeIndex:
    """Enumerate virtual robots in the order (1,1),...,(1,m_1),...,(n_r,m_nr).

    Accepts either an :class:`EncodingGraph` or a plain list of mode counts.
    """
    if isinstance(graph_or_counts, EncodingGraph):
        counts = [len(r.modes) for r in graph_or_counts.robots]
        for r in graph_or_counts.robots:
            if len(set(r.modes)) != len(r.modes):
                raise EncodingError(f"duplicate (robot, mode) pair for robot {r.id!r}")
    else:
        counts = list(graph_or_counts)
    pairs = []
    for i, m in enumerate(counts):
        if m < 1:
            raise EncodingError(f"robot {i} has {m} modes")
        pairs.extend((i, k) for k in range(m))
    forward = {p: v for v, p in enumerate(pairs)}
    if len(forward) != len(pairs):
        raise EncodingError("duplicate (robot, mode) pair")
    inverse = {v: p for v, p in enumerate(pairs)}
    return ModeIndex(tuple(pairs), forward, inverse)


@dataclass(frozen=True)
class MappingMatrices:
    F: np.ndarray  # capabilities x virtual robots
    T: np.ndarray  # tasks x capabilities


def mapping_matrices(graph: EncodingGraph, idx: ModeIndex) -> MappingMatrices:
    cap_pos = {c: n for n, c in enumerate(graph.capabilities)}
    task_pos = {t: n for n, t in enumerate(graph.tasks)}
    robot_pos = {r.id: n for n, r in enumerate(graph.robots)}
    mode_pos = {(r.id, m): k for r in graph.robots for k, m in enumerate(r.modes)}

    feat_caps: dict[str, set[str]] = {}
    for feat, cap in graph.feature_capability_edges:
        feat_caps.setdefault(feat, set()).add(cap)

    F = np.zeros((len(graph.capabilities), idx.n_vr), dtype=np.int8)
    for robot, mode, feat in graph.mode_feature_edges:
        v = idx.forward[(robot_pos[robot], mode_pos[(robot, mode)])]
        for cap in feat_caps.get(feat, ()):
            F[cap_pos[cap], v] = 1

    T = np.zeros((len(graph.tasks), len(graph.capabilities)), dtype=np.int8)
    for task, cap in graph.task_capability_edges:
        T[task_pos[task], cap_pos[cap]] = 1
    return MappingMatrices(F, T)


def kron_delta(x: np.ndarray) -> np.ndarray:
    """Elementwise Kronecker delta: 1 where ``x == 0``, else 0."""
    return (np.asarray(x) == 0).astype(np.int8)


@dataclass(frozen=True)
class SpecializationSet:
    """Diagonals of S and Pi, one row per virtual robot (shape n_vr x n_t)."""

    s: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=np.int8)
        s.setflags(write=False)
        pi = np.asarray(self.pi, dtype=np.int8)
        pi.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "pi", pi)

    @classmethod
    def from_s(cls, s) -> "SpecializationSet":
        s = np.asarray(s, dtype=np.int8)
        return cls(s, 1 - s)

    def __eq__(self, other):
        if not isinstance(other, SpecializationSet):
            return NotImplemented
        return np.array_equal(self.s, other.s) and np.array_equal(self.pi, other.pi)


def specialization_and_penalty(maps: MappingMatrices) -> SpecializationSet:
    counts = maps.T.astype(int) @ maps.F.astype(int)  # n_t x n_vr
    s = 1 - kron_delta(counts)
    return SpecializationSet.from_s(s.T)


def penalty_from_pseudoinverse(s_diag) -> np.ndarray:
    """Diagonal of I - S S^+ computed with an explicit pseudo-inverse."""
    S = np.diag(np.asarray(s_diag, dtype=float))
    return np.diag(np.eye(len(S)) - S @ np.linalg.pinv(S))


@dataclass(frozen=True)
class Region:
    """Closed axis-aligned rectangle."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise EncodingError(f"empty region {self}")

    def contains(self, point) -> bool:
        px, py = float(point[0]), float(point[1])
        return self.xmin <= px <= self.xmax and self.ymin <= py <= self.ymax


@dataclass(frozen=True)
class Restriction:
    """Modes named in ``modes`` lose every task while their robot is in ``region``."""

    region: Region
    modes: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "modes", frozenset(self.modes))


def apply_region_restriction(spec: SpecializationSet, restrictions: Iterable[Restriction],
                             positions: Sequence, idx: ModeIndex,
                             mode_names: Sequence[str]) -> SpecializationSet:
    """Zero the specialization of restricted virtual robots.

    ``positions[i]`` is robot i's planar position, ``mode_names[v]`` the mode
    name of virtual robot v.
    """
    restrictions = list(restrictions)
    if not restrictions:
        return spec
    s = spec.s.copy()
    for v, (i, _) in idx.inverse.items():
        for r in restrictions:
            if mode_names[v] in r.modes and r.region.contains(positions[i]):
                s[v, :] = 0
    return SpecializationSet.from_s(s)
