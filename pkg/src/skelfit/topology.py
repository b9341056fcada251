"""Skeleton topology: joints, edges, kinematic tree, symmetry, channel layouts.

A topology is immutable. Edges are stored parent->child where a kinematic
tree exists, and edge order matters: channel layouts index edges by position,
and the renderer breaks distance ties toward the lowest edge index.

``flip_map`` encodes left/right relabeling as an involutive permutation of
joint indices. A flipped pose takes joint ``k``'s coordinates from joint
``flip_map[k]``; geometry is untouched, only labels move.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import TopologyError

__all__ = [
    "SkeletonTopology",
    "default_human_topology",
    "flip_pose",
    "validate_topology",
    "topology_to_dict",
    "topology_from_dict",
    "load_topology",
    "save_topology",
]


@dataclass(frozen=True)
class SkeletonTopology:
    joints: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]
    parents: tuple[int | None, ...]
    flip_map: tuple[int, ...]
    channel_layouts: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(self.joints))
        object.__setattr__(self, "edges", tuple((int(i), int(j)) for i, j in self.edges))
        object.__setattr__(
            self, "parents", tuple(None if p is None else int(p) for p in self.parents)
        )
        object.__setattr__(self, "flip_map", tuple(int(k) for k in self.flip_map))
        object.__setattr__(
            self,
            "channel_layouts",
            {str(n): tuple(int(c) for c in lay) for n, lay in self.channel_layouts.items()},
        )

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def edge_array(self) -> np.ndarray:
        a = np.asarray(self.edges, dtype=np.intp).reshape(self.n_edges, 2)
        a.setflags(write=False)
        return a

    @cached_property
    def flip_array(self) -> np.ndarray:
        a = np.asarray(self.flip_map, dtype=np.intp)
        a.setflags(write=False)
        return a

    def joint_index(self, name: str) -> int:
        try:
            return self.joints.index(name)
        except ValueError:
            raise TopologyError(f"unknown joint name {name!r}") from None

    def layout_channels(self, layout: str) -> int:
        lay = self._layout(layout)
        return max(lay) + 1 if lay else 0

    def layout_rows(self, layout: str) -> list[np.ndarray]:
        """Edge indices per channel, ascending within each channel."""
        lay = self._layout(layout)
        n = max(lay) + 1 if lay else 0
        rows = [[] for _ in range(n)]
        for e, c in enumerate(lay):
            rows[c].append(e)
        return [np.asarray(r, dtype=np.intp) for r in rows]

    def _layout(self, layout: str) -> tuple[int, ...]:
        try:
            return self.channel_layouts[layout]
        except KeyError:
            known = ", ".join(sorted(self.channel_layouts)) or "none"
            raise TopologyError(f"unknown channel layout {layout!r} (have: {known})") from None

    def topological_order(self) -> list[int]:
        """Joint indices ordered so every parent precedes its children."""
        children: list[list[int]] = [[] for _ in self.parents]
        roots = []
        for k, p in enumerate(self.parents):
            if p is None:
                roots.append(k)
            else:
                children[p].append(k)
        order: list[int] = []
        stack = list(reversed(roots))
        while stack:
            k = stack.pop()
            order.append(k)
            stack.extend(reversed(children[k]))
        if len(order) != self.n_joints:
            raise TopologyError("parents do not form a forest (cycle present)")
        return order


def flip_pose(keypoints: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Relabel left/right: row ``k`` of the result is row ``flip_map[k]``
    of the input. Works for (J, D) poses and (..., J, D) batches."""
    kp = np.asarray(keypoints)
    if kp.ndim < 2 or kp.shape[-2] != topology.n_joints:
        raise ValueError(
            f"expected (..., {topology.n_joints}, D) keypoints, got shape {kp.shape}"
        )
    return kp[..., topology.flip_array, :]


# --- validation -----------------------------------------------------------

def validate_topology(topology: SkeletonTopology) -> list[str]:
    """All structural problems, as human-readable strings. Empty when valid."""
    problems: list[str] = []
    J = topology.n_joints
    if J == 0:
        return ["topology has no joints"]
    if len(set(topology.joints)) != J:
        problems.append("joint names are not unique")

    for e, (i, j) in enumerate(topology.edges):
        if not (0 <= i < J and 0 <= j < J):
            problems.append(f"edge {e}: joint index out of range: ({i}, {j})")
        elif i == j:
            problems.append(f"edge {e}: self-loop at joint {i}")

    if len(topology.parents) != J:
        problems.append(
            f"parents has {len(topology.parents)} entries, expected {J}"
        )
    else:
        for k, p in enumerate(topology.parents):
            if p is not None and not (0 <= p < J):
                problems.append(f"joint {k}: parent index {p} out of range")
        # Walk up from every joint; a chain longer than J joints is a cycle.
        for k in range(J):
            seen = 0
            p = topology.parents[k]
            while p is not None and seen <= J:
                if not (0 <= p < J):
                    break
                p = topology.parents[p]
                seen += 1
            if seen > J:
                problems.append(f"joint {k}: ancestor chain has a cycle")
                break

    fm = topology.flip_map
    if len(fm) != J:
        problems.append(f"flip_map has {len(fm)} entries, expected {J}")
    elif any(not (0 <= f < J) for f in fm):
        problems.append("flip_map: index out of range")
    elif sorted(fm) != list(range(J)):
        problems.append("flip_map: not a permutation")
    else:
        bad = [k for k in range(J) if fm[fm[k]] != k]
        if bad:
            problems.append(f"flip_map: not an involution at joints {bad}")
        undirected = {frozenset(e) for e in topology.edges}
        for e, (i, j) in enumerate(topology.edges):
            if 0 <= i < J and 0 <= j < J and i != j:
                if frozenset((fm[i], fm[j])) not in undirected:
                    problems.append(
                        f"edge {e}: flip image ({fm[i]}, {fm[j]}) is not an edge"
                    )

    E = topology.n_edges
    for name, lay in topology.channel_layouts.items():
        if len(lay) != E:
            problems.append(f"layout {name!r}: {len(lay)} entries, expected {E}")
            continue
        if any(c < 0 for c in lay):
            problems.append(f"layout {name!r}: negative channel index")
            continue
        if lay:
            used = set(lay)
            missing = sorted(set(range(max(lay) + 1)) - used)
            if missing:
                problems.append(
                    f"layout {name!r}: channel indices not dense, missing {missing}"
                )
    return problems


def _checked(topology: SkeletonTopology) -> SkeletonTopology:
    problems = validate_topology(topology)
    if problems:
        raise TopologyError("; ".join(problems))
    return topology


# --- default human skeleton ----------------------------------------------

_JOINTS = (
    "pelvis", "spine", "chest", "neck", "head",
    "left_hip", "left_knee", "left_ankle",
    "right_hip", "right_knee", "right_ankle",
    "left_shoulder", "left_elbow", "left_wrist",
    "right_shoulder", "right_elbow", "right_wrist",
)

_EDGES = (
    (0, 1), (1, 2), (2, 3), (3, 4),          # torso chain
    (0, 5), (5, 6), (6, 7),                  # left leg
    (0, 8), (8, 9), (9, 10),                 # right leg
    (2, 11), (11, 12), (12, 13),             # left arm
    (2, 14), (14, 15), (15, 16),             # right arm
)

_PARENTS = (None, 0, 1, 2, 3, 0, 5, 6, 0, 8, 9, 2, 11, 12, 2, 14, 15)

_FLIP = (0, 1, 2, 3, 4, 8, 9, 10, 5, 6, 7, 14, 15, 16, 11, 12, 13)

_LAYOUTS = {
    "1ch": (0,) * 16,
    "3ch": (0, 0, 0, 0, 2, 2, 2, 2, 2, 2, 1, 1, 1, 1, 1, 1),
    "5ch": (0, 0, 0, 0, 3, 3, 3, 4, 4, 4, 1, 1, 1, 2, 2, 2),
}

_DEFAULT: SkeletonTopology | None = None


def default_human_topology() -> SkeletonTopology:
    """17-joint human skeleton with 1/3/5-channel layouts.

    Channel semantics: 1ch puts everything in channel 0; 3ch groups
    torso / arms / legs; 5ch splits into torso / left arm / right arm /
    left leg / right leg.
    """
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = _checked(
            SkeletonTopology(_JOINTS, _EDGES, _PARENTS, _FLIP, dict(_LAYOUTS))
        )
    return _DEFAULT


# --- serialization --------------------------------------------------------

def topology_to_dict(topology: SkeletonTopology) -> dict:
    return {
        "joints": list(topology.joints),
        "edges": [list(e) for e in topology.edges],
        "parents": [p for p in topology.parents],
        "flip_map": list(topology.flip_map),
        "channel_layouts": {n: list(l) for n, l in topology.channel_layouts.items()},
    }


def topology_from_dict(data: dict) -> SkeletonTopology:
    if not isinstance(data, dict):
        raise TopologyError(f"topology must be a JSON object, got {type(data).__name__}")
    required = ("joints", "edges", "parents", "flip_map")
    missing = [k for k in required if k not in data]
    if missing:
        raise TopologyError(f"topology is missing keys: {missing}")
    extra = sorted(set(data) - {*required, "channel_layouts"})
    if extra:
        raise TopologyError(f"topology has unknown keys: {extra}")
    try:
        topo = SkeletonTopology(
            joints=tuple(data["joints"]),
            edges=tuple(tuple(e) for e in data["edges"]),
            parents=tuple(data["parents"]),
            flip_map=tuple(data["flip_map"]),
            channel_layouts={n: tuple(l) for n, l in data.get("channel_layouts", {}).items()},
        )
    except (TypeError, ValueError) as exc:
        raise TopologyError(f"malformed topology fields: {exc}") from exc
    return _checked(topo)


def load_topology(path) -> SkeletonTopology:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TopologyError(f"{path}: not valid JSON: {exc}") from exc
    return topology_from_dict(data)


def save_topology(topology: SkeletonTopology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(topology_to_dict(topology), fh, indent=2)
        fh.write("\n")
