"""Box domains with tensor-product quadrature grids.

Every integral over the box is computed as ``sum_j w_j v_j`` on the nodes
built here. Nodes are stored in C order of an ``indexing="ij"`` mesh, so the
flat index of node ``(i_1, ..., i_d)`` is ``np.ravel_multi_index``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

RULES = ("trapezoid", "gauss-legendre")


@dataclass(frozen=True)
class GridPoint:
    coords: np.ndarray
    index: int
    weight: float


def _axis_rule(side: float, n: int, rule: str) -> tuple[np.ndarray, np.ndarray]:
    if rule == "trapezoid":
        x = np.linspace(0.0, side, n)
        h = side / (n - 1)
        w = np.full(n, h)
        w[0] = w[-1] = 0.5 * h
    elif rule == "gauss-legendre":
        t, wt = np.polynomial.legendre.leggauss(n)
        x = 0.5 * side * (t + 1.0)
        w = 0.5 * side * wt
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")
    # Exact mirror symmetry about the midpoint; the symmetry-adapted
    # eigensolver relies on reflected nodes matching bit for bit.
    half = n // 2
    x[n - half:] = side - x[:half][::-1]
    if n % 2:
        x[half] = 0.5 * side
    w = 0.5 * (w + w[::-1])
    return x, w


class BoxDomain:
    """Axis-aligned box ``[0, S_1] x ... x [0, S_d]`` with a tensor quadrature.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1, 2 or 3.
    side_lengths : sequence of float
        Side length per axis. A single value is broadcast to all axes.
    nodes_per_axis : int
        Quadrature nodes per axis (at least 2).
    rule : {"gauss-legendre", "trapezoid"}
        One-dimensional rule used on every axis.
    """

    def __init__(self, dim: int, side_lengths: Sequence[float] | float,
                 nodes_per_axis: int, rule: str = "gauss-legendre"):
        if dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
        sides = np.atleast_1d(np.asarray(side_lengths, dtype=float))
        if sides.size == 1 and dim > 1:
            sides = np.repeat(sides, dim)
        if sides.shape != (dim,):
            raise ValueError(f"expected {dim} side lengths, got {sides.size}")
        if not np.all(np.isfinite(sides)) or np.any(sides <= 0):
            raise ValueError(f"side lengths must be finite and positive, got {sides.tolist()}")
        if int(nodes_per_axis) != nodes_per_axis or nodes_per_axis < 2:
            raise ValueError(f"nodes_per_axis must be an integer >= 2, got {nodes_per_axis}")
        if rule not in RULES:
            raise ValueError(f"unknown quadrature rule {rule!r}; expected one of {RULES}")

        self.dim = int(dim)
        self.side_lengths = tuple(float(s) for s in sides)
        self.nodes_per_axis = int(nodes_per_axis)
        self.rule = rule

        axes, axis_weights = zip(*(_axis_rule(s, self.nodes_per_axis, rule)
                                   for s in self.side_lengths))
        self.axes = tuple(a.copy() for a in axes)
        self.axis_weights = tuple(w.copy() for w in axis_weights)

        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.nodes = np.stack([m.ravel() for m in mesh], axis=-1)
        wmesh = np.meshgrid(*self.axis_weights, indexing="ij")
        self.weights = np.prod(np.stack([m.ravel() for m in wmesh]), axis=0)
        for arr in (self.nodes, self.weights, *self.axes, *self.axis_weights):
            arr.setflags(write=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nodes_per_axis,) * self.dim

    @property
    def node_count(self) -> int:
        return self.nodes.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.side_lengths))

    @property
    def length_scale(self) -> float:
        """Single length ``L = vol ** (1 / dim)``, also used for anisotropic boxes."""
        return self.volume ** (1.0 / self.dim)

    @cached_property
    def boundary_distance(self) -> np.ndarray:
        """Distance of every node to the nearest face of the box."""
        sides = np.asarray(self.side_lengths)
        return np.min(np.minimum(self.nodes, sides - self.nodes), axis=1)

    def point(self, index: int) -> GridPoint:
        if not 0 <= index < self.node_count:
            raise IndexError(f"node index {index} out of range [0, {self.node_count})")
        return GridPoint(self.nodes[index].copy(), int(index), float(self.weights[index]))

    def flat_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.shape))

    def multi_index(self, index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(index, self.shape))

    def offset_node(self, index: int, offset: Sequence[int]) -> int:
        """Flat index of the node ``offset`` grid steps away from ``index``.

        Raises ``ValueError`` when the shifted node falls outside the grid.
        """
        offset = tuple(int(o) for o in np.atleast_1d(offset))
        if len(offset) != self.dim:
            raise ValueError(f"offset must have {self.dim} components")
        target = [i + o for i, o in zip(self.multi_index(index), offset)]
        if any(t < 0 or t >= self.nodes_per_axis for t in target):
            raise ValueError(f"offset {offset} from node {index} leaves the domain")
        return self.flat_index(target)

    def to_grid(self, values: np.ndarray) -> np.ndarray:
        """Reshape trailing node axis to the tensor-grid shape."""
        values = np.asarray(values)
        return values.reshape(values.shape[:-1] + self.shape)

    def describe(self) -> dict:
        return {
            "dim": self.dim,
            "side_lengths": list(self.side_lengths),
            "nodes_per_axis": self.nodes_per_axis,
            "rule": self.rule,
        }

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BoxDomain) and self.describe() == other.describe()

    def __hash__(self) -> int:
        return hash((self.dim, self.side_lengths, self.nodes_per_axis, self.rule))

    def __repr__(self) -> str:
        return (f"BoxDomain(dim={self.dim}, side_lengths={list(self.side_lengths)}, "
                f"nodes_per_axis={self.nodes_per_axis}, rule={self.rule!r})")


def build_domain(dim: int, side_lengths: Sequence[float] | float,
                 nodes_per_axis: int, rule: str = "gauss-legendre") -> BoxDomain:
    return BoxDomain(dim, side_lengths, nodes_per_axis, rule)


def integrate(domain: BoxDomain, values_at_nodes) -> float | np.ndarray:
    """Quadrature ``sum_j w_j v_j`` over the last axis of ``values_at_nodes``."""
    values = np.asarray(values_at_nodes, dtype=float)
    if values.ndim == 0 or values.shape[-1] != domain.node_count:
        raise ValueError(
            f"expected {domain.node_count} values along the last axis, "
            f"got shape {values.shape}")
    out = values @ domain.weights
    return float(out) if np.ndim(out) == 0 else out
