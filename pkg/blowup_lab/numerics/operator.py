from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from blowup_lab.config import settings
from blowup_lab.models.domain import PotentialSpec
from blowup_lab.numerics.grid import Grid

logger = logging.getLogger(__name__)

_DIRECTIONS = [(axis, sign) for axis in range(3) for sign in (-1, 1)]


@dataclass(frozen=True, eq=False)
class DirichletOperator:
    """7-point discretization of -Laplace + a on the unknown nodes of a grid.

    Pinned neighbours are eliminated: `arm_rows[m]` receives
    `arm_weights[m] * g(arm_points[m])` on the right side for Dirichlet data g.
    """
    grid: Grid
    matrix: sp.csr_matrix
    diagonal: np.ndarray
    unknown_index: np.ndarray
    unknown_nodes: np.ndarray
    arm_rows: np.ndarray
    arm_weights: np.ndarray
    arm_points: np.ndarray
    potential_min: float

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def boundary_rhs(self, data: np.ndarray) -> np.ndarray:
        rhs = np.zeros(self.size)
        np.add.at(rhs, self.arm_rows, self.arm_weights * data)
        return rhs

    def scatter(self, values: np.ndarray, fill: np.ndarray | float = 0.0) -> np.ndarray:
        """Place unknown values on the full node lattice."""
        out = np.broadcast_to(np.asarray(fill, dtype=float), (self.grid.n,) * 3).copy()
        out[tuple(self.unknown_nodes.T)] = values
        return out


def assemble_operator(grid: Grid, potential: PotentialSpec) -> DirichletOperator:
    interior = grid.interior
    unknown_nodes = np.argwhere(interior)
    unknown_index = -np.ones(interior.shape, dtype=np.int64)
    unknown_index[tuple(unknown_nodes.T)] = np.arange(len(unknown_nodes))
    coords = grid.nodes[tuple(unknown_nodes.T)]
    inv_h2 = 1.0 / grid.h**2

    a_values = grid.potential_on_nodes(potential)[tuple(unknown_nodes.T)]
    diagonal = a_values.copy()
    rows, cols, vals = [], [], []
    arm_rows, arm_weights, arm_points = [], [], []
    rank = np.arange(len(unknown_nodes))

    for axis, sign in _DIRECTIONS:
        nb = unknown_nodes.copy()
        nb[:, axis] += sign
        inside = (nb[:, axis] >= 0) & (nb[:, axis] < grid.n)
        nb_index = np.full(len(nb), -1, dtype=np.int64)
        nb_index[inside] = unknown_index[tuple(nb[inside].T)]
        coupled = nb_index >= 0

        diagonal += inv_h2[axis]
        rows.append(rank[coupled])
        cols.append(nb_index[coupled])
        vals.append(np.full(int(coupled.sum()), -inv_h2[axis]))

        # ghost value u_G = u_b/theta + (1 - 1/theta) u_i, linear through the boundary point
        cut = ~coupled
        if not np.any(cut):
            continue
        dist = grid.boundary_crossing(coords[cut], axis, sign)
        theta = np.clip(dist / grid.h[axis], settings.GHOST_MIN_FRACTION, 1.0)
        diagonal[cut] += (1.0 / theta - 1.0) * inv_h2[axis]
        points = coords[cut].copy()
        points[:, axis] += sign * theta * grid.h[axis]
        arm_rows.append(rank[cut])
        arm_weights.append(inv_h2[axis] / theta)
        arm_points.append(points)

    rows.append(rank)
    cols.append(rank)
    vals.append(diagonal)
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(unknown_nodes),) * 2,
    )
    logger.debug("assembled operator: %d unknowns, %d boundary arms", matrix.shape[0],
                 sum(len(r) for r in arm_rows))
    return DirichletOperator(
        grid=grid,
        matrix=matrix,
        diagonal=diagonal,
        unknown_index=unknown_index,
        unknown_nodes=unknown_nodes,
        arm_rows=np.concatenate(arm_rows) if arm_rows else np.zeros(0, dtype=np.int64),
        arm_weights=np.concatenate(arm_weights) if arm_weights else np.zeros(0),
        arm_points=np.concatenate(arm_points) if arm_points else np.zeros((0, 3)),
        potential_min=float(a_values.min()) if len(a_values) else 0.0,
    )
