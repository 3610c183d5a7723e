"""Common container for (rho, u) trajectories sampled on a reference grid."""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .fields import gradient_values
from .motion import _mat_inv, mat_det


class StateTrajectory:
    """Time levels of (rho, u) fields sampled on the reference grid.

    When a flow map is attached, the samples live at the moving nodes
    X(t_m, y) (reference representation of fields on Omega_t); with
    ``flow_map=None`` the domain is static and samples sit at the nodes.
    """

    def __init__(self, times, rho_fields, u_fields, flow_map=None, meta=None):
        self.times = np.asarray(times, dtype=float)
        self.rho = list(rho_fields)
        self.u = list(u_fields)
        if len(self.rho) != len(self.times) or len(self.u) != len(self.times):
            raise InvalidArgumentError("one rho and one u field per time level")
        self.flow_map = flow_map
        self.grid = self.rho[0].grid
        self.meta = dict(meta or {})

    def __len__(self):
        return len(self.times)

    def level_index(self, t):
        m = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[m] - t) > 1e-9 * max(1.0, abs(t)):
            raise InvalidArgumentError(f"t={t} is not a stored level")
        return m

    def positions(self, m):
        if self.flow_map is None:
            return self.grid.node_coords()
        return self.flow_map.positions(self.times[m])

    def jacobians(self, m):
        d = self.grid.dim
        if self.flow_map is None:
            return np.broadcast_to(np.eye(d), (self.grid.num_nodes, d, d))
        return self.flow_map.jacobians(self.times[m])

    def physical_weights(self, m):
        """Trapezoid weights on the current physical image (w_ref * det)."""
        det = mat_det(self.jacobians(m)).reshape(self.grid.shape)
        return self.grid.quadrature_weights() * det

    def physical_velocity_gradient(self, m):
        """grad_x u as (N, d, d) via the inverse Jacobian transform."""
        d = self.grid.dim
        gy = gradient_values(self.u[m])  # (c, d) + shape
        gy = np.moveaxis(gy.reshape(d, d, -1), -1, 0)  # (N, i, j): du_i/dy_j
        Jinv = _mat_inv(self.jacobians(m))
        return np.einsum("pij,pjk->pik", gy, Jinv)
