import numpy as np
import pytest

from nsmove.errors import InvalidArgumentError
from nsmove.fields import Field, Grid, differentiate
from nsmove.motion import (
    MotionField,
    advect_flow_map,
    boundary_frame,
    flow_jacobians,
    invert_flow_map,
)


def grid1d(n=17):
    return Grid((n,), (0.0,), (1.0,))


def grid2d(n=9):
    return Grid((n, n), (0.0, 0.0), (1.0, 1.0))


class TestAdvect:
    def test_zero_motion(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.zero(2), g, 0.5, 0.05, with_hessian=True)
        nodes = g.node_coords()
        assert np.allclose(fm.positions(0.5), nodes)
        assert np.allclose(fm.jacobians(0.5), np.eye(2))
        assert np.allclose(fm.hessians(0.5), 0.0)

    def test_translation_exact(self):
        g = grid2d()
        c = np.array([0.3, -0.1])
        fm = advect_flow_map(MotionField.translation(c), g, 1.0, 0.1)
        nodes = g.node_coords()
        assert np.allclose(fm.positions(1.0), nodes + c, atol=1e-14)
        assert np.allclose(fm.jacobians(1.0), np.eye(2), atol=1e-14)

    def test_dilation_closed_form(self):
        # dX/dt = alpha X has the exponential as its closed-form oracle
        g = Grid((5,), (0.5, ), (1.5, ))
        fm = advect_flow_map(MotionField.dilation(0.5, 1), g, 1.0, 1e-3)
        pos = fm.positions(1.0)[:, 0]
        exact = g.node_coords()[:, 0] * np.exp(0.5)
        assert np.max(np.abs(pos - exact)) <= 1e-8

    def test_initial_identity(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.shear(0.4), g, 0.2, 0.02)
        assert np.array_equal(fm.positions(0.0), g.node_coords())

    def test_nonintegral_steps_rejected(self):
        g = grid1d()
        with pytest.raises(InvalidArgumentError):
            advect_flow_map(MotionField.zero(1), g, 1.0, 0.3)


class TestInvert:
    def test_identity(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.zero(2), g, 0.5, 0.05)
        x = np.array([[0.3, 0.7], [0.0, 1.0]])
        assert np.allclose(fm.invert(0.5, x), x)

    def test_translation(self):
        g = grid2d(17)
        c = np.array([0.2, 0.1])
        fm = advect_flow_map(MotionField.translation(c), g, 0.5, 0.05)
        x = np.array([[0.6, 0.6], [0.25, 0.35]])
        z = invert_flow_map(fm, 0.5, x)
        assert np.max(np.abs(z - (x - 0.5 * c))) < 1e-9

    def test_dilation_round_trip(self):
        g = Grid((33,), (0.25,), (1.25,))
        alpha = 0.4
        fm = advect_flow_map(MotionField.dilation(alpha, 1), g, 0.5, 1e-2)
        x = np.linspace(0.4, 1.5, 7)[:, None]
        z = fm.invert(0.5, x)
        assert np.max(np.abs(z - np.exp(-alpha * 0.5) * x)) < 1e-9
        back = fm.eval_forward(0.5, z)
        assert np.max(np.abs(back - x)) < 1e-9


class TestJacobians:
    def test_zero_gap(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.zero(2), g, 0.3, 0.05)
        _, _, _, gap = flow_jacobians(fm, 0.3)
        assert gap == 0.0

    def test_dilation_1d(self):
        g = grid1d()
        alpha, t = 0.3, 0.5
        fm = advect_flow_map(MotionField.dilation(alpha, 1), g, t, 1e-3)
        gx, gy, _, gap = flow_jacobians(fm, t)
        assert np.allclose(gx[:, 0, 0], np.exp(alpha * t), atol=1e-9)
        assert np.allclose(gy[:, 0, 0], np.exp(-alpha * t), atol=1e-9)
        assert abs(gap - abs(np.exp(-alpha * t) - 1)) < 1e-9

    def test_linear_motion_zero_hessian(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.shear(0.5), g, 0.4, 0.02, with_hessian=True)
        assert np.max(np.abs(fm.hessians(0.4))) <= 1e-10

    def test_jacobian_matches_fd_of_trajectories(self):
        # gradX from the Jacobian ODE vs differentiate() of the node positions
        g = Grid((33, 33), (0.0, 0.0), (1.0, 1.0))
        V = MotionField.expression(
            lambda t, p: np.stack([0.2 * np.sin(np.pi * p[:, 0]),
                                   0.1 * p[:, 1] ** 2], axis=-1), 2)
        fm = advect_flow_map(V, g, 0.2, 0.01)
        pos = fm.positions(0.2).T.reshape((2,) + tuple(g.shape))
        ode = fm.jacobians(0.2)  # (N, 2, 2)
        err = 0.0
        for i in range(2):
            for j in range(2):
                fd = differentiate(Field(g, pos[i]), j, 1).values[0].ravel()
                err = max(err, np.max(np.abs(fd - ode[:, i, j])))
        assert err < 5e-3  # O(h^2) with h = 1/32

    def test_semigroup(self):
        g = grid2d(9)
        V = MotionField.expression(
            lambda t, p: np.stack([0.3 * p[:, 1] * (1 + 0.5 * t),
                                   -0.2 * p[:, 0]], axis=-1), 2)
        whole = advect_flow_map(V, g, 0.4, 0.01)
        half = advect_flow_map(V, g, 0.2, 0.01)
        rest = advect_flow_map(V, g, 0.2, 0.01, t0=0.2,
                               X0=half.X[-1], J0=half.J[-1])
        assert np.max(np.abs(whole.positions(0.4) - rest.positions(0.4))) < 1e-9
        assert np.max(np.abs(whole.jacobians(0.4) - rest.jacobians(0.4))) < 1e-9

    def test_gap_growth_trend(self):
        g = grid2d(9)
        V = MotionField.shear(0.8)
        gaps = []
        for T in (0.05, 0.1, 0.2):
            fm = advect_flow_map(V, g, T, 0.005)
            gaps.append(flow_jacobians(fm, T)[3])
        assert gaps[0] <= gaps[1] <= gaps[2]
        # sup-norm gap bounded by C sqrt(t) ||V|| trend
        assert all(gap <= 2.0 * np.sqrt(T) * 0.8
                   for gap, T in zip(gaps, (0.05, 0.1, 0.2)))


class TestBoundaryFrame:
    def test_identity_frames(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.zero(2), g, 0.2, 0.02)
        frames = boundary_frame(fm, 0.2)
        _, n, tau = frames["y0"]
        assert np.allclose(n, [0.0, -1.0])
        assert np.allclose(tau, [1.0, 0.0])
        _, n1, tau1 = frames["x1"]
        assert np.allclose(n1, [1.0, 0.0])
        assert np.allclose(tau1, [0.0, 1.0])

    def test_orthonormal(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.shear(0.6), g, 0.3, 0.01)
        for _, n, tau in boundary_frame(fm, 0.3).values():
            assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) < 1e-12
            assert np.max(np.abs(np.einsum("pi,pi->p", n, tau))) < 1e-12

    def test_dilation_preserves_normals(self):
        g = grid2d()
        fm = advect_flow_map(MotionField.dilation(0.4, 2), g, 0.3, 0.01)
        ref = boundary_frame(advect_flow_map(MotionField.zero(2), g, 0.3, 0.01), 0.3)
        cur = boundary_frame(fm, 0.3)
        for face in cur:
            assert np.allclose(cur[face][1], ref[face][1], atol=1e-12)
