import numpy as np
import pytest

from nsmove.errors import UnsupportedDimensionError
from nsmove.fields import Field, Grid, differentiate
from nsmove.lagrangian import (
    lagrangian_remainder,
    pull_back_state,
    push_forward_eval,
    transformed_boundary_data,
)
from nsmove.momentum import FluidParams
from nsmove.motion import MotionField, advect_flow_map


def grid2d(n=33, lo=0.0, hi=1.0):
    return Grid((n, n), (lo, lo), (hi, hi))


def smooth_u(pts):
    return np.stack([np.sin(np.pi * pts[:, 0]) * np.cos(np.pi * pts[:, 1]),
                     np.cos(np.pi * pts[:, 0]) * np.sin(2 * pts[:, 1])], axis=1)


def smooth_rho(pts):
    return 1.0 + 0.3 * np.sin(np.pi * pts[:, 0]) * np.sin(np.pi * pts[:, 1])


class TestPullBack:
    def test_identity_map(self):
        g = grid2d(17)
        fm = advect_flow_map(MotionField.zero(2), g, 0.2, 0.02)
        rho, u = pull_back_state(smooth_rho, smooth_u, fm, 0.2)
        pts = g.node_coords()
        assert np.allclose(rho.values[0].ravel(), smooth_rho(pts))
        assert np.allclose(u.values.reshape(2, -1).T, smooth_u(pts))

    def test_translation_affine_field(self):
        g = grid2d(17)
        c = np.array([0.25, -0.1])
        fm = advect_flow_map(MotionField.translation(c), g, 0.4, 0.02)
        _, u = pull_back_state(smooth_rho, lambda x: x, fm, 0.4)
        pts = g.node_coords()
        expect = pts + 0.4 * c
        assert np.max(np.abs(u.values.reshape(2, -1).T - expect)) < 1e-12

    def test_dilation_composition(self):
        g = grid2d(17, 0.25, 1.25)
        alpha, t = 0.3, 0.5
        fm = advect_flow_map(MotionField.dilation(alpha, 2), g, t, 1e-2)
        rho, _ = pull_back_state(smooth_rho, smooth_u, fm, t)
        pts = g.node_coords()
        expect = smooth_rho(np.exp(alpha * t) * pts)
        assert np.max(np.abs(rho.values[0].ravel() - expect)) < 1e-8

    def test_push_pull_round_trip(self):
        g = grid2d(25, 0.0, 1.0)
        fm = advect_flow_map(MotionField.dilation(0.2, 2), g, 0.3, 1e-2)
        ref = Field.from_function(g, lambda p: smooth_rho(p))
        pos = fm.positions(0.3)
        back = push_forward_eval(ref, fm, 0.3, pos)
        assert np.max(np.abs(back - ref.values[0].ravel())) < 1e-9


class TestRemainder:
    def test_zero_motion_all_zero(self):
        g = grid2d(17)
        fm = advect_flow_map(MotionField.zero(2), g, 0.3, 0.05)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=0.4, eta=0.1, bc="slip")
        out = lagrangian_remainder(rho, u, fm, MotionField.zero(2), 0.3, params)
        assert np.max(np.abs(out.remainder.values)) == 0.0
        assert np.max(np.abs(out.transport.values)) == 0.0

    def test_time_zero_remainder_vanishes(self):
        g = grid2d(17)
        V = MotionField.shear(0.7)
        fm = advect_flow_map(V, g, 0.2, 0.02)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=0.4, eta=0.1, bc="slip")
        out = lagrangian_remainder(rho, u, fm, V, 0.0, params)
        assert np.max(np.abs(out.remainder.values)) < 1e-12
        # transport term is nonzero even at t = 0 (V itself is not small)
        assert np.max(np.abs(out.transport.values)) > 0.0

    def test_translation_kills_gap_terms(self):
        g = grid2d(17)
        V = MotionField.translation([0.3, 0.2])
        fm = advect_flow_map(V, g, 0.4, 0.02)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=0.4, eta=0.1, bc="slip")
        out = lagrangian_remainder(rho, u, fm, V, 0.4, params)
        assert np.max(np.abs(out.remainder.values)) < 1e-10
        assert np.max(np.abs(out.transport.values)) > 1e-3

    def test_decomposition_bookkeeping(self):
        g = grid2d(17)
        V = MotionField.dilation(0.3, 2)
        fm = advect_flow_map(V, g, 0.2, 0.02)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=0.4, bc="slip")
        force = Field.from_function(g, lambda p: np.stack(
            [p[:, 0], p[:, 1] ** 2], axis=1), ncomp=2)
        out = lagrangian_remainder(rho, u, fm, V, 0.2, params, force=force)
        recon = out.force.values + out.transport.values + out.remainder.values
        assert np.array_equal(out.total.values, recon)

    @pytest.mark.parametrize("n", [33, 65])
    def test_fd_chain_rule_oracle_dilation(self, n):
        # transform the operator by brute-force FD in physical coordinates,
        # pull back, subtract the reference-coordinate operator
        alpha, t, mu, eta = 0.4, 0.35, 0.7, 0.2
        lam = mu / 3 + eta
        g = grid2d(n, 0.0, 1.0)
        V = MotionField.dilation(alpha, 2)
        fm = advect_flow_map(V, g, t, t / 100)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=mu, eta=eta, bc="slip")
        out = lagrangian_remainder(rho, u, fm, V, t, params)

        # closed-form transport correction for the dilation map
        pts = g.node_coords()
        s = np.exp(alpha * t)
        G1 = np.stack([np.stack([differentiate(u.component(i), j).values[0].ravel()
                                 for j in range(2)], axis=-1) for i in range(2)],
                      axis=1)
        y_dot_grad = np.einsum("pij,pj->pi", G1, pts)
        term1 = smooth_rho(pts)[:, None] * alpha * (1 - s) * y_dot_grad
        spatial_mod = out.remainder.values.reshape(2, -1).T - term1

        # oracle: A_x u on the scaled physical grid vs A_y u~ on the reference;
        # grad(div) through composed Hessian stencils, which stay O(h^2)
        # uniformly up to the boundary (differentiating the div field crosses
        # the one-sided/central stencil switch and degrades to O(h) there)
        from nsmove.lagrangian import _hessian_fields

        def lame(field):
            H = _hessian_fields(field)  # (N, i, k, l)
            lap = np.einsum("pikk->pi", H)
            graddiv = np.einsum("pqiq->pi", H)
            return -mu * lap - lam * graddiv

        phys_grid = Grid(g.n, tuple(s * v for v in g.lo), tuple(s * v for v in g.hi))
        u_phys = Field.from_function(
            phys_grid, lambda p: smooth_u(p / s), ncomp=2)
        Ax = lame(u_phys)   # at physical nodes = images of reference nodes
        Ay = lame(u)
        spatial_oracle = Ay - Ax
        err = np.max(np.abs(spatial_mod - spatial_oracle))
        h = g.spacing[0]
        # C frozen as a regression bound after the first verified run; for
        # the isotropic dilation the two sides share their stencil algebra
        # and the gap is pure flow-map integration error (~1e-13)
        assert err <= 8.0 * h**2

    def test_anisotropic_dilation_pins_index_structure(self):
        # V = (a1 x1, a2 x2) distinguishes the index placement in the
        # grad-div correction; any transposition shifts the result at O(1)
        a1, a2, t, mu, eta = 0.5, -0.3, 0.3, 0.7, 0.2
        lam = mu / 3 + eta
        g = grid2d(33)
        rates = np.array([a1, a2])

        V = MotionField.expression(
            lambda tt, p: p * rates, 2,
            grad_fn=lambda tt, p: np.broadcast_to(np.diag(rates), p.shape + (2,)).copy(),
            grad2_fn=lambda tt, p: np.zeros(p.shape + (2, 2)),
            dt_fn=lambda tt, p: np.zeros_like(p))
        fm = advect_flow_map(V, g, t, t / 100)
        rho = Field.from_function(g, smooth_rho)
        u = Field.from_function(g, smooth_u, ncomp=2)
        params = FluidParams(mu=mu, eta=eta, bc="slip")
        out = lagrangian_remainder(rho, u, fm, V, t, params)

        from nsmove.lagrangian import _grad_fields, _hessian_fields
        b = np.exp(-rates * t)        # gradY = diag(b1, b2)
        G1 = _grad_fields(u)
        G2 = _hessian_fields(u)
        pts = g.node_coords()
        Vx = np.exp(rates * t) * rates * pts       # V(t, X(t, y))
        term1 = smooth_rho(pts)[:, None] * np.einsum(
            "pij,pj,j->pi", G1, Vx, b - 1.0)
        lap_w = np.einsum("pikk,k->pi", G2, b**2 - 1.0)
        graddiv_w = (np.einsum("pqqi,q->pi", G2, b) * b[None, :]
                     - np.einsum("pqqi->pi", G2))
        expect = term1 + mu * lap_w + lam * graddiv_w
        got = out.remainder.values.reshape(2, -1).T
        assert np.max(np.abs(got - expect)) < 1e-10

    def test_1d_curved_flow_fd_oracle(self):
        # non-affine 1D flow with closed-form map: V = x^2 gives
        # X = z/(1 - z t), Y = x/(1 + x t), so the inverse-map curvature
        # terms are exercised against an oracle assembled by analytic
        # composition on an independent uniform physical grid
        from nsmove.fields import interpolate

        mu, eta, t = 0.7, 0.2, 0.3
        lam = mu / 3 + eta
        V = MotionField.expression(
            lambda tt, p: p**2, 1,
            grad_fn=lambda tt, p: (2 * p)[..., None],
            grad2_fn=lambda tt, p: np.broadcast_to(
                2.0, p.shape)[..., None, None].copy(),
            dt_fn=lambda tt, p: np.zeros_like(p))
        u_fn = lambda p: np.sin(2 * p[:, 0]) + 0.3 * p[:, 0]**2
        errs = {}
        for n in (65, 129):
            g = Grid((n,), (0.0,), (1.0,))
            fm = advect_flow_map(V, g, t, t / 300)
            rho = Field.from_function(g, lambda p: 1.0 + 0.2 * p[:, 0])
            u = Field.from_function(g, u_fn)
            params = FluidParams(mu=mu, eta=eta, bc="no-slip")
            out = lagrangian_remainder(rho, u, fm, V, t, params)

            z = g.axis_coords(0)
            pos = z / (1 - z * t)
            gy_exact = (1 - z * t)**2
            du = differentiate(u, 0, 1).values[0]
            term1 = rho.values[0].ravel() * du * pos**2 * (gy_exact - 1.0)
            spatial_mod = out.remainder.values[0].ravel() - term1

            pg = Grid((2 * n,), (0.0,), (float(pos[-1]),))
            xp = pg.axis_coords(0)
            u_phys = Field(pg, u_fn((xp / (1 + xp * t))[:, None]))
            Ax = Field(pg, -(mu + lam) * differentiate(u_phys, 0, 2).values[0])
            Ax_at_feet = interpolate(Ax, pos[:, None], out_of_bounds="clamp")
            Ay = -(mu + lam) * differentiate(u, 0, 2).values[0].ravel()
            oracle = Ay - Ax_at_feet
            errs[n] = float(np.max(np.abs((spatial_mod - oracle)[3:-3])))
        # O(h^2), C frozen after the first verified run (measured 0.73)
        assert errs[65] <= 2.0 * (1 / 64)**2
        assert errs[129] <= 2.0 * (1 / 128)**2


class TestBoundaryData:
    def params(self, kappa=0.5):
        return FluidParams(mu=0.6, eta=0.0, kappa=kappa, bc="slip")

    def test_time_zero(self):
        g = grid2d(17)
        V = MotionField.shear(0.8)
        fm = advect_flow_map(V, g, 0.2, 0.02)
        u = Field.from_function(g, smooth_u, ncomp=2)
        bd = transformed_boundary_data(u, V, fm, 0.0, self.params())
        for face in g.face_names:
            assert np.max(np.abs(bd.normal(face))) < 1e-14
            assert np.max(np.abs(bd.stress(face))) < 1e-14

    def test_zero_motion_all_times(self):
        g = grid2d(17)
        V = MotionField.zero(2)
        fm = advect_flow_map(V, g, 0.4, 0.02)
        u = Field.from_function(g, smooth_u, ncomp=2)
        bd = transformed_boundary_data(u, V, fm, 0.4, self.params())
        for face in g.face_names:
            assert np.max(np.abs(bd.normal(face))) == 0.0
            assert np.max(np.abs(bd.stress(face))) == 0.0

    def test_shear_affine_hand_expansion(self):
        # affine u~ = A y + b against the hand-expanded data on two faces
        g = grid2d(17)
        sigma, t = 0.8, 0.25
        A = np.array([[0.3, -0.2], [0.5, 0.1]])
        b = np.array([0.05, -0.4])
        V = MotionField.shear(sigma)
        fm = advect_flow_map(V, g, t, t / 50)
        u = Field.from_function(g, lambda p: p @ A.T + b, ncomp=2)
        params = self.params(kappa=0.7)
        bd = transformed_boundary_data(u, V, fm, t, params)
        mu, kappa = params.mu, params.kappa
        nodes = g.node_coords()

        # bottom face: frames unchanged, V(X) = V(y); only the Jacobian gap acts
        assert np.max(np.abs(bd.normal("y0"))) < 1e-12
        expect_B = -mu * A[0, 0] * t * sigma
        assert np.max(np.abs(bd.stress("y0") - expect_B)) < 1e-10

        # left face: n(y) = (-1, 0), n(X) = (-1, t sigma)/sqrt(1 + t^2 s^2)
        flat = np.ravel_multi_index(g.face_index("x0", closed=True), g.shape)
        y = nodes[flat]
        nX = np.array([-1.0, t * sigma]) / np.hypot(1.0, t * sigma)
        dn = np.array([-1.0, 0.0]) - nX
        uy = y @ A.T + b
        Vy = np.stack([sigma * y[:, 1], np.zeros(len(y))], axis=1)
        d_hand = (uy - Vy) @ dn  # V(X) = V(y) kills the second group
        assert np.max(np.abs(bd.normal("x0") - d_hand)) < 1e-10

        tauX = np.array([-nX[1], nX[0]])
        tau_ref = np.array([0.0, -1.0])
        Jgap = np.array([[0.0, t * sigma], [0.0, 0.0]])
        K = mu * A @ Jgap
        D = K + K.T
        M = mu * (A + A.T)
        dtau = tau_ref - tauX
        B_hand = (D @ nX) @ tauX + (M @ dn) @ tauX + (M @ np.array([-1.0, 0.0])) @ dtau \
            + kappa * (uy - Vy) @ dtau + 0.0  # V(X) = V(y)
        assert np.max(np.abs(bd.stress("x0") - B_hand)) < 1e-10

    def test_smallness_rate_in_time(self):
        g = grid2d(17)
        V = MotionField.shear(0.6)
        fm = advect_flow_map(V, g, 0.16, 0.01)
        u = Field.from_function(g, smooth_u, ncomp=2)
        sups = []
        for t in (0.02, 0.04, 0.08):
            bd = transformed_boundary_data(u, V, fm, t, self.params())
            sups.append(max(np.max(np.abs(bd.normal(f))) + np.max(np.abs(bd.stress(f)))
                            for f in g.face_names))
        assert sups[0] < sups[1] < sups[2]
        ratios = [sups[1] / sups[0], sups[2] / sups[1]]
        assert all(1.5 < r < 2.5 for r in ratios)  # O(t) rate

    def test_1d_has_no_tangential_datum(self):
        g = Grid((17,), (0.0,), (1.0,))
        V = MotionField.dilation(0.3, 1)
        fm = advect_flow_map(V, g, 0.2, 0.02)
        u = Field.from_function(g, lambda p: np.sin(p[:, 0]))
        bd = transformed_boundary_data(u, V, fm, 0.2, FluidParams(mu=1.0, bc="slip"))
        assert bd.normal("x1") is not None
        with pytest.raises(UnsupportedDimensionError):
            bd.stress("x1")
