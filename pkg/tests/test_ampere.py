"""Displacement updates and the Gauss/Faraday corrections.

The production Gauss sweep is validated against an independent sequential
reference that walks cells in the stated order, recomputes the residual from
the current working field at every visit, and applies the per-cell face
corrections (full-residual pushes along the last visited column and row so
the sweep closes under periodicity).
"""

import numpy as np
import pytest

from manp.ampere import (
    SWEEP_ORDERS,
    GaussCorrectionError,
    faraday_correct,
    gauss_correct,
    ma_bdf2_update,
    ma_euler_update,
)
from manp.grid import CellField, FaceField, GridSpec, curl_scaled, divergence, gradient, norm_inf
from manp.diagnostics import gauss_residual

_SIGNS = {"LL_to_UR": (1, 1), "UL_to_LR": (1, -1), "LR_to_UL": (-1, 1), "UR_to_LL": (-1, -1)}


def reference_gauss_sweep(d_star, rho, kappa, order):
    """Sequential oracle: literal cell-by-cell sweep with fresh residuals."""
    g = d_star.grid
    nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
    two_k2 = 2.0 * kappa * kappa
    four_k2 = 4.0 * kappa * kappa
    xc = d_star.xcomp.copy()
    yc = d_star.ycomp.copy()
    si, sj = _SIGNS[order]
    i_walk = range(nx) if si > 0 else range(nx - 1, -1, -1)
    j_walk = range(ny) if sj > 0 else range(ny - 1, -1, -1)

    def div_at(i, j):
        return (xc[i, j] - xc[(i - 1) % nx, j]) / dx + (yc[i, j] - yc[i, (j - 1) % ny]) / dy

    closure = 0.0
    for j_pos, j in enumerate(j_walk):
        last_row = j_pos == ny - 1
        for i_pos, i in enumerate(i_walk):
            last_col = i_pos == nx - 1
            xi = two_k2 * div_at(i, j) - rho[i, j]
            if last_col and last_row:
                closure = xi
                continue

            def push_x(amount):
                if si > 0:
                    xc[i, j] -= amount
                else:
                    xc[(i - 1) % nx, j] += amount

            def push_y(amount):
                if sj > 0:
                    yc[i, j] -= amount
                else:
                    yc[i, (j - 1) % ny] += amount

            if last_col:
                push_y(xi * dy / (2.0 * kappa * kappa))
            elif last_row:
                push_x(xi * dx / (2.0 * kappa * kappa))
            else:
                push_x(xi * dx / four_k2)
                push_y(xi * dy / four_k2)
    return FaceField(g, xc, yc), closure


def _zero_total_setup(rng, nx=7, ny=6, kappa=1.0):
    g = GridSpec(nx, ny, x0=-1.0, y0=-1.0, lx=2.0, ly=2.0)
    d = FaceField(g, rng.standard_normal((nx, ny)), rng.standard_normal((nx, ny)))
    rho_vals = rng.standard_normal((nx, ny))
    rho_vals -= rho_vals.mean()  # discrete zero total charge
    rho_f = CellField(g, rho_vals)
    c = CellField(g, np.zeros((nx, ny)))
    return g, d, rho_f, c


class TestMaUpdates:
    def test_euler_zero_drivers_identity(self):
        g = GridSpec(5, 4)
        d = FaceField(g, np.random.default_rng(1).random((5, 4)), np.zeros((5, 4)))
        out = ma_euler_update(d, [FaceField.zeros(g)], (1.0,), 1.0, 0.1)
        np.testing.assert_array_equal(out.xcomp, d.xcomp)
        np.testing.assert_array_equal(out.ycomp, d.ycomp)

    def test_euler_uniform_flux(self):
        g = GridSpec(4, 4)
        d = FaceField.zeros(g)
        flux = FaceField(g, np.ones((4, 4)), np.zeros((4, 4)))
        out = ma_euler_update(d, [flux], (1.0,), 1.0, 0.1)
        np.testing.assert_allclose(out.xcomp, -0.05)
        np.testing.assert_allclose(out.ycomp, 0.0)

    def test_bdf2_steady_state_identity(self):
        g = GridSpec(4, 5)
        rng = np.random.default_rng(2)
        d = FaceField(g, rng.random((4, 5)), rng.random((4, 5)))
        out = ma_bdf2_update(d, d.copy(), [FaceField.zeros(g)], (1.0,), 1.0, 0.05)
        np.testing.assert_allclose(out.xcomp, d.xcomp, atol=1e-15)
        np.testing.assert_allclose(out.ycomp, d.ycomp, atol=1e-15)

    def test_constant_theta_extrapolation_is_exact(self):
        g = GridSpec(4, 4)
        th = FaceField(g, np.full((4, 4), 0.3), np.full((4, 4), -0.2))
        extrap = FaceField(g, 2 * th.xcomp - th.xcomp, 2 * th.ycomp - th.ycomp)
        np.testing.assert_array_equal(extrap.xcomp, th.xcomp)
        np.testing.assert_array_equal(extrap.ycomp, th.ycomp)


class TestGaussCorrect:
    def test_already_satisfying_field_is_unchanged(self):
        rng = np.random.default_rng(5)
        g = GridSpec(6, 6, lx=2.0, ly=2.0)
        phi = CellField(g, rng.standard_normal((6, 6)))
        d = gradient(phi)  # any field; build rho to match it exactly
        kappa = 0.8
        rho_vals = 2.0 * kappa**2 * divergence(d).values
        corrected, report = gauss_correct(d, [], (), CellField(g, rho_vals), kappa)
        scale = norm_inf(d)
        np.testing.assert_allclose(corrected.xcomp, d.xcomp, atol=1e-12 * scale)
        np.testing.assert_allclose(corrected.ycomp, d.ycomp, atol=1e-12 * scale)
        assert report.max_xi <= 1e-13 * max(1.0, norm_inf(CellField(g, rho_vals)))

    def test_two_by_two_case_against_divergence_loop(self):
        g = GridSpec(2, 2, x0=0.0, y0=0.0, lx=2.0, ly=2.0)  # dx = dy = 1
        d = FaceField(g, np.array([[1.0, 0.0], [0.0, 0.0]]), np.zeros((2, 2)))
        rho = CellField.zeros(g)
        corrected, report = gauss_correct(d, [], (), rho, 1.0)
        for i in range(2):
            for j in range(2):
                div = (corrected.value_x(i, j) - corrected.value_x(i - 1, j)) / g.dx
                div += (corrected.value_y(i, j) - corrected.value_y(i, j - 1)) / g.dy
                assert abs(2.0 * div) <= 1e-13
        assert report.closure_residual <= 1e-13

    @pytest.mark.parametrize("order", SWEEP_ORDERS)
    def test_matches_sequential_reference_and_is_exact(self, order):
        rng = np.random.default_rng(11)
        for trial in range(8):
            kappa = float(rng.uniform(0.3, 2.0))
            g, d, rho_f, c = _zero_total_setup(rng, kappa=kappa)
            corrected, report = gauss_correct(d, [c], (1.0,), rho_f, kappa, order)
            oracle, closure = reference_gauss_sweep(d, rho_f.values, kappa, order)
            scale = max(norm_inf(d), norm_inf(oracle), 1.0)
            np.testing.assert_allclose(corrected.xcomp, oracle.xcomp, atol=1e-11 * scale)
            np.testing.assert_allclose(corrected.ycomp, oracle.ycomp, atol=1e-11 * scale)
            res = gauss_residual(corrected, [c], (1.0,), rho_f, kappa)
            assert res <= 1e-12 * max(1.0, norm_inf(rho_f)), f"{order} trial {trial}"

    @pytest.mark.parametrize("order", SWEEP_ORDERS)
    def test_rectangular_cells(self, order):
        rng = np.random.default_rng(13)
        g = GridSpec(6, 9, x0=0.0, y0=0.0, lx=3.0, ly=1.0)  # dx != dy
        d = FaceField(g, rng.standard_normal((6, 9)), rng.standard_normal((6, 9)))
        rho_vals = rng.standard_normal((6, 9))
        rho_vals -= rho_vals.mean()
        rho = CellField(g, rho_vals)
        corrected, _ = gauss_correct(d, [], (), rho, 0.7, order)
        oracle, _ = reference_gauss_sweep(d, rho.values, 0.7, order)
        scale = max(norm_inf(oracle), 1.0)
        np.testing.assert_allclose(corrected.xcomp, oracle.xcomp, atol=1e-11 * scale)
        np.testing.assert_allclose(corrected.ycomp, oracle.ycomp, atol=1e-11 * scale)
        assert gauss_residual(corrected, [], (), rho, 0.7) <= 1e-12 * norm_inf(rho)

    def test_second_application_changes_nothing(self):
        rng = np.random.default_rng(17)
        g, d, rho_f, c = _zero_total_setup(rng)
        once, _ = gauss_correct(d, [c], (1.0,), rho_f, 1.0)
        twice, report = gauss_correct(once, [c], (1.0,), rho_f, 1.0)
        scale = max(norm_inf(once), 1.0)
        np.testing.assert_allclose(twice.xcomp, once.xcomp, atol=1e-12 * scale)
        np.testing.assert_allclose(twice.ycomp, once.ycomp, atol=1e-12 * scale)
        assert report.max_xi <= 1e-12 * scale

    def test_order_difference_is_divergence_free(self):
        rng = np.random.default_rng(19)
        g, d, rho_f, c = _zero_total_setup(rng)
        fields = {}
        for order in SWEEP_ORDERS:
            fields[order], _ = gauss_correct(d, [c], (1.0,), rho_f, 1.0, order)
        base = fields["LL_to_UR"]
        for order in SWEEP_ORDERS[1:]:
            diff = FaceField(
                g, fields[order].xcomp - base.xcomp, fields[order].ycomp - base.ycomp
            )
            dd = divergence(diff)
            assert norm_inf(dd) <= 1e-12 * max(1.0, norm_inf(diff) / min(g.dx, g.dy))

    def test_nonzero_total_charge_rejected(self):
        g = GridSpec(4, 4, lx=2.0, ly=2.0)
        d = FaceField.zeros(g)
        rho = CellField(g, np.ones((4, 4)))
        with pytest.raises(GaussCorrectionError):
            gauss_correct(d, [], (), rho, 1.0)

    def test_tiny_kappa_scaling(self):
        # the quadrupole regime: kappa = 1e-4 amplifies corrections by 1/kappa^2
        rng = np.random.default_rng(23)
        g = GridSpec(8, 8, x0=-1.0, y0=-1.0, lx=2.0, ly=2.0)
        kappa = 1e-4
        phi = CellField(g, rng.standard_normal((8, 8)))
        d = gradient(phi)
        rho_vals = 2.0 * kappa**2 * divergence(d).values
        rho_vals += 1e-12 * (rng.standard_normal((8, 8)) - 0.0)
        rho_vals -= rho_vals.mean()
        corrected, _ = gauss_correct(d, [], (), CellField(g, rho_vals), kappa)
        res = gauss_residual(corrected, [], (), CellField(g, rho_vals), kappa)
        scale = max(np.abs(rho_vals).max(), 2 * kappa**2 * norm_inf(divergence(d)))
        assert res <= 1e-10 * scale


class TestFaradayCorrect:
    def test_reconstruction_inverts_gradient_fields(self):
        rng = np.random.default_rng(29)
        g = GridSpec(7, 5, x0=-1.0, y0=0.0, lx=2.0, ly=1.5)
        psi = CellField(g, rng.standard_normal((7, 5)))
        eps = FaceField(g, 0.5 + rng.random((7, 5)), 0.5 + rng.random((7, 5)))
        gp = gradient(psi)
        d = FaceField(g, -eps.xcomp * gp.xcomp, -eps.ycomp * gp.ycomp)
        rec = faraday_correct(d, eps)
        scale = max(norm_inf(d), 1.0)
        np.testing.assert_allclose(rec.d_tilde.xcomp, d.xcomp, atol=1e-12 * scale)
        np.testing.assert_allclose(rec.d_tilde.ycomp, d.ycomp, atol=1e-12 * scale)
        shifted = psi.values - psi.values.mean()
        np.testing.assert_allclose(rec.phi.values, shifted, atol=1e-12 * max(1.0, np.abs(shifted).max()))
        assert rec.max_change <= 1e-12 * scale

    def test_random_field_becomes_curl_free(self):
        rng = np.random.default_rng(31)
        for trial in range(10):
            g = GridSpec(int(rng.integers(3, 10)), int(rng.integers(3, 10)), lx=2.0, ly=2.0)
            d = FaceField(g, rng.standard_normal((g.nx, g.ny)), rng.standard_normal((g.nx, g.ny)))
            eps = FaceField(g, 0.5 + rng.random((g.nx, g.ny)), 0.5 + rng.random((g.nx, g.ny)))
            rec = faraday_correct(d, eps)
            scale = max(norm_inf(rec.d_tilde), norm_inf(d)) / min(g.dx, g.dy)
            assert norm_inf(curl_scaled(rec.d_tilde, eps)) <= 1e-13 * max(scale, 1.0)

    def test_idempotence(self):
        rng = np.random.default_rng(37)
        g = GridSpec(6, 8, lx=1.0, ly=2.0)
        d = FaceField(g, rng.standard_normal((6, 8)), rng.standard_normal((6, 8)))
        eps = FaceField(g, 1.0 + rng.random((6, 8)), 1.0 + rng.random((6, 8)))
        once = faraday_correct(d, eps)
        twice = faraday_correct(once.d_tilde, eps)
        scale = max(norm_inf(once.d_tilde), 1.0)
        np.testing.assert_allclose(twice.d_tilde.xcomp, once.d_tilde.xcomp, atol=1e-13 * scale)
        np.testing.assert_allclose(twice.d_tilde.ycomp, once.d_tilde.ycomp, atol=1e-13 * scale)
        assert twice.max_change <= 1e-13 * scale

    def test_rejects_nonpositive_eps(self):
        g = GridSpec(4, 4)
        d = FaceField.zeros(g)
        eps = FaceField(g, np.ones((4, 4)), np.ones((4, 4)))
        eps.ycomp[1, 1] = -0.5
        with pytest.raises(ValueError):
            faraday_correct(d, eps)
