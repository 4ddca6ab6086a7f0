"""LAIC tone mapping: local means, LP assembly, both solvers and the image-level path."""
import itertools

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import sparse

from conftest import smooth_image
from engines.laic_engine import (
    audit_solution, box_mean_operator, build_lp, laic_enhance, linear_stretch, local_mean,
    lp_luma, objective_terms, rank_preserved, resolve_gain_grid, sign_map, solve_lp,
)
from engines.lp_engine import solve_highs, solve_simplex
from models.laic import LaicOptions, LpSolution, LpStatus, Sense, parse_gain_grid
from models.raster import Raster, split_luma
from services.lp_format_service import format_lp, variable_names, write_lp_text

TOL = 1e-7


def brute_local_mean(img, radius):
    H, W = img.shape
    out = np.zeros_like(img)
    for r in range(H):
        for c in range(W):
            out[r, c] = img[max(0, r - radius):r + radius + 1, max(0, c - radius):c + radius + 1].mean()
    return out


def grid_best(luma, lambda2, radius, steps):
    """Best feasible objective over all pixel vectors on a regular grid."""
    H, W = luma.shape
    M = box_mean_operator(H, W, radius).toarray()
    s = sign_map(luma, sparse.csr_matrix(M)).ravel()
    scale = 1.0 / np.maximum(luma, LaicOptions().eps)
    levels = np.linspace(0.0, 1.0, steps + 1)
    X = np.array(list(itertools.product(levels, repeat=H * W)))
    gain = (X * scale.ravel()).reshape(-1, H, W)
    tv = np.abs(np.diff(gain, axis=2)).sum(axis=(1, 2)) + np.abs(np.diff(gain, axis=1)).sum(axis=(1, 2))
    offset = X - X @ M.T
    feasible = np.all(np.where(s == 0, np.abs(offset) <= 1e-12, s * offset >= -1e-12), axis=1)
    objective = tv - lambda2 * (offset @ s)
    return objective[feasible].min()


class TestLocalMean:
    def test_constant(self):
        r = Raster(np.full((5, 4), 0.3))
        assert_allclose(local_mean(r, 2).data, 0.3)

    def test_row_example(self):
        out = local_mean(Raster(np.array([[0.0, 1.0, 0.0]])), 1)
        assert_allclose(out.data[0, :, 0], [0.5, 1 / 3, 0.5])

    def test_matches_loops(self, rng):
        img = rng.uniform(0, 1, size=(5, 5))
        assert_allclose(local_mean(Raster(img), 1).data[:, :, 0], brute_local_mean(img, 1), atol=1e-12)

    def test_operator_matches_filter(self, rng):
        img = rng.uniform(0, 1, size=(6, 7))
        M = box_mean_operator(6, 7, 2)
        assert_allclose((M @ img.ravel()).reshape(6, 7), brute_local_mean(img, 2), atol=1e-12)


class TestBuildLp:
    def test_counts_1x2(self):
        p = build_lp(np.array([[0.2, 0.4]]), LaicOptions(radius=1))
        assert p.n_vars == 3
        assert p.n_rows == 4
        assert list(p.row_kinds).count("aux") == 2
        assert list(p.row_kinds).count("rank") == 2
        assert np.isfinite(p.upper[:2]).all() and len(p.lower) == 3

    def test_constant_input_all_equalities(self):
        p = build_lp(np.full((3, 3), 0.2), LaicOptions(radius=1))
        assert_array_equal(p.sign_map, 0)
        rank = p.row_kinds == "rank"
        assert all(sense == Sense.EQ.value for sense in p.senses[rank])

    def test_sign_map_example(self):
        luma = np.array([[0.1, 0.2, 0.2, 0.4]])
        p = build_lp(luma, LaicOptions(radius=1))
        expected = np.sign(luma - brute_local_mean(luma, 1))
        assert_array_equal(p.sign_map, expected)

    def test_capture_is_feasible(self, rng):
        luma = rng.uniform(0.05, 0.3, size=(4, 5))
        p = build_lp(luma, LaicOptions(radius=1))
        x = np.concatenate([luma.ravel(), np.zeros(p.n_vars - p.n_pixels)])
        x[p.n_pixels:] = np.abs(np.concatenate([
            np.diff(luma * p.gain_scale, axis=1).ravel(), np.diff(luma * p.gain_scale, axis=0).ravel(),
        ]))
        assert audit_solution(p, x) <= 1e-12
        assert np.isfinite(p.objective @ x)


class TestSolve:
    def test_lambda_zero_is_uniform_and_brightest(self):
        luma = np.array([[0.1, 0.2, 0.2, 0.4]])
        opts = LaicOptions(lambda2=0.0, radius=1)
        p = build_lp(luma, opts)
        sol = solve_lp(p, opts)
        assert sol.is_optimal
        tv, _ = objective_terms(p, sol.values)
        assert tv <= TOL
        assert_allclose(p.pixel_values(sol.values), luma / 0.4, atol=1e-6)

    def test_objective_decomposition(self, rng):
        opts = LaicOptions(lambda2=0.3, radius=1)
        p = build_lp(rng.uniform(0.05, 0.5, size=(3, 4)), opts)
        sol = solve_lp(p, opts)
        tv, contrast = objective_terms(p, sol.values)
        assert sol.objective_value == pytest.approx(tv - 0.3 * contrast, abs=1e-8)

    def test_grid_example(self):
        luma = np.array([[0.1, 0.2, 0.2, 0.4]])
        opts = LaicOptions(lambda2=0.1, radius=1)
        sol = solve_lp(build_lp(luma, opts), opts)
        assert sol.objective_value <= grid_best(luma, 0.1, 1, 32) + 2 / 32

    @pytest.mark.parametrize("solver", ["simplex", "highs"])
    def test_backends_agree(self, rng, solver):
        luma = rng.uniform(0.02, 0.6, size=(4, 4))
        opts = LaicOptions(lambda2=0.2, radius=1, solver=solver)
        sol = solve_lp(build_lp(luma, opts), opts)
        ref_opts = LaicOptions(lambda2=0.2, radius=1, solver="highs")
        ref = solve_lp(build_lp(luma, ref_opts), ref_opts)
        assert sol.backend == solver
        assert sol.objective_value == pytest.approx(ref.objective_value, abs=1e-6)

    def test_rank_preserved_on_random_images(self):
        gen = np.random.default_rng(11)
        opts = LaicOptions(lambda2=0.05, radius=2, solver="highs")
        for _ in range(20):
            p = build_lp(gen.uniform(0.01, 0.4, size=(16, 16)), opts)
            sol = solve_lp(p, opts)
            assert sol.is_optimal
            assert rank_preserved(p, sol.values, TOL).all()
            assert audit_solution(p, sol.values) <= TOL

    @pytest.mark.parametrize("shape", [(6, 6), (8, 8)])
    def test_degenerate_lambda_zero(self, shape):
        img = np.full(shape, 0.05)
        img[:, shape[1] // 2:] = 0.5
        for luma in (np.full(shape, 0.1), img):
            opts = LaicOptions(lambda2=0.0, radius=1)
            p = build_lp(luma, opts)
            sol = solve_lp(p, opts)
            assert sol.is_optimal
            assert audit_solution(p, sol.values) <= TOL
            tv, _ = objective_terms(p, sol.values)
            assert tv <= 1e-6
            assert_allclose(p.pixel_values(sol.values), luma / luma.max(), atol=1e-6)

    def test_simplex_failure_falls_back_to_highs(self, monkeypatch):
        def stalled(c, *args, **kwargs):
            return LpSolution(values=np.zeros(len(c)), objective_value=0.0,
                              status=LpStatus.ITERATION_LIMIT, iterations=10, backend="simplex")

        monkeypatch.setattr("engines.laic_engine.solve_simplex", stalled)
        luma = np.array([[0.1, 0.2], [0.3, 0.4]])
        opts = LaicOptions(lambda2=0.1, radius=1, solver="simplex")
        sol = solve_lp(build_lp(luma, opts), opts)
        assert sol.is_optimal
        assert sol.backend == "highs"

    def test_simplex_point_failing_audit_is_resolved(self, monkeypatch):
        def off_target(c, *args, **kwargs):
            x = np.zeros(len(c))
            x[0] = 1.0
            return LpSolution(values=x, objective_value=float(c @ x), status=LpStatus.OPTIMAL,
                              iterations=1, backend="simplex")

        monkeypatch.setattr("engines.laic_engine.solve_simplex", off_target)
        luma = np.array([[0.1, 0.2], [0.3, 0.4]])
        opts = LaicOptions(lambda2=0.1, radius=1, solver="simplex")
        p = build_lp(luma, opts)
        sol = solve_lp(p, opts)
        assert sol.is_optimal
        assert sol.backend == "highs"
        assert audit_solution(p, sol.values) <= TOL

    @pytest.mark.slow
    @pytest.mark.parametrize("shape", [(1, 4), (2, 2)])
    def test_oracle_equivalence(self, shape):
        values = (0.0, 0.25, 0.5, 0.75, 1.0)
        for flat in itertools.product(values, repeat=4):
            luma = np.array(flat).reshape(shape)
            for lambda2 in (0.0, 0.1, 1.0):
                opts = LaicOptions(lambda2=lambda2, radius=1, solver="simplex")
                p = build_lp(luma, opts)
                sol = solve_lp(p, opts)
                assert sol.is_optimal
                assert audit_solution(p, sol.values) <= TOL
                assert sol.objective_value <= grid_best(luma, lambda2, 1, 16) + 2 / 16


class TestSimplex:
    def test_degenerate_constant_image(self):
        p = build_lp(np.full((6, 6), 0.1), LaicOptions(lambda2=0.0, radius=1))
        sol = solve_simplex(p.objective, p.A, p.senses, p.rhs, p.lower, p.upper)
        assert sol.status == LpStatus.OPTIMAL
        assert sol.objective_value == pytest.approx(0.0, abs=1e-8)
        assert audit_solution(p, sol.values) <= TOL

    def test_small_lp(self):
        # max x + y s.t. x + 2y <= 4, 3x + y <= 6
        c = np.array([-1.0, -1.0])
        A = sparse.csr_matrix([[1.0, 2.0], [3.0, 1.0]])
        sol = solve_simplex(c, A, np.array(["<=", "<="], dtype=object), np.array([4.0, 6.0]),
                            np.zeros(2), np.full(2, np.inf))
        assert sol.status == LpStatus.OPTIMAL
        assert_allclose(sol.values, [1.6, 1.2], atol=1e-9)

    def test_infeasible(self):
        A = sparse.csr_matrix([[1.0], [1.0]])
        sol = solve_simplex(np.array([1.0]), A, np.array([">=", "<="], dtype=object),
                            np.array([2.0, 1.0]), np.zeros(1), np.full(1, np.inf))
        assert sol.status == LpStatus.INFEASIBLE

    def test_unbounded(self):
        A = sparse.csr_matrix([[1.0, -1.0]])
        sol = solve_simplex(np.array([-1.0, 0.0]), A, np.array(["<="], dtype=object),
                            np.array([1.0]), np.zeros(2), np.full(2, np.inf))
        assert sol.status == LpStatus.UNBOUNDED

    def test_no_improving_direction(self, rng):
        n = 5
        A = sparse.csr_matrix(rng.uniform(0.1, 1.0, size=(4, n)))
        senses = np.array(["<="] * 4, dtype=object)
        b = np.full(4, 3.0)
        c = -rng.uniform(0.1, 1.0, size=n)
        lo, hi = np.zeros(n), np.ones(n)
        sol = solve_simplex(c, A, senses, b, lo, hi)
        ref = solve_highs(c, A, senses, b, lo, hi)
        assert sol.objective_value == pytest.approx(ref.objective_value, abs=1e-8)
        for _ in range(200):
            point = np.clip(sol.values + rng.normal(0, 0.05, size=n), lo, hi)
            if (A @ point <= b + 1e-12).all():
                assert c @ point >= sol.objective_value - 1e-9


class TestEnhance:
    def test_constant_gray_stays_constant(self):
        out = laic_enhance(Raster(np.full((6, 6, 3), 0.1)), LaicOptions(lambda2=0.0, radius=1))
        assert np.ptp(out.data) <= 1e-6

    def test_two_regions_piecewise_gain(self):
        img = np.full((8, 8), 0.05)
        img[:, 4:] = 0.5
        opts = LaicOptions(lambda2=0.0, radius=1, gain_grid="none")
        out = laic_enhance(Raster(img), opts)
        gain = out.data[:, :, 0] / img
        assert np.ptp(gain[:, :4]) <= 1e-6
        assert np.ptp(gain[:, 4:]) <= 1e-6

    def test_color_output_in_range_and_hue_kept(self):
        img = smooth_image(12, 12)
        img = Raster(img.data * 0.2)
        out = laic_enhance(img, LaicOptions(lambda2=0.05, radius=2, gain_grid="none"))
        assert out.shape == img.shape
        assert 0.0 <= out.data.min() and out.data.max() <= 1.0
        _, before = split_luma(img)
        _, after = split_luma(out)
        bright = (img.data.max(axis=2) > 0.02) & (out.data.max(axis=2) > 0.01)
        assert_allclose(after[bright], before[bright], atol=1e-6)

    def test_gain_grid_path(self):
        img = Raster(smooth_image(40, 48, channels=1).data * 0.25)
        opts = LaicOptions(lambda2=0.05, radius=1, gain_grid="8x8", solver="highs")
        assert lp_luma(img, opts).shape == (8, 8)
        out = laic_enhance(img, opts)
        assert out.shape == img.shape
        assert out.data.mean() > img.data.mean()

    def test_resolve_gain_grid(self):
        assert resolve_gain_grid(None, 300, 300) is None
        assert resolve_gain_grid((16, 16), 8, 40) == (8, 16)
        assert resolve_gain_grid("auto", 50, 50) is None
        assert resolve_gain_grid("auto", 256, 256) == (64, 64)
        assert parse_gain_grid("32x24") == (32, 24)
        with pytest.raises(ValueError):
            parse_gain_grid("big")


class TestLinearStretch:
    def test_auto_maps_peak_to_one(self):
        out = linear_stretch(Raster(np.array([[0.1, 0.25]])))
        assert_allclose(out.data[0, :, 0], [0.4, 1.0])

    def test_fixed_gain_clamps(self):
        out = linear_stretch(Raster(np.array([[0.1, 0.25]])), 5.0)
        assert_allclose(out.data[0, :, 0], [0.5, 1.0])

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            linear_stretch(Raster(np.zeros((1, 1))), 0.0)


class TestLpText:
    def test_format(self, tmp_path):
        p = build_lp(np.array([[0.2, 0.4]]), LaicOptions(radius=1))
        assert variable_names(p) == ["x_0_0", "x_0_1", "h_0_0"]
        text = format_lp(p)
        for section in ("Minimize", "Subject To", "Bounds", "End"):
            assert section in text
        path = write_lp_text(p, tmp_path / "p.lp")
        assert path.read_text() == text
