"""Theory lab: recursion, mode operators, bounds, contraction, memory, stats."""

import numpy as np
import pytest

from robustgrad.tensor_ops import fro_norm, stable_rank
from robustgrad.theory import (
    ParametricProblem,
    build_mode_operator,
    check_contraction,
    check_stable_rank_bound,
    contraction_step_budget,
    corollary_rank_floor,
    matched_rank_parameter_counts,
    memory_count,
    perp_decay_rate,
    projection_rank_comparison,
    random_parametric_problem,
    recursion_residuals,
    robust_error_stats,
    simulate_parametric_sgd,
    write_bound_csv,
)

rng = np.random.default_rng(31337)


def psd(n, seed, lo=0.5, hi=2.0):
    local = np.random.default_rng(seed)
    q, _ = np.linalg.qr(local.standard_normal((n, n)))
    return q @ np.diag(np.linspace(lo, hi, n)) @ q.T


class TestSimulation:
    def test_fixed_point_stays_constant(self):
        b, c = psd(4, 1), psd(5, 2)
        w_star = rng.standard_normal((4, 5, 3))
        a = np.moveaxis(np.tensordot(b, w_star, axes=([1], [0])), 0, 0)
        a = np.moveaxis(np.tensordot(c, a, axes=([1], [1])), 0, 1)
        problem = ParametricProblem(a_terms=[a], b_terms=[b], c_terms=[c],
                                    w0=w_star, eta=0.1)
        trace = simulate_parametric_sgd(problem, 5)
        for g in trace.gradients:
            assert fro_norm(g) < 1e-12
        for w in trace.weights:
            assert np.allclose(w, w_star)

    def test_single_term_identity_geometric(self):
        # B = C = I: G_t = (1 - eta)^t G_0
        shape = (3, 4)
        a = rng.standard_normal(shape)
        problem = ParametricProblem(a_terms=[a], b_terms=[np.eye(3)], c_terms=[np.eye(4)],
                                    w0=np.zeros(shape), eta=0.3)
        trace = simulate_parametric_sgd(problem, 20)
        for t, g in enumerate(trace.gradients):
            assert np.allclose(g, (1 - 0.3) ** t * a, rtol=1e-10)

    def test_recursion_identity_random_terms(self):
        problem = random_parametric_problem((6, 6, 4), seed=5, n_terms=3)
        trace = simulate_parametric_sgd(problem, 30)
        residuals = recursion_residuals(problem, trace)
        assert max(residuals) <= 1e-10

    def test_divergence_detected(self):
        a = rng.standard_normal((3, 3))
        problem = ParametricProblem(a_terms=[a], b_terms=[np.eye(3)], c_terms=[np.eye(3)],
                                    w0=np.zeros((3, 3)), eta=2.5)  # |1 - eta| > 1
        with pytest.raises(RuntimeError):
            simulate_parametric_sgd(problem, 50)

    def test_rejects_non_psd(self):
        bad = np.diag([1.0, -0.5])
        with pytest.raises(ValueError):
            ParametricProblem(a_terms=[np.zeros((2, 2))], b_terms=[bad],
                              c_terms=[np.eye(2)], w0=np.zeros((2, 2)), eta=0.1)

    def test_symmetrizes_float_noise(self):
        b = psd(3, 9)
        b_noisy = b + 1e-14 * rng.standard_normal((3, 3))
        problem = ParametricProblem(a_terms=[np.zeros((3, 3))], b_terms=[b_noisy],
                                    c_terms=[np.eye(3)], w0=np.zeros((3, 3)), eta=0.1)
        assert np.allclose(problem.b_terms[0], problem.b_terms[0].T)


class TestModeOperator:
    def test_identity_terms_degenerate(self):
        problem = ParametricProblem(a_terms=[np.zeros((3, 3))], b_terms=[np.eye(3)],
                                    c_terms=[np.eye(3)], w0=np.zeros((3, 3)), eta=0.1)
        with pytest.raises(ValueError):
            build_mode_operator(problem, 0)  # all eigenvalues equal

    def test_diagonal_kronecker_eigenvalues(self):
        b = np.diag([1.0, 2.0])
        problem = ParametricProblem(a_terms=[np.zeros((2, 2))], b_terms=[b],
                                    c_terms=[np.eye(2)], w0=np.zeros((2, 2)), eta=0.1)
        op = build_mode_operator(problem, 0)
        assert op.lambda1 == pytest.approx(1.0)
        assert op.lambda2 == pytest.approx(2.0)
        assert np.allclose(np.sort(op.eigenvalues), [1, 1, 2, 2])

    def test_symmetry(self):
        problem = random_parametric_problem((4, 5, 3), seed=11, n_terms=2)
        for k in range(3):
            op = build_mode_operator(problem, k)
            assert fro_norm(op.matrix - op.matrix.T) <= 1e-12

    def test_operator_matches_application(self):
        # the assembled matrix acting on vec(unfold) equals the direct map
        from robustgrad.tensor_ops import unfold

        problem = random_parametric_problem((3, 4, 2), seed=13, n_terms=2)
        t = rng.standard_normal((3, 4, 2))
        direct = problem.apply_operator(t)
        for k in range(3):
            op = build_mode_operator(problem, k)
            vec = unfold(t, k).ravel()
            assert np.allclose(op.matrix @ vec, unfold(direct, k).ravel(), atol=1e-12)


class TestStableRankBound:
    def test_inside_minimal_eigenspace_equality(self):
        # G_t0 entirely inside V1: bound collapses to sr of the parallel part
        problem = random_parametric_problem((4, 4, 3), seed=17, n_terms=1)
        op = build_mode_operator(problem, 0)
        vec = op.v1 @ rng.standard_normal(op.v1.shape[1])
        from robustgrad.tensor_ops import fold

        ncols = vec.size // 4
        g0 = fold(vec.reshape(4, ncols), 0, (4, 4, 3))
        # seed the simulation with A chosen so the gradient is exactly g0
        w0 = np.zeros((4, 4, 3))
        problem2 = ParametricProblem(a_terms=[g0], b_terms=problem.b_terms,
                                     c_terms=problem.c_terms, w0=w0, eta=problem.eta)
        trace = simulate_parametric_sgd(problem2, 40)
        records = check_stable_rank_bound(trace, op, problem2.eta, t0=0)
        for rec in records:
            assert abs(rec.margin) <= 1e-8

    def test_random_problem_margins(self):
        for seed in range(5):
            problem = random_parametric_problem((5, 6, 4), seed=seed, n_terms=1)
            trace = simulate_parametric_sgd(problem, 150)
            for k in range(3):
                op = build_mode_operator(problem, k)
                records = check_stable_rank_bound(trace, op, problem.eta, t0=0)
                assert min(r.margin for r in records) >= -1e-8

    def test_nonzero_t0(self):
        problem = random_parametric_problem((4, 5, 3), seed=23, n_terms=1)
        trace = simulate_parametric_sgd(problem, 100)
        op = build_mode_operator(problem, 1)
        records = check_stable_rank_bound(trace, op, problem.eta, t0=20)
        assert records[0].step == 20
        assert min(r.margin for r in records) >= -1e-8

    def test_decay_rate_matches_eigenvalues(self):
        problem = random_parametric_problem((5, 6, 4), seed=3, n_terms=1)
        trace = simulate_parametric_sgd(problem, 200)
        op = build_mode_operator(problem, 0)
        expected = ((1 - problem.eta * op.lambda2) / (1 - problem.eta * op.lambda1)) ** 2
        fitted = perp_decay_rate(trace, op, problem.eta, t0=0)
        assert fitted == pytest.approx(expected, rel=0.05)

    def test_rank1_minimal_eigenspace_drives_sr_to_one(self):
        # decomposable minimal eigenvector: the gradient becomes rank-1 in
        # that mode and its stable rank converges to 1 (step count chosen so
        # the perpendicular part is suppressed ~1e-3 while the parallel part
        # stays far above float noise)
        b = psd(4, seed=41, lo=1.0, hi=2.0)
        c = psd(4, seed=43, lo=1.0, hi=1.8)
        a = rng.standard_normal((4, 4))
        problem = ParametricProblem(a_terms=[a], b_terms=[b], c_terms=[c],
                                    w0=np.zeros((4, 4)), eta=0.1)
        op = build_mode_operator(problem, 0)
        assert op.v1.shape[1] == 1  # simple minimal eigenvalue
        trace = simulate_parametric_sgd(problem, 250)
        assert fro_norm(trace.gradients[-1]) > 1e-13
        assert stable_rank(trace.gradients[-1], 0) == pytest.approx(1.0, abs=0.05)

    def test_bound_csv(self, tmp_path):
        problem = random_parametric_problem((4, 4, 3), seed=29, n_terms=1)
        trace = simulate_parametric_sgd(problem, 20)
        op = build_mode_operator(problem, 0)
        records = check_stable_rank_bound(trace, op, problem.eta, t0=0)
        path = tmp_path / "bound.csv"
        write_bound_csv(records, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,mode,sr_k,bound,margin"
        assert len(lines) == len(records) + 1


class TestContraction:
    def test_identity_terms_exact_ratio(self):
        # full projections, B = C = I: each step contracts by exactly 1 - eta
        shape = (3, 4)
        a = rng.standard_normal(shape)
        problem = ParametricProblem(a_terms=[a], b_terms=[np.eye(3)], c_terms=[np.eye(4)],
                                    w0=np.zeros(shape), eta=0.25)
        projections = [np.eye(3), np.eye(4)]
        report = check_contraction(problem, projections, steps=30)
        assert report.kappa == pytest.approx(1.0)
        for rec in report.records[:-1]:
            assert rec.ratio == pytest.approx(0.75, abs=1e-12)

    def test_kappa_zero_reports_without_convergence_claim(self):
        # projection into the null space of a singular B: kappa = 0
        b = np.diag([0.0, 0.0, 1.0])
        c = np.eye(3)
        a = rng.standard_normal((3, 3))
        problem = ParametricProblem(a_terms=[a], b_terms=[b], c_terms=[c],
                                    w0=np.zeros((3, 3)), eta=0.2)
        projections = [np.eye(3)[:, :2], np.eye(3)[:, :2]]
        report = check_contraction(problem, projections, steps=20)
        assert report.kappa == 0.0
        for rec in report.records:
            assert rec.ratio <= 1.0 + 1e-10  # still non-expanding

    def test_random_problem_contracts_within_budget(self):
        problem = random_parametric_problem((6, 5, 4), seed=7, n_terms=2)
        local = np.random.default_rng(0)
        projections = [np.linalg.qr(local.standard_normal((s, max(2, s // 2))))[0]
                       for s in problem.w0.shape]
        report = check_contraction(problem, projections)
        assert report.kappa > 0
        assert min(r.slack for r in report.records) >= -1e-10
        budget = contraction_step_budget(
            report.records[0].norm / (1 - problem.eta * report.kappa),
            problem.eta, report.kappa)
        assert report.converged_step is not None
        assert report.converged_step <= np.ceil(1.1 * budget)

    def test_budget_formula(self):
        assert contraction_step_budget(1.0, 0.1, 1.0, target=1e-8) == \
            int(np.ceil(np.log(1e-8) / np.log(0.9)))
        with pytest.raises(ValueError):
            contraction_step_budget(1.0, 0.1, 0.0)


class TestMemoryCount:
    def test_reference_integers(self):
        p_matrix, p_tensor = matched_rank_parameter_counts(64, 128, 16)
        assert p_matrix == 5_242_880
        assert p_tensor == 71_680
        assert p_matrix / p_tensor >= 73

    def test_adam_states(self):
        rep = memory_count("adam", (4, 5, 6))
        assert rep.weight_params == 120
        assert rep.state_scalars == 240
        assert memory_count("adam", (4, 5, 6), complex_values=True).state_scalars == 480

    def test_galore_table_row(self):
        rep = memory_count("galore_matrix", (8, 4, 4, 4), matrix_rank=2, matricize_dim=1)
        assert rep.state_scalars == 2 * 2 * (8 + 64)

    def test_tucker_figures(self):
        rep = memory_count("tucker", (8, 8, 8, 8), ranks=(2, 2, 2, 2))
        assert rep.figures["parameter_footprint"] == 2**4 + 4 * 16
        assert rep.figures["moment_footprint"] == 2 * 16
        assert rep.figures["table_row_factor_reading"] == 2 * 2 * 32

    def test_tensorgrad_composition(self):
        rep = memory_count("tensorgrad", (4, 4, 4), ranks=(2, 2, 2), rho=0.05)
        k = int(np.ceil(0.05 * 64))
        assert rep.moment_scalars == 2 * 8 + 2 * k
        assert rep.index_slots == k
        assert rep.factor_scalars == 3 * 8
        # complex doubles values but not index slots
        rep_c = memory_count("tensorgrad", (4, 4, 4), ranks=(2, 2, 2), rho=0.05,
                             complex_values=True)
        assert rep_c.moment_scalars == 2 * rep.moment_scalars
        assert rep_c.index_slots == k

    def test_full_budget_dominates_adam(self):
        shape = (4, 4, 4)
        full = memory_count("tensorgrad", shape, ranks=shape, rho=1.0)
        adam = memory_count("adam", shape)
        assert full.state_scalars >= adam.state_scalars

    def test_rank_validation(self):
        with pytest.raises(ValueError):
            memory_count("tucker", (4, 4), ranks=(5, 2))
        with pytest.raises(ValueError):
            memory_count("galore_matrix", (4, 4), matrix_rank=9)


class TestCorollaryFloor:
    def test_rank_capped_by_data_rank(self):
        trace = corollary_rank_floor(n=8, data_rank=3, n_samples=50, steps=200,
                                     eta=0.05, seed=1)
        ranks = np.asarray(trace.stable_ranks)
        assert np.all(ranks <= 3 + 1e-6)  # hard cap from the data span
        long_run = trace.long_run()
        for value in long_run:
            assert value <= min(8 - 3, 3) + 0.05

    def test_requires_deficient_rank(self):
        with pytest.raises(ValueError):
            corollary_rank_floor(n=4, data_rank=4, n_samples=10, steps=10, eta=0.1)


class TestProjectionComparison:
    def test_matricized_strands_spread_tucker_collapses(self):
        out = projection_rank_comparison(seed=0)
        matricized = out["matricized"].long_run()
        tucker = out["tucker"].long_run()
        n_half = 4.0
        data_rank = 2.0
        assert max(matricized[1:]) >= min(n_half, data_rank) - 0.1
        assert max(tucker) <= n_half + 0.1


class TestRobustErrorStats:
    def test_in_span_lowrank_error_zero(self):
        local = np.random.default_rng(3)
        core = local.standard_normal((2, 2, 2))
        t = core
        for n, dim in enumerate((6, 6, 6)):
            q, _ = np.linalg.qr(local.standard_normal((dim, 2)))
            t = np.moveaxis(np.tensordot(q, t, axes=([1], [n])), 0, n)
        stats = robust_error_stats(t, [{"order": "lr_only", "ranks": (2, 2, 2),
                                        "label": "lr"}], seeds=[0])
        assert stats["lr"]["max"][0] < 1e-10

    def test_planted_spikes_favor_sparse_first(self):
        local = np.random.default_rng(5)
        base = local.standard_normal((2, 2, 2))
        t = base
        for n, dim in enumerate((10, 10, 10)):
            q, _ = np.linalg.qr(local.standard_normal((dim, 2)))
            t = np.moveaxis(np.tensordot(q, t, axes=([1], [n])), 0, n)
        t = np.ascontiguousarray(t / np.sqrt(np.mean(t**2)))
        flat = t.reshape(-1)
        spots = local.choice(flat.size, 20, replace=False)
        flat[spots] += 30.0
        assert np.abs(t).max() > 25.0  # spikes actually landed
        stats = robust_error_stats(t, [
            {"order": "us_lr", "rho": 0.05, "ranks": (4, 4, 4), "label": "us_lr"},
            {"order": "lr_only", "ranks": (5, 5, 5), "label": "lr"},
        ], seeds=[0])
        assert stats["us_lr"]["max"][0] < stats["lr"]["max"][0]

    def test_stochastic_strategies_vary_with_seed(self):
        # mean error varies with the sampled index set (the max is pinned to
        # the largest untouched entry, so it barely moves)
        g = rng.standard_normal((6, 6, 6))
        stats = robust_error_stats(g, [{"order": "sparse_only", "rho": 0.1,
                                        "strategy": "randk", "label": "s"}],
                                   seeds=[0, 1, 2])
        assert len(set(stats["s"]["mean"])) > 1
