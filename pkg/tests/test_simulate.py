"""Synthetic generation moments, overlap calibration, and the metric
functions with hand-computed and brute-force oracles."""

import math
from itertools import permutations

import numpy as np
import pytest

from tfamix.model import ComponentParams, MixtureModel, validate_model
from tfamix.simulate import (
    SimSpec,
    ari,
    calibrate_overlap,
    correctness_rate,
    draw_model,
    estimate_overlap,
    estimate_overlap_model,
    gen_tmix,
    match_components,
    rel_distances,
)
from tfamix.selection import SelectionEntry, SelectionTable


def base_spec(**overrides):
    defaults = dict(
        n=400,
        p=6,
        n_components=2,
        q_vec=(2, 2),
        dof_vec=(5.0, 5.0),
        weights=(0.6, 0.4),
        seed=0,
    )
    defaults.update(overrides)
    return SimSpec(**defaults)


class TestSimSpec:
    def test_rejects_bad_weights(self):
        with pytest.raises(ValueError):
            base_spec(weights=(0.5, 0.6))

    def test_rejects_inadmissible_q(self):
        with pytest.raises(ValueError):
            base_spec(q_vec=(4, 4))  # max_factors(6) = 2

    def test_rejects_bad_dof(self):
        with pytest.raises(ValueError):
            base_spec(dof_vec=(5.0, 0.0))


class TestDrawModel:
    def test_truth_validates(self):
        assert validate_model(draw_model(base_spec())) == []

    def test_deterministic(self):
        m1, m2 = draw_model(base_spec(seed=5)), draw_model(base_spec(seed=5))
        for a, b in zip(m1.components, m2.components):
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.loadings, b.loadings)

    def test_mean_scale_only_scales_means(self):
        m1 = draw_model(base_spec(seed=6, mean_scale=1.0))
        m2 = draw_model(base_spec(seed=6, mean_scale=4.0))
        for a, b in zip(m1.components, m2.components):
            np.testing.assert_allclose(b.mean, 4.0 * a.mean, rtol=1e-12)
            np.testing.assert_array_equal(a.loadings, b.loadings)
            np.testing.assert_array_equal(a.uniquenesses, b.uniquenesses)


class TestGenTmix:
    def test_deterministic(self):
        d1, d2 = gen_tmix(base_spec(seed=7)), gen_tmix(base_spec(seed=7))
        np.testing.assert_array_equal(d1.y, d2.y)
        np.testing.assert_array_equal(d1.labels, d2.labels)

    def test_label_frequencies_binomial(self):
        spec = base_spec(n=5000, seed=8)
        data = gen_tmix(spec)
        counts = np.bincount(data.labels, minlength=3)[1:]
        for k, w in enumerate(spec.weights):
            bound = 3.0 * math.sqrt(spec.n * w * (1.0 - w))
            assert abs(counts[k] - spec.n * w) <= bound

    def test_gaussian_limit_covariance(self):
        spec = base_spec(
            n=5000, dof_vec=(1e6, 1e6), seed=9, weights=(0.5, 0.5), mean_scale=50.0
        )
        data = gen_tmix(spec)
        truth = draw_model(spec)
        for k, comp in enumerate(truth.components):
            rows = data.y[data.labels == k + 1]
            emp = np.cov(rows, rowvar=False, bias=True)
            target = comp.scale_matrix()
            rel = np.linalg.norm(emp - target) / np.linalg.norm(target)
            assert rel < 0.15

    def test_component_means_converge(self):
        # at nu = 5 the mean exists; check against 5 standard errors
        spec = base_spec(n=20000, dof_vec=(5.0, 5.0), seed=10, mean_scale=10.0)
        data = gen_tmix(spec)
        truth = draw_model(spec)
        for k, comp in enumerate(truth.components):
            rows = data.y[data.labels == k + 1]
            se = rows.std(axis=0) / math.sqrt(rows.shape[0])
            assert np.all(np.abs(rows.mean(axis=0) - comp.mean) <= 5.0 * se)


class TestOverlap:
    def test_huge_separation_gives_zero(self):
        spec = base_spec(seed=11, mean_scale=1e4)
        assert estimate_overlap(spec, mc_samples=4000) == 0.0

    def test_identical_components_maximal(self):
        p = 5
        rng = np.random.default_rng(12)
        psi = rng.uniform(0.5, 1.0, size=p)
        comp = dict(
            mean=np.zeros(p),
            loadings=np.zeros((p, 1)),
            uniquenesses=psi,
            dof=30.0,
            n_factors=1,
        )
        model = MixtureModel(
            components=(
                ComponentParams(weight=0.5, **comp),
                ComponentParams(weight=0.5, **comp),
            ),
            p=p,
        )
        est = estimate_overlap_model(model, mc_samples=4000, seed=3)
        # every point is a coin flip; ties all resolve to component 0
        assert est == pytest.approx(0.5, abs=0.05)

    def test_calibration_hits_target(self):
        spec = base_spec(seed=13, target_overlap=0.01)
        calibrated = calibrate_overlap(spec, mc_samples=20000)
        fresh = estimate_overlap(calibrated, mc_samples=100000, stream=9)
        assert fresh == pytest.approx(0.01, rel=0.2)

    def test_unreachable_target_errors(self):
        spec = base_spec(seed=14, target_overlap=0.9)
        with pytest.raises(ValueError, match="achievable"):
            calibrate_overlap(spec, mc_samples=4000)


class TestAri:
    def test_identical_partitions(self):
        labels = np.array([1, 1, 2, 2, 3, 3])
        assert ari(labels, labels) == 1.0

    def test_relabeled_partitions(self):
        a = np.array([1, 1, 2, 2])
        b = np.array([9, 9, 4, 4])
        assert ari(a, b) == 1.0

    def test_hand_computed_negative_case(self):
        assert ari([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)

    def test_null_distribution_concentration(self):
        rng = np.random.default_rng(15)
        a = rng.integers(1, 4, size=10000)
        b = rng.integers(1, 4, size=10000)
        assert abs(ari(a, b)) < 0.02

    def test_symmetry(self):
        rng = np.random.default_rng(16)
        a = rng.integers(1, 5, size=300)
        b = rng.integers(1, 4, size=300)
        assert ari(a, b) == pytest.approx(ari(b, a), rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ari([1, 2], [1, 2, 3])


def model_with_means(means, q=1):
    means = np.asarray(means, dtype=float)
    K, p = means.shape
    comps = tuple(
        ComponentParams(
            weight=1.0 / K,
            mean=means[k],
            loadings=np.zeros((p, q)),
            uniquenesses=np.ones(p),
            dof=10.0,
            n_factors=q,
        )
        for k in range(K)
    )
    return MixtureModel(components=comps, p=p)


class TestMatchComponents:
    def test_identity(self):
        m = model_with_means([[0.0, 0.0], [5.0, 5.0]])
        np.testing.assert_array_equal(match_components(m, m), [0, 1])

    def test_reversed(self):
        truth = model_with_means([[0.0, 0.0], [5.0, 5.0]])
        flipped = model_with_means([[5.0, 5.0], [0.0, 0.0]])
        np.testing.assert_array_equal(match_components(truth, flipped), [1, 0])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            truth = model_with_means(rng.standard_normal((3, 4)))
            fitted = model_with_means(rng.standard_normal((3, 4)))
            perm = match_components(truth, fitted)
            mu_t = np.stack([c.mean for c in truth.components])
            mu_f = np.stack([c.mean for c in fitted.components])

            def cost(order):
                return sum(
                    np.linalg.norm(mu_t[k] - mu_f[order[k]]) for k in range(3)
                )

            best = min(permutations(range(3)), key=cost)
            assert cost(tuple(perm)) == pytest.approx(cost(best), rel=1e-12)

    def test_k_mismatch(self):
        with pytest.raises(ValueError):
            match_components(
                model_with_means([[0.0], [1.0]]), model_with_means([[0.0]])
            )


class TestRelDistances:
    def test_zero_for_identical(self):
        model = draw_model(base_spec(seed=18))
        dist = rel_distances(model, model, np.arange(2))
        np.testing.assert_array_equal(dist.d_mu, np.zeros(2))
        np.testing.assert_array_equal(dist.d_lambda, np.zeros(2))
        np.testing.assert_array_equal(dist.d_psi, np.zeros(2))

    def test_doubled_uniquenesses(self):
        p = 4
        base = ComponentParams(
            weight=1.0,
            mean=np.ones(p),
            loadings=np.zeros((p, 1)),
            uniquenesses=np.ones(p),
            dof=5.0,
            n_factors=1,
        )
        doubled = ComponentParams(
            weight=1.0,
            mean=np.ones(p),
            loadings=np.zeros((p, 1)),
            uniquenesses=2.0 * np.ones(p),
            dof=5.0,
            n_factors=1,
        )
        truth = MixtureModel(components=(base,), p=p)
        fitted = MixtureModel(components=(doubled,), p=p)
        dist = rel_distances(truth, fitted, np.array([0]))
        assert dist.d_psi[0] == pytest.approx(1.0)

    def test_rotation_invariance_of_loading_distance(self):
        rng = np.random.default_rng(19)
        p, q = 6, 2
        lam = rng.standard_normal((p, q))
        rot, _ = np.linalg.qr(rng.standard_normal((q, q)))
        mk = lambda L: MixtureModel(
            components=(
                ComponentParams(
                    weight=1.0,
                    mean=np.zeros(p),
                    loadings=L,
                    uniquenesses=np.ones(p),
                    dof=5.0,
                    n_factors=q,
                ),
            ),
            p=p,
        )
        dist = rel_distances(mk(lam), mk(lam @ rot), np.array([0]))
        assert dist.d_lambda[0] <= 1e-12

    def test_zero_norm_flagged_absolute(self):
        p = 3
        zero_mean = model_with_means(np.zeros((1, p)))
        off_mean = model_with_means(np.ones((1, p)))
        dist = rel_distances(zero_mean, off_mean, np.array([0]))
        assert "d_mu[0]" in dist.absolute
        assert dist.d_mu[0] == pytest.approx(math.sqrt(3.0))


def table_with_best(K, q_vec):
    entry = SelectionEntry(
        K=K, q_vec=tuple(q_vec), loglik=0.0, k_p=1, bic=-1.0, status="converged"
    )
    return SelectionTable(entries=(entry,), best_index=0)


class TestCorrectnessRate:
    def test_all_correct(self):
        tables = [table_with_best(2, (2, 3)) for _ in range(5)]
        assert correctness_rate(tables, (2, (2, 3))) == 1.0

    def test_permuted_q_counts_as_correct(self):
        tables = [table_with_best(2, (3, 2))]
        assert correctness_rate(tables, (2, (2, 3))) == 1.0

    def test_fractional(self):
        tables = [table_with_best(2, (2, 2))] * 7 + [table_with_best(3, (2, 2, 2))] * 3
        assert correctness_rate(tables, (2, (2, 2))) == pytest.approx(0.7)
