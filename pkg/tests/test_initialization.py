"""Multi-start initialization: determinism, pool guarantees, and the
k-means/random start constructions."""

import numpy as np
import pytest

from tfamix.ecm import fit
from tfamix.initialization import em_em, kmeans_start, random_start
from tfamix.model import Dataset, FitConfig, validate_model
from tfamix.simulate import SimSpec, ari, gen_tmix
from tfamix.ecm import make_result


def blob_data(n=150, p=5, sep=20.0, seed=0):
    spec = SimSpec(
        n=n,
        p=p,
        n_components=2,
        q_vec=(1, 1),
        dof_vec=(8.0, 8.0),
        weights=(0.5, 0.5),
        seed=seed,
        mean_scale=sep,
    )
    return gen_tmix(spec)


class TestKmeansStart:
    def test_single_cluster_mean(self):
        rng = np.random.default_rng(0)
        data = Dataset(y=rng.standard_normal((50, 5)))
        model = kmeans_start(data, 1, (1,), seed=0)
        np.testing.assert_allclose(
            model.components[0].mean, data.y.mean(axis=0), atol=1e-12
        )
        assert model.components[0].weight == 1.0

    def test_separated_blobs_exact_proportions(self):
        data = blob_data(n=200, sep=25.0, seed=1)
        model = kmeans_start(data, 2, (1, 1), seed=1)
        counts = np.bincount(data.labels)[1:]
        expected = sorted(counts / data.n, reverse=True)
        got = sorted((c.weight for c in model.components), reverse=True)
        np.testing.assert_allclose(got, expected)

    def test_deterministic(self):
        data = blob_data(seed=2)
        m1 = kmeans_start(data, 2, (1, 1), seed=7)
        m2 = kmeans_start(data, 2, (1, 1), seed=7)
        for a, b in zip(m1.components, m2.components):
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.loadings, b.loadings)

    def test_validates(self):
        data = blob_data(seed=3)
        assert validate_model(kmeans_start(data, 2, (1, 1), seed=3)) == []

    def test_k_exceeding_n_rejected(self):
        rng = np.random.default_rng(4)
        data = Dataset(y=rng.standard_normal((5, 5)))
        with pytest.raises(ValueError):
            kmeans_start(data, 6, (1,) * 6, seed=0)


class TestRandomStart:
    def test_deterministic(self):
        data = blob_data(seed=5)
        m1 = random_start(data, 2, (1, 1), seed=9)
        m2 = random_start(data, 2, (1, 1), seed=9)
        for a, b in zip(m1.components, m2.components):
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.loadings, b.loadings)

    def test_means_are_distinct_data_rows(self):
        data = blob_data(seed=6)
        model = random_start(data, 3, (1, 1, 1), seed=11)
        rows = {tuple(c.mean) for c in model.components}
        assert len(rows) == 3
        data_rows = {tuple(r) for r in data.y}
        assert rows <= data_rows

    def test_different_seeds_differ(self):
        data = blob_data(seed=7)
        m1 = random_start(data, 2, (1, 1), seed=1)
        m2 = random_start(data, 2, (1, 1), seed=2)
        assert not np.allclose(m1.components[0].mean, m2.components[0].mean)

    def test_validates(self):
        data = blob_data(seed=8)
        assert validate_model(random_start(data, 2, (2, 2), seed=3)) == []


class TestEmEm:
    def test_kmeans_only_pool(self):
        data = blob_data(seed=9)
        config = FitConfig(seed=4, n_short_starts=0, short_iters=3)
        model = em_em(data, 2, (1, 1), config)
        # pool reduces to the k-means start run to convergence
        direct = fit(
            data, 2, (1, 1), config,
            kmeans_start(data, 2, (1, 1), _km_seed(config.seed)),
        )
        assert model.loglik == pytest.approx(direct.model.loglik, rel=1e-12)

    def test_beats_or_matches_kmeans_only(self):
        data = blob_data(n=120, sep=3.0, seed=10)
        config = FitConfig(seed=5, n_short_starts=6, short_iters=3, n_retained=2)
        pooled = em_em(data, 2, (1, 1), config)
        kmeans_only = em_em(
            data, 2, (1, 1),
            FitConfig(seed=5, n_short_starts=0, short_iters=3, n_retained=2),
        )
        assert pooled.loglik >= kmeans_only.loglik - 1e-9 * abs(kmeans_only.loglik)

    def test_bimodal_ari_one(self):
        data = blob_data(n=150, sep=20.0, seed=11)
        config = FitConfig(seed=6, n_short_starts=4, short_iters=3, n_retained=2)
        model = em_em(data, 2, (1, 1), config)
        result = make_result(data, model)
        assert ari(data.labels, result.hard_assignment + 1) == 1.0

    def test_reproducible(self):
        data = blob_data(n=100, sep=4.0, seed=12)
        config = FitConfig(seed=13, n_short_starts=5, short_iters=2, n_retained=2)
        m1 = em_em(data, 2, (1, 1), config)
        m2 = em_em(data, 2, (1, 1), config)
        assert m1.loglik == m2.loglik
        for a, b in zip(m1.components, m2.components):
            np.testing.assert_array_equal(a.mean, b.mean)

    def test_monotone_pool_property(self):
        """Final loglik >= every retained candidate's short-run loglik."""
        data = blob_data(n=100, sep=4.0, seed=13)
        config = FitConfig(seed=14, n_short_starts=5, short_iters=2, n_retained=3)
        model = em_em(data, 2, (1, 1), config)
        short_config = FitConfig(seed=14, max_iter=2)
        short_lls = []
        from tfamix.initialization import _child_seed

        for i in range(5):
            start = random_start(data, 2, (1, 1), _child_seed(14, 10, i))
            short_lls.append(fit(data, 2, (1, 1), short_config, start).model.loglik)
        start = kmeans_start(data, 2, (1, 1), _child_seed(14, 11))
        short_lls.append(fit(data, 2, (1, 1), short_config, start).model.loglik)
        assert model.loglik >= max(short_lls) - 1e-9 * abs(max(short_lls))


def _km_seed(seed):
    from tfamix.initialization import _child_seed

    return _child_seed(seed, 11)
