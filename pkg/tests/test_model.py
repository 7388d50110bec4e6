"""Domain-type invariants, validation diagnostics, and JSON round-trips."""

import math

import numpy as np
import pytest

from tfamix.model import (
    ComponentParams,
    Dataset,
    FitConfig,
    MixtureModel,
    Responsibilities,
    model_from_json,
    model_to_json,
    validate_model,
)


def make_component(weight=0.5, p=5, q=1, seed=0, dof=5.0):
    rng = np.random.default_rng(seed)
    psi = rng.uniform(0.5, 1.5, size=p)
    # Psi^(1/2) V d is identifiable by construction
    v, _ = np.linalg.qr(rng.standard_normal((p, q)))
    loadings = np.sqrt(psi)[:, None] * v * 0.8
    return ComponentParams(
        weight=weight,
        mean=rng.standard_normal(p),
        loadings=loadings,
        uniquenesses=psi,
        dof=dof,
        n_factors=q,
    )


def make_model(weights=(0.5, 0.5), p=5, q=1):
    comps = tuple(
        make_component(weight=w, p=p, q=q, seed=i) for i, w in enumerate(weights)
    )
    return MixtureModel(components=comps, p=p, loglik=-12.5, trace=(-13.0, -12.5))


class TestDataset:
    def test_basic(self):
        d = Dataset(y=np.zeros((4, 2)))
        assert d.n == 4 and d.p == 2

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Dataset(y=np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            Dataset(y=np.zeros((1, 2)))

    def test_label_range(self):
        Dataset(y=np.zeros((3, 2)), labels=[1, 2, 1])
        with pytest.raises(ValueError):
            Dataset(y=np.zeros((3, 2)), labels=[0, 1, 1])

    def test_immutable(self):
        d = Dataset(y=np.zeros((3, 2)))
        with pytest.raises(ValueError):
            d.y[0, 0] = 1.0


class TestValidateModel:
    def test_valid_symmetric_model(self):
        assert validate_model(make_model((0.5, 0.5))) == []

    def test_weight_sum_violation(self):
        bad = make_model((0.7, 0.4))
        messages = validate_model(bad)
        assert any("weights sum" in m for m in messages)

    def test_identifiability_violation_via_rotation(self):
        base = make_component(weight=1.0, p=5, q=2, seed=3)
        # rotate a valid loading matrix: Lambda^T Psi^-1 Lambda picks up
        # off-diagonal mass unless the rotation is axis-aligned
        angle = 0.7
        rot = np.array(
            [[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]]
        )
        # make the diagonal distinct first so the rotation misaligns it
        loadings = base.loadings * np.array([1.0, 2.0])
        rotated = ComponentParams(
            weight=1.0,
            mean=base.mean,
            loadings=loadings @ rot,
            uniquenesses=base.uniquenesses,
            dof=base.dof,
            n_factors=2,
        )
        model = MixtureModel(components=(rotated,), p=5)
        messages = validate_model(model)
        assert any("identifiable" in m for m in messages)

    def test_trace_decrease_detected(self):
        model = MixtureModel(
            components=(make_component(weight=1.0),),
            p=5,
            loglik=-10.0,
            trace=(-10.0, -9.0, -9.5),
        )
        assert any("trace decreases" in m for m in validate_model(model))

    def test_q_bound_violation(self):
        comp = make_component(weight=1.0, p=4, q=2, seed=1)
        model = MixtureModel(components=(comp,), p=4)
        # max_factors(4) = 1
        assert any("exceeds bound" in m for m in validate_model(model))


class TestSerialization:
    def test_round_trip_bit_exact(self):
        model = make_model((0.625, 0.375), p=4, q=2)
        restored = model_from_json(model_to_json(model))
        assert restored.p == model.p
        assert restored.loglik == model.loglik
        assert restored.trace == model.trace
        assert restored.converged == model.converged
        assert restored.iterations == model.iterations
        for a, b in zip(restored.components, model.components):
            assert a.weight == b.weight
            assert a.dof == b.dof
            assert a.n_factors == b.n_factors
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.loadings, b.loadings)
            np.testing.assert_array_equal(a.uniquenesses, b.uniquenesses)

    def test_loadings_row_major(self):
        model = make_model((1.0,), p=3, q=1)
        import json

        payload = json.loads(model_to_json(model))
        flat = payload["components"][0]["loadings"]
        np.testing.assert_array_equal(
            np.array(flat).reshape(3, 1), model.components[0].loadings
        )


class TestResponsibilities:
    def test_row_sum_enforced(self):
        with pytest.raises(ValueError):
            Responsibilities(gamma=np.array([[0.6, 0.3]]), eta=np.ones((1, 2)))

    def test_eta_positive(self):
        with pytest.raises(ValueError):
            Responsibilities(gamma=np.array([[0.5, 0.5]]), eta=np.array([[1.0, 0.0]]))


class TestFitConfig:
    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.tol == 1e-6
        assert cfg.max_iter == 500
        assert cfg.dof_bounds == (0.5, 200.0)

    def test_psi_floor_resolution(self):
        y = np.array([[0.0, 0.0], [2.0, 0.5], [4.0, 1.0]])
        expected = 1e-6 * np.var(y[:, 0])
        assert FitConfig().resolve_psi_floor(y) == pytest.approx(expected)
        assert FitConfig(psi_floor=0.25).resolve_psi_floor(y) == 0.25

    def test_dict_round_trip(self):
        cfg = FitConfig(seed=7, dof_bounds=(1.0, 50.0))
        again = FitConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            FitConfig(tol=0.0)
        with pytest.raises(ValueError):
            FitConfig(dof_bounds=(5.0, 5.0))
        with pytest.raises(ValueError):
            FitConfig.from_dict({"bogus": 1})
