import math

import numpy as np
import pytest

from moomin import tensor as T
from moomin.contextualizer import EXACT, SAMPLED, MultiScaleRep
from moomin.errors import DataError, DimensionError
from moomin.synergy import (
    HeadParams,
    ModelConfig,
    MoominModel,
    SynergyRecord,
    batch_forward,
    bce,
    pair_cell_rep,
    predict,
    score,
)

from conftest import max_rel_err, numeric_grad


def model_for(bundle, r=1, seed=0):
    return MoominModel.init(ModelConfig(r=r, protein_dim=bundle.protein_dim), bundle.cells,
                            np.random.default_rng(seed))


class TestRecord:
    def test_same_drug_rejected(self):
        with pytest.raises(ValueError):
            SynergyRecord("d1", "d1", "c", 1)

    def test_label_must_be_binary(self):
        with pytest.raises(ValueError):
            SynergyRecord("d1", "d2", "c", 2)


class TestPairCellRep:
    @pytest.mark.parametrize("r,width", [(0, 208), (1, 272), (2, 464)])
    def test_widths(self, r, width):
        assert ModelConfig(r=r).head_in == width

    def test_zero_inputs(self):
        rep = MultiScaleRep([T.constant(np.zeros((1, 96))), T.constant(np.zeros((1, 32)))])
        h = pair_cell_rep(rep, rep, T.constant(np.zeros((1, 16))))
        assert h.shape == (1, 272) and not h.data.any()

    def test_block_mismatch(self):
        a = MultiScaleRep([T.constant(np.zeros((1, 96)))])
        b = MultiScaleRep([T.constant(np.zeros((1, 96))), T.constant(np.zeros((1, 32)))])
        with pytest.raises(DimensionError):
            pair_cell_rep(a, b, T.constant(np.zeros((1, 16))))


class TestScore:
    def test_zero_head(self):
        head = HeadParams.init(np.random.default_rng(0), 272)
        for p in head.parameters().values():
            p.data = np.zeros_like(p.data)
        h = T.constant(np.random.default_rng(1).normal(size=(3, 272)))
        assert np.array_equal(score(head, h).data, np.full((3, 1), 0.5))

    def test_inference_deterministic(self):
        head = HeadParams.init(np.random.default_rng(0), 20)
        h = T.constant(np.random.default_rng(1).normal(size=(2, 20)))
        assert np.array_equal(score(head, h).data, score(head, h).data)

    def test_gradient(self):
        rng = np.random.default_rng(2)
        head = HeadParams.init(rng, 12)
        head.b1.data = rng.normal(scale=0.2, size=head.b1.shape)
        h = T.parameter(rng.normal(size=(3, 12)))
        params = [*head.parameters().values(), h]

        def loss():
            return T.total(score(head, h))

        T.backward(loss())
        for p in params:
            assert max_rel_err(p.grad, numeric_grad(lambda: loss().item(), p.data)) < 1e-4


class TestBce:
    def test_values(self):
        assert bce([[1]], [[0.5]]).item() == pytest.approx(math.log(2), abs=1e-15)
        assert bce([[1]], [[1.0]]).item() == pytest.approx(0.0, abs=1e-11)
        assert bce([[0]], [[0.9]]).item() == pytest.approx(-math.log(0.1), abs=1e-12)

    def test_finite_at_boundaries(self):
        out = bce([[1], [0], [1], [0]], [[0.0], [1.0], [1.0], [0.0]]).data
        assert np.isfinite(out).all()

    def test_monotone_for_positive(self):
        p = np.linspace(0, 1, 101)[:, None]
        out = bce(np.ones_like(p), p).data[:, 0]
        assert np.all(np.diff(out) <= 0)


class TestBatchForward:
    def test_single_record_loss(self, bundle):
        model = model_for(bundle)
        res = batch_forward(bundle.synergy[:1], model, bundle.graph, bundle)
        expected = bce([[bundle.synergy[0].label]], res.scores[:, None]).item()
        assert res.loss.item() == pytest.approx(expected, abs=1e-15)

    def test_duplicates_keep_mean(self, bundle):
        model = model_for(bundle)
        one = batch_forward(bundle.synergy[:1], model, bundle.graph, bundle).loss.item()
        two = batch_forward(bundle.synergy[:1] * 2, model, bundle.graph, bundle).loss.item()
        assert abs(one - two) < 1e-15

    def test_mean_decomposition(self, bundle):
        model = model_for(bundle, r=2)
        whole = batch_forward(bundle.synergy, model, bundle.graph, bundle).loss.item()
        parts = [batch_forward([rec], model, bundle.graph, bundle).loss.item() for rec in bundle.synergy]
        assert abs(whole - np.mean(parts)) < 1e-12

    def test_order_is_not_canonicalized(self, bundle):
        model = model_for(bundle)
        rec = bundle.synergy[0]
        swapped = SynergyRecord(rec.drug_b, rec.drug_a, rec.cell, rec.label)
        a, b = predict([rec, swapped], model, bundle.graph, bundle)
        assert 0 < a < 1 and 0 < b < 1

    def test_sampled_close_to_exact(self, bundle):
        model = model_for(bundle, r=2)
        exact = predict(bundle.synergy, model, bundle.graph, bundle, EXACT)
        approx = predict(bundle.synergy, model, bundle.graph, bundle, SAMPLED, 4096, np.random.default_rng(0))
        assert np.max(np.abs(exact - approx)) < 0.02

    def test_unknown_references(self, bundle):
        model = model_for(bundle)
        with pytest.raises(DataError, match="zz.*c9|c9"):
            batch_forward([SynergyRecord("d1", "zz", "c9", 0)], model, bundle.graph, bundle)

    def test_training_dropout_uses_stream(self, bundle):
        model = model_for(bundle)
        run = [batch_forward(bundle.synergy, model, bundle.graph, bundle, training=True,
                             dropout_rng=np.random.default_rng(3)).loss.item() for _ in range(2)]
        assert run[0] == run[1]

    def test_parameter_names(self, bundle):
        names = list(model_for(bundle).parameters())
        assert names[0] == "drug.w1" and "cell.table" in names and names[-1] == "head.b2"
