import numpy as np
import pytest

from moomin import tensor as T
from moomin.errors import DataError, DegenerateDataError
from moomin.metrics import report
from moomin.synergy import MoominModel, SynergyRecord, batch_forward
from moomin.synth import SynthSpec, generate
from moomin.trainer import (
    AdamState,
    TrainConfig,
    adam_step,
    decays,
    evaluate,
    model_config,
    molecule_size_class,
    pair_size_class,
    split_records,
    stream,
    train,
)


@pytest.fixture(scope="module")
def separable():
    spec = SynthSpec(n_drugs=14, n_proteins=8, n_cells=2, n_records=60, planted_rule="molecular", seed=1)
    return generate(spec)[1]


class TestAdam:
    def test_zero_grads_no_decay(self):
        p = {"w": T.parameter([[1.0, -2.0]])}
        adam_step(p, AdamState(), 0.1, 0.0)
        assert p["w"].data.tolist() == [[1.0, -2.0]]

    def test_first_step_is_minus_lr(self):
        # t=1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
        lr, eps = 0.01, 1e-8
        p = {"w": T.parameter([[0.5]])}
        p["w"].grad = np.array([[1.0]])
        adam_step(p, AdamState(eps=eps), lr)
        assert p["w"].item() == pytest.approx(0.5 - lr / (1.0 + eps), abs=1e-15)

    def test_decoupled_decay_shrinks(self):
        lr, wd = 0.1, 0.01
        p = {"head.w1": T.parameter([[2.0, -4.0]]), "head.b1": T.parameter([[2.0]]),
             "cell.table": T.parameter([[2.0]])}
        adam_step(p, AdamState(), lr, wd)
        assert np.allclose(p["head.w1"].data, np.array([[2.0, -4.0]]) * (1 - lr * wd), rtol=0, atol=1e-15)
        assert p["head.b1"].item() == 2.0
        assert p["cell.table"].item() == 2.0

    def test_decay_rules(self):
        assert decays("drug.w1") and decays("head.w2")
        assert not decays("drug.b1") and not decays("cell.table")

    def test_matches_reference_recurrence(self):
        rng = np.random.default_rng(0)
        w0 = rng.normal(size=(2, 3))
        grads = [rng.normal(size=(2, 3)) for _ in range(5)]
        p = {"w": T.parameter(w0.copy())}
        state = AdamState()
        for g in grads:
            adam_step(p, state, 0.01, 0.1, grads={"w": g})
        w, m, v = w0.copy(), np.zeros_like(w0), np.zeros_like(w0)
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w = w * (1 - 0.01 * 0.1)
            w = w - 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.max(np.abs(p["w"].data - w)) < 1e-15


class TestSplit:
    def test_seeded_partition(self, separable):
        a_train, a_test = split_records(separable.synergy, 0.8, 5)
        b_train, b_test = split_records(separable.synergy, 0.8, 5)
        assert a_train == b_train and a_test == b_test
        assert len(a_train) == 48 and len(a_test) == 12
        assert sorted(map(repr, a_train + a_test)) == sorted(map(repr, separable.synergy))

    def test_streams_independent(self):
        assert stream(0, "split").random() != stream(0, "init").random()
        assert stream(3, "walks").random() == stream(3, "walks").random()


class TestTrain:
    def test_zero_epochs(self, separable):
        cfg = TrainConfig(epochs=0, seed=2)
        res = train(cfg, separable)
        init = MoominModel.init(model_config(cfg, separable), separable.cells, stream(2, "init"))
        assert res.history == []
        for name, p in init.parameters().items():
            assert np.array_equal(p.data, res.model.parameters()[name].data)

    @pytest.mark.parametrize("mode", ["exact", "sampled"])
    def test_deterministic(self, separable, mode):
        cfg = TrainConfig(r=1, mode=mode, samples=8, epochs=3, seed=4)
        a, b = train(cfg, separable), train(cfg, separable)
        for name, p in a.model.parameters().items():
            assert np.array_equal(p.data, b.model.parameters()[name].data)

    def test_loss_drops_on_separable_set(self, separable):
        cfg = TrainConfig(r=1, epochs=200, seed=0)
        res = train(cfg, separable)
        init = MoominModel.init(model_config(cfg, separable), separable.cells, stream(0, "init"))
        initial = batch_forward(res.train_records, init, separable.graph, separable).loss.item()
        final = batch_forward(res.train_records, res.model, separable.graph, separable).loss.item()
        assert 0.5 <= initial <= 0.9
        assert final < 0.25 * initial
        assert all(np.isfinite(h.train_loss) for h in res.history)
        for p in res.model.parameters().values():
            assert np.isfinite(p.data).all()

    def test_single_class_rejected(self, separable):
        ones = [rec for rec in separable.synergy if rec.label == 1]
        with pytest.raises(DegenerateDataError):
            train(TrainConfig(epochs=1), separable, records=ones, test=[])

    def test_cv_selects_epoch_count(self, separable):
        res = train(TrainConfig(r=0, epochs=3, cv_folds=2, seed=1), separable)
        assert 1 <= res.epochs <= 3 and len(res.history) == res.epochs

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr=0)
        with pytest.raises(ValueError):
            TrainConfig(mode="approx")


class TestEvaluate:
    def test_perfect_scores(self, separable):
        recs = separable.synergy
        labels = np.array([r.label for r in recs], dtype=float)
        rep = evaluate(None, recs, separable, scores=labels)["all"]
        assert (rep.roc_auc, rep.pr_auc, rep.f1) == (1.0, 1.0, 1.0)

    def test_single_group_equals_global(self, separable):
        tissue = separable.tissues[separable.synergy[0].cell]
        recs = [r for r in separable.synergy if separable.tissues[r.cell] == tissue]
        scores = np.random.default_rng(0).random(len(recs))
        grouped = evaluate(None, recs, separable, group_by="tissue", scores=scores)
        assert list(grouped.values()) == [report([r.label for r in recs], scores)]

    def test_molecule_size_boundary(self):
        assert molecule_size_class(50) == "Large"
        assert molecule_size_class(49) == "Small"
        assert pair_size_class(50, 10) == pair_size_class(10, 50) == "Large-Small"
        assert pair_size_class(50, 51) == "Large-Large"

    def test_unknown_group_key(self, separable):
        with pytest.raises(ValueError):
            evaluate(None, separable.synergy, separable, group_by="colour", scores=np.zeros(60))


def test_unseen_cell_is_data_error(separable):
    res = train(TrainConfig(epochs=1), separable)
    with pytest.raises(DataError, match="unknown cells: nope"):
        evaluate(res.model, [SynergyRecord("D000", "D001", "nope", 1)], separable)
