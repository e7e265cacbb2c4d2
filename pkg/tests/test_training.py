import numpy as np
import pytest

from sketch_retrieval.autodiff import backward, constant, parameter
from sketch_retrieval.autodiff import tensor as ops
from sketch_retrieval.autodiff.gradcheck import gradcheck
from sketch_retrieval.config import Settings
from sketch_retrieval.data import Corpus, SampleRecord, generate_corpus
from sketch_retrieval.evaluation import evaluate
from sketch_retrieval.model import build_model
from sketch_retrieval.model.network import config_path_for, load_model
from sketch_retrieval.training import Trainer, Triplet, read_loss_trace, relation_loss, total_loss, train, triplet_loss
from sketch_retrieval.training.losses import distance_triplet_loss, triplet_term
from sketch_retrieval.training.trainer import batch_rng, plan_batches, trace_path_for


class TestTripletLoss:
    def test_satisfied_margin_gives_zero(self):
        loss = distance_triplet_loss([constant(0.1)], [constant(0.5)], 0.2)
        assert loss.item() == 0.0

    def test_violated_margin(self):
        loss = distance_triplet_loss([constant(0.5)], [constant(0.1)], 0.2)
        assert loss.item() == pytest.approx(0.6)

    def test_anchor_equal_positive_with_zero_margin(self, rng):
        anchor = constant(rng.normal(size=(1, 4)))
        triplet = Triplet(anchor, anchor, constant(rng.normal(size=(1, 4))))
        assert triplet_loss([triplet], 0.0).item() == 0.0

    def test_mean_over_triplets(self):
        a = constant([[0.0, 0.0]])
        near, far = constant([[0.3, 0.4]]), constant([[0.0, 1.0]])
        loss = triplet_loss([Triplet(a, near, far), Triplet(a, far, near)], 0.0)
        assert loss.item() == pytest.approx(0.25)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            triplet_loss([], 0.2)

    def test_term_vanishes_whenever_negative_clears_the_margin(self):
        for positive in (0.0, 0.25, 0.5, 1.0, 2.0):
            for margin in (0.0, 0.25, 0.5):
                for extra in (0.0, 0.25, 1.0):
                    negative = positive + margin + extra
                    term = triplet_term(constant(positive), constant(negative), margin)
                    assert term.item() == 0.0
                if positive + margin >= 0.25:
                    short = positive + margin - 0.25
                    assert triplet_term(constant(positive), constant(short), margin).item() == 0.25


class TestRelationAndTotalLoss:
    def test_perfect_match_contributes_nothing(self):
        assert relation_loss(constant([[1.0]]), np.array([1.0])).item() == 0.0

    def test_half_score_contributes_quarter(self):
        assert relation_loss(constant([[0.5], [0.5]]), np.array([1.0, 0.0])).item() == 0.25

    def test_all_matched_with_zero_scores(self):
        assert relation_loss(constant(np.zeros((4, 1))), np.ones(4)).item() == 1.0

    def test_total_is_unweighted_sum(self):
        assert total_loss(constant(0.0), constant(0.0)).item() == 0.0
        assert total_loss(constant(0.3), constant(0.2)).item() == pytest.approx(0.5)
        assert total_loss(constant(0.3), None).item() == pytest.approx(0.3)

    def test_total_gradient_is_sum_of_parts(self, rng):
        x = parameter(rng.normal(size=(2, 1)))
        anchor = constant(rng.normal(size=(2, 1)))
        scores = lambda: ops.sigmoid(x)
        tri = lambda: ops.norm(ops.sub(x, anchor))
        rel = lambda: relation_loss(scores(), np.array([1.0, 0.0]))

        backward(tri())
        tri_grad = x.grad.copy()
        backward(rel())
        rel_grad = x.grad.copy()
        backward(total_loss(tri(), rel()))
        np.testing.assert_allclose(x.grad, tri_grad + rel_grad, atol=1e-12)


class TestBatches:
    def test_plan_covers_every_pair_once(self, rng):
        plan = plan_batches(10, 4, rng)
        assert [len(batch) for batch in plan] == [4, 4, 2]
        assert sorted(np.concatenate(plan).tolist()) == list(range(10))

    def test_batch_of_one_rejected(self, rng):
        with pytest.raises(ValueError, match="batch_size"):
            plan_batches(10, 1, rng)


class TestTrain:
    def test_writes_checkpoint_config_and_trace(self, trained):
        result, settings = trained
        assert result.checkpoint.exists()
        assert config_path_for(result.checkpoint).exists()
        assert result.trace_path == trace_path_for(result.checkpoint)
        trace = read_loss_trace(result.trace_path)
        assert [e.epoch for e in trace] == [1, 2]
        assert [e.total for e in trace] == [e.total for e in result.trace]
        for entry in trace:
            assert entry.total == pytest.approx(entry.triplet + entry.relation)

    def test_checkpoint_reloads_identical_weights(self, trained):
        result, _ = trained
        reloaded = load_model(result.checkpoint)
        for (name, a), (_, b) in zip(result.model.named_parameters(), reloaded.named_parameters()):
            np.testing.assert_array_equal(a.data, b.data, err_msg=name)

    def test_same_seed_gives_identical_trace(self, micro_corpus, make_settings):
        settings = make_settings()
        first = train(micro_corpus, settings).trace
        second = train(micro_corpus, settings).trace
        assert first == second

    def test_zero_learning_rate_keeps_relation_loss_constant(self, micro_corpus, make_settings):
        settings = make_settings(train__lr="0", train__epochs="3", relation__dropout="0")
        trace = train(micro_corpus, settings).trace
        assert len({entry.relation for entry in trace}) == 1

    def test_dropout_masks_change_between_epochs(self, micro_corpus, make_settings):
        settings = make_settings(train__lr="0", train__epochs="3", relation__dropout="0.5")
        trace = train(micro_corpus, settings).trace
        assert len({entry.relation for entry in trace}) == 3

    def test_batch_generators_are_keyed_by_epoch(self):
        ones = constant(np.ones((8, 8)))
        masks = {
            epoch: ops.dropout(ones, 0.5, True, batch_rng(3, epoch, 0)).data for epoch in (1, 2)
        }
        assert not np.array_equal(masks[1], masks[2])
        again = ops.dropout(ones, 0.5, True, batch_rng(3, 1, 0)).data
        np.testing.assert_array_equal(masks[1], again)

    def test_reshuffled_epochs_still_deterministic(self, micro_corpus, make_settings):
        settings = make_settings(train__reshuffle_each_epoch="true")
        assert train(micro_corpus, settings).trace == train(micro_corpus, settings).trace

    def test_without_relation_loss(self, micro_corpus, make_settings):
        trace = train(micro_corpus, make_settings(train__relation_loss="false", train__epochs="1")).trace
        assert trace[0].relation == 0.0
        assert trace[0].total == trace[0].triplet

    def test_without_retrieval_token_trains_relation_only(self, micro_corpus, make_settings):
        trace = train(micro_corpus, make_settings(encoder__use_ret="false", train__epochs="1")).trace
        assert trace[0].triplet == 0.0
        assert trace[0].total == trace[0].relation

    def test_single_training_category_rejected(self, tmp_path, make_settings):
        records = [
            SampleRecord("s0.pgm", "sketch", 0, 0, "train"),
            SampleRecord("p0.ppm", "photo", 0, 0, "train"),
            SampleRecord("s1.pgm", "sketch", 1, 1, "test"),
            SampleRecord("p1.ppm", "photo", 1, 1, "test"),
        ]
        with pytest.raises(ValueError, match="at least 2 training categories"):
            train(Corpus(tmp_path, records), make_settings())

    def test_batch_without_loss_terms_is_skipped(self, micro_corpus, make_settings):
        settings = make_settings(train__relation_loss="false")
        category = micro_corpus.splits["train"][0]
        pairs = [pair for pair in micro_corpus.pairs("train") if pair[0].category_id == category]
        model = build_model(settings)
        before = {name: t.data.copy() for name, t in model.named_parameters()}
        step = Trainer(model, settings).step(
            micro_corpus.load_many(s for s, _ in pairs),
            micro_corpus.load_many(p for _, p in pairs),
            batch_rng(0, 1, 0),
        )
        assert step is None
        for name, tensor in model.named_parameters():
            np.testing.assert_array_equal(tensor.data, before[name])

    def test_skipped_batches_leave_the_epoch_mean(self, micro_corpus, make_settings, monkeypatch):
        settings = make_settings(
            train__lr="0", train__epochs="1", train__batch_size="2", encoder__use_ret="false", relation__dropout="0"
        )
        original = Trainer.step
        totals = []

        def recording(self, sketches, photos, rng):
            losses = original(self, sketches, photos, rng)
            totals.append(losses.total)
            return losses

        monkeypatch.setattr(Trainer, "step", recording)
        train(micro_corpus, settings)
        assert len(totals) == 2

        calls = []

        def skip_first(self, sketches, photos, rng):
            calls.append(len(calls))
            return None if len(calls) == 1 else original(self, sketches, photos, rng)

        monkeypatch.setattr(Trainer, "step", skip_first)
        trace = train(micro_corpus, settings).trace
        assert trace[0].total == pytest.approx(totals[1], abs=1e-12)

    def test_epoch_with_every_batch_skipped_records_nan(self, micro_corpus, make_settings, monkeypatch):
        monkeypatch.setattr(Trainer, "step", lambda self, sketches, photos, rng: None)
        trace = train(micro_corpus, make_settings(train__epochs="1")).trace
        assert np.isnan(trace[0].total)


def test_end_to_end_gradients_match_finite_differences(micro_corpus, make_settings):
    settings = make_settings(relation__dropout="0")
    model = build_model(settings)
    model.train()
    trainer = Trainer(model, settings)
    pairs = micro_corpus.pairs("train")
    by_category = {}
    for sketch, photo in pairs:
        by_category.setdefault(sketch.category_id, (sketch, photo))
    chosen = list(by_category.values())[:2]
    sketches = micro_corpus.load_many(s for s, _ in chosen)
    photos = micro_corpus.load_many(p for _, p in chosen)

    def loss():
        triplet, relation = trainer.batch_loss(sketches, photos, np.random.default_rng(0))
        return total_loss(triplet, relation)

    probes = [
        model.tokenizer.patch_embed.weight,
        model.tokenizer.convs[0].weight,
        model.encoder.ret,
        model.encoder.blocks[0].attn.query.weight,
        model.encoder.blocks[1].mlp.fc1.weight,
        model.cross.block.attn.value.weight,
        model.relation.hidden.weight,
        model.relation.head.bias,
    ]
    entries = {i: range(min(4, probe.size)) for i, probe in enumerate(probes)}
    assert gradcheck(loss, probes, entries=entries) < 1e-5


@pytest.mark.slow
def test_learning_check(tmp_path):
    """Desk-scale run: both rank modes clear three times the random-ranking mAP on unseen categories."""

    settings = Settings().validate()
    corpus = generate_corpus(tmp_path / "corpus", 12, 10, 64, seed=settings.seed)
    result = train(corpus, settings)
    assert result.trace[-1].total < result.trace[0].total
    for mode in ("ret", "rn"):
        report = evaluate(result.model, corpus, settings, mode).report
        assert report.map >= 3.0 * report.random_map, report.summary()
