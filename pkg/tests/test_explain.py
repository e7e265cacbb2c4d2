import logging

import numpy as np
import pytest

from sketch_retrieval.autodiff import constant
from sketch_retrieval.config import RelationConfig
from sketch_retrieval.data import ImageSample, read_image
from sketch_retrieval.explain import (
    correspondences,
    leave_one_out,
    most_influential_pair,
    pair_kernel,
    patch_replace_synthesis,
    read_provenance,
    replay_provenance,
    self_attention_map,
    write_attention_map,
    write_correspondences,
    write_provenance,
)
from sketch_retrieval.explain.attention_map import min_max
from sketch_retrieval.explain.influence import ablate
from sketch_retrieval.model import KernelMatrix, RelationNetwork, build_model
from sketch_retrieval.model.network import load_model
from sketch_retrieval.model.tokenizer import patchify


@pytest.fixture(scope="module")
def model(trained):
    return load_model(trained[0].checkpoint)


@pytest.fixture
def test_pair(micro_corpus):
    sketch, photo = micro_corpus.pairs("test")[0]
    return micro_corpus.load(sketch), micro_corpus.load(photo)


def _kernel(values, row_alive=None, col_alive=None):
    n = values.shape[0]
    row_alive = np.ones(n, dtype=bool) if row_alive is None else np.asarray(row_alive)
    col_alive = np.ones(n, dtype=bool) if col_alive is None else np.asarray(col_alive)
    return KernelMatrix(constant(values), row_alive, col_alive)


class TestAttentionMap:
    def test_map_covers_patch_lattice(self, model, test_pair):
        amap = self_attention_map(model, test_pair[0])
        assert amap.raw.shape == (2, 2)
        assert amap.layer == 2
        assert amap.normalized.min() == 0.0
        assert amap.normalized.max() == 1.0
        assert amap.alive.dtype == bool

    def test_single_head_and_layer(self, model, test_pair):
        amap = self_attention_map(model, test_pair[1], layer=1, head=1)
        assert amap.layer == 1 and amap.head == 1
        assert np.all((amap.normalized >= 0.0) & (amap.normalized <= 1.0))

    def test_flat_logits_give_zero_map(self):
        np.testing.assert_array_equal(min_max(np.full((2, 2), 0.3)), 0.0)

    @pytest.mark.parametrize("kwargs", [{"layer": 0}, {"layer": 3}, {"head": 2}])
    def test_out_of_range(self, model, test_pair, kwargs):
        with pytest.raises(ValueError, match="outside"):
            self_attention_map(model, test_pair[0], **kwargs)

    def test_needs_retrieval_token(self, make_settings, test_pair):
        model = build_model(make_settings(encoder__use_ret="false"))
        with pytest.raises(ValueError, match="no retrieval token"):
            self_attention_map(model, test_pair[0])

    def test_written_images(self, model, test_pair, tmp_path):
        amap = self_attention_map(model, test_pair[0])
        heat, alive = write_attention_map(tmp_path / "map.pgm", amap, 16)
        assert alive.name == "map.alive.pgm"
        assert read_image(heat, channels=1).shape == (32, 32, 1)
        assert read_image(alive, channels=1).shape == (32, 32, 1)


class TestCorrespondences:
    def test_best_column_per_row(self, rng):
        values = rng.uniform(-1, 1, size=(4, 4))
        result = correspondences(_kernel(values), top_k=1)
        for i in range(4):
            assert result.best(i) == int(np.argmax(values[i]))

    def test_identity_kernel_maps_patches_onto_themselves(self):
        result = correspondences(_kernel(np.eye(4)), top_k=1)
        assert [result.best(i) for i in range(4)] == [0, 1, 2, 3]

    def test_top_k_matches_sort_oracle_with_ties(self):
        values = np.array([[0.2, 0.5, 0.5, 0.1], [0.0, 0.0, 0.0, 0.0], [0.9, -0.1, 0.3, 0.9], [0.1, 0.2, 0.3, 0.4]])
        result = correspondences(_kernel(values), top_k=3, source_id="photo.ppm")
        assert [j for j, _ in result.matches[0]] == [1, 2, 0]
        assert [j for j, _ in result.matches[1]] == [0, 1, 2]
        assert [j for j, _ in result.matches[2]] == [0, 3, 2]
        assert [v for _, v in result.matches[3]] == [0.4, 0.3, 0.2]

    def test_dead_tokens_are_skipped(self, rng):
        values = rng.uniform(-1, 1, size=(4, 4))
        kernel = _kernel(values, row_alive=[True, False, True, True], col_alive=[False, True, True, True])
        result = correspondences(kernel, top_k=5)
        assert sorted(result.matches) == [0, 2, 3]
        assert all(0 not in [j for j, _ in m] for m in result.matches.values())

    def test_large_k_truncates_with_warning(self, rng, caplog):
        with caplog.at_level(logging.WARNING, logger="sketch-retrieval.explain"):
            result = correspondences(_kernel(rng.uniform(size=(4, 4))), top_k=9)
        assert all(len(m) == 4 for m in result.matches.values())
        assert "truncating" in caplog.text

    def test_top_k_below_one(self, rng):
        with pytest.raises(ValueError, match="top_k"):
            correspondences(_kernel(rng.uniform(size=(2, 2))), top_k=0)

    def test_trained_pair_and_file(self, model, test_pair, tmp_path):
        kernel = pair_kernel(model, *test_pair)
        assert kernel.n == 4
        result = correspondences(kernel, top_k=2, source_id=test_pair[1].sample_id)
        lines = write_correspondences(tmp_path / "corr.tsv", result).read_text(encoding="utf-8").splitlines()
        assert lines[0] == "# sketch-retrieval correspondences v1"
        assert len(lines) == 2 + 4 * 2


class TestSynthesis:
    def test_self_match_rebuilds_the_image(self, model, test_pair):
        sketch = test_pair[0]
        as_photo = ImageSample(sketch.pixels, "photo", sketch.category_id, sketch.instance_id, "self")
        result = patch_replace_synthesis(model, sketch, [as_photo])
        assert [(p.sketch_patch, p.photo_patch) for p in result.provenance] == [(i, i) for i in range(4)]
        np.testing.assert_array_equal(result.pixels, sketch.pixels)

    def test_patches_come_from_the_top_ranked_photo(self, model, micro_corpus, test_pair):
        gallery = micro_corpus.load_many(micro_corpus.select(modality="photo"))
        result = patch_replace_synthesis(model, test_pair[0], gallery, "retrieved")
        sources = {p.photo_id for p in result.provenance}
        assert len(sources) == 1
        source = next(g for g in gallery if g.sample_id in sources)
        photo_patches = patchify(source.pixels, 16)
        for p, patch in zip(result.provenance, patchify(result.pixels, 16)):
            np.testing.assert_array_equal(patch, photo_patches[p.photo_patch])

    def test_single_photo_gallery_mode_equals_retrieved(self, model, test_pair):
        retrieved = patch_replace_synthesis(model, test_pair[0], [test_pair[1]], "retrieved")
        gallery = patch_replace_synthesis(model, test_pair[0], [test_pair[1]], "gallery", k=1)
        assert retrieved.provenance == gallery.provenance
        np.testing.assert_array_equal(retrieved.pixels, gallery.pixels)

    def test_gallery_mode_averages_k_sources(self, model, micro_corpus, test_pair):
        gallery = micro_corpus.load_many(micro_corpus.select(modality="photo"))
        result = patch_replace_synthesis(model, test_pair[0], gallery, "gallery", k=3)
        assert len(result.provenance) == 4 * 3
        sources = {g.sample_id: g for g in gallery}
        expected = np.mean(
            [patchify(sources[p.photo_id].pixels, 16)[p.photo_patch] for p in result.provenance[:3]], axis=0
        )
        np.testing.assert_allclose(patchify(result.pixels, 16)[0], expected, atol=1e-12)

    def test_provenance_replays_exactly(self, model, micro_corpus, test_pair, tmp_path):
        gallery = micro_corpus.load_many(micro_corpus.select(modality="photo"))
        result = patch_replace_synthesis(model, test_pair[0], gallery, "gallery", k=2)
        path = write_provenance(tmp_path / "synth.provenance.tsv", result)
        provenance = read_provenance(path)
        assert provenance == result.provenance
        replayed = replay_provenance(test_pair[0], {g.sample_id: g for g in gallery}, provenance, 16)
        np.testing.assert_array_equal(replayed, result.pixels)

    @pytest.mark.parametrize(
        "kwargs,message",
        [({"mode": "nearest"}, "mode"), ({"k": 0}, "k must be"), ({"gallery": []}, "empty")],
    )
    def test_invalid_arguments(self, model, test_pair, kwargs, message):
        args = {"gallery": [test_pair[1]], "mode": "gallery", "k": 1}
        args.update(kwargs)
        with pytest.raises(ValueError, match=message):
            patch_replace_synthesis(model, test_pair[0], **args)


class TestInfluence:
    @pytest.fixture
    def relation(self, rng):
        return RelationNetwork(4, RelationConfig(hidden_multiplier=2, dropout=0.5), rng).eval()

    def test_constant_head_picks_first_pair(self, relation, rng):
        relation.head.weight.data = np.zeros_like(relation.head.weight.data)
        relation.head.bias.data = np.zeros_like(relation.head.bias.data)
        result = leave_one_out(relation, _kernel(rng.uniform(-1, 1, size=(4, 4))))
        assert (result.sketch_patch, result.photo_patch, result.drop) == (0, 0, 0.0)
        assert result.base_score == 0.5

    @pytest.mark.parametrize("granularity", ["entry", "token"])
    def test_matches_brute_force(self, relation, granularity):
        values = np.random.default_rng(11).uniform(-1, 1, size=(4, 4))
        kernel = _kernel(values)
        base = relation.relation_score(kernel).item()
        drops = {
            (i, j): base - relation.relation_score(_kernel(ablate(values, i, j, granularity))).item()
            for i in range(4)
            for j in range(4)
        }
        best = max(drops.values())
        expected = min(pair for pair, drop in drops.items() if drop == best)
        result = leave_one_out(relation, kernel, granularity)
        assert (result.sketch_patch, result.photo_patch) == expected
        assert result.drop == pytest.approx(best, abs=1e-12)
        assert result.granularity == granularity

    def test_token_ablation_clears_row_and_column(self):
        out = ablate(np.ones((3, 3)), 1, 2, "token")
        np.testing.assert_array_equal(out, [[1, 1, 0], [0, 0, 0], [1, 1, 0]])

    def test_dead_pairs_are_never_reported(self, relation, rng):
        kernel = _kernel(rng.uniform(-1, 1, size=(4, 4)), row_alive=[False, True, True, True])
        assert leave_one_out(relation, kernel).sketch_patch != 0

    def test_unknown_granularity(self, relation, rng):
        with pytest.raises(ValueError, match="granularity"):
            leave_one_out(relation, _kernel(rng.uniform(size=(4, 4))), "patch")

    def test_restores_training_mode(self, relation, rng):
        relation.train()
        leave_one_out(relation, _kernel(rng.uniform(size=(4, 4))))
        assert relation.training

    def test_trained_pair(self, model, test_pair):
        result = most_influential_pair(model, *test_pair)
        assert 0 <= result.sketch_patch < 4 and 0 <= result.photo_patch < 4
        assert 0.0 < result.base_score < 1.0
