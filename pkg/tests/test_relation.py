import numpy as np
import pytest

from sketch_retrieval.autodiff import Tensor, backward, constant, no_grad, parameter
from sketch_retrieval.autodiff import tensor as ops
from sketch_retrieval.autodiff.gradcheck import gradcheck
from sketch_retrieval.config import RelationConfig
from sketch_retrieval.model import KernelMatrix, PairConcatKernel, RelationNetwork, TokenSequence, cosine_kernel
from sketch_retrieval.model.relation import read_kernel_matrix, write_kernel_matrix
from sketch_retrieval.training.losses import relation_loss


def _seq(tokens, n_patches=None, origin=None):
    if not isinstance(tokens, Tensor):
        tokens = constant(np.asarray(tokens, dtype=float))
    count = tokens.shape[0]
    n = n_patches or count
    return TokenSequence(tokens, np.arange(count) if origin is None else origin, n, (1, n))


class TestCosineKernel:
    def test_identical_tokens_give_unit_diagonal(self, rng):
        tokens = rng.normal(size=(5, 6))
        kernel = cosine_kernel(_seq(tokens), _seq(tokens))
        np.testing.assert_allclose(np.diag(kernel.array), 1.0, atol=1e-12)

    def test_orthogonal_tokens(self):
        kernel = cosine_kernel(_seq([[1.0, 0.0]]), _seq([[0.0, 1.0]]))
        assert kernel.array[0, 0] == 0.0

    def test_entries_bounded(self, rng):
        kernel = cosine_kernel(_seq(rng.normal(size=(7, 4))), _seq(rng.normal(size=(7, 4))))
        assert np.all(np.abs(kernel.array) <= 1.0)

    def test_positive_rescaling_is_invisible(self, rng):
        sketch, photo = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
        scaled = sketch * rng.uniform(0.1, 10.0, size=(4, 1))
        np.testing.assert_allclose(
            cosine_kernel(_seq(scaled), _seq(photo)).array,
            cosine_kernel(_seq(sketch), _seq(photo)).array,
            atol=1e-9,
        )

    def test_zero_norm_token_gives_zero_entries(self, rng):
        sketch = rng.normal(size=(3, 4))
        sketch[1] = 0.0
        kernel = cosine_kernel(_seq(sketch), _seq(rng.normal(size=(3, 4))))
        np.testing.assert_array_equal(kernel.array[1], 0.0)

    def test_dead_rows_and_columns_are_zero(self, rng):
        sketch = _seq(rng.normal(size=(2, 4)), n_patches=4, origin=np.array([0, 2]))
        photo = _seq(rng.normal(size=(3, 4)), n_patches=4, origin=np.array([1, 2, 3]))
        kernel = cosine_kernel(sketch, photo)
        assert kernel.n == 4
        np.testing.assert_array_equal(kernel.row_alive, [True, False, True, False])
        np.testing.assert_array_equal(kernel.array[[1, 3]], 0.0)
        np.testing.assert_array_equal(kernel.array[:, 0], 0.0)
        assert np.all(kernel.array[np.ix_([0, 2], [1, 2, 3])] != 0.0)

    def test_patch_count_mismatch(self, rng):
        with pytest.raises(ValueError, match="patches"):
            cosine_kernel(_seq(rng.normal(size=(2, 4))), _seq(rng.normal(size=(3, 4))))


class TestPairConcatKernel:
    def test_entry_is_mlp_of_the_concatenated_pair(self, rng):
        kernel_fn = PairConcatKernel(4, rng)
        sketch, photo = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
        kernel = kernel_fn(_seq(sketch), _seq(photo))
        w1 = np.concatenate([kernel_fn.sketch_weight.data, kernel_fn.photo_weight.data], axis=0)
        expected = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                hidden = np.maximum(np.concatenate([sketch[i], photo[j]]) @ w1 + kernel_fn.hidden_bias.data, 0.0)
                expected[i, j] = (hidden @ kernel_fn.head.weight.data + kernel_fn.head.bias.data)[0]
        np.testing.assert_allclose(kernel.array, expected, atol=1e-12)
        assert kernel_fn.parameter_count() == 2 * 4 * 4 + 2 * 4 + 1

    @pytest.mark.parametrize("seed", range(5))
    def test_pair_score_is_not_row_plus_column(self, seed):
        rng = np.random.default_rng(seed)
        kernel_fn = PairConcatKernel(8, rng)
        kernel_fn.hidden_bias.data = rng.normal(size=8)
        values = kernel_fn(_seq(rng.normal(size=(2, 8))), _seq(rng.normal(size=(2, 8)))).array
        interaction = values[0, 0] + values[1, 1] - values[0, 1] - values[1, 0]
        assert abs(interaction) > 1e-9

    def test_gradient_reaches_both_token_sets(self, rng):
        kernel_fn = PairConcatKernel(3, rng)
        kernel_fn.hidden_bias.data = np.full(3, 0.3)
        sketch, photo = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(2, 3)))
        fn = lambda: ops.mean_square(kernel_fn(_seq(sketch), _seq(photo)).values)
        assert gradcheck(fn, [sketch, photo]) < 1e-5


class TestRelationNetwork:
    @pytest.fixture
    def relation(self, rng):
        return RelationNetwork(4, RelationConfig(hidden_multiplier=4, dropout=0.5), rng).eval()

    def _kernel(self, values):
        n = values.shape[0]
        alive = np.ones(n, dtype=bool)
        return KernelMatrix(constant(values), alive, alive)

    def test_zero_head_gives_half(self, relation, rng):
        relation.head.weight.data = np.zeros_like(relation.head.weight.data)
        relation.head.bias.data = np.zeros_like(relation.head.bias.data)
        score = relation.relation_score(self._kernel(rng.uniform(-1, 1, size=(4, 4))))
        assert score.item() == 0.5

    def test_scores_strictly_inside_unit_interval(self, relation, rng):
        kernels = [self._kernel(rng.uniform(-1, 1, size=(4, 4))) for _ in range(6)]
        scores = relation.scores(kernels).data
        assert scores.shape == (6, 1)
        assert np.all((scores > 0.0) & (scores < 1.0))

    def test_layout_mismatch(self, relation, rng):
        with pytest.raises(ValueError, match="does not match"):
            relation.relation_score(self._kernel(rng.uniform(size=(3, 3))))

    def test_eval_mode_is_deterministic(self, relation, rng):
        kernel = self._kernel(rng.uniform(-1, 1, size=(4, 4)))
        first = relation.relation_score(kernel).item()
        assert relation.relation_score(kernel, np.random.default_rng(7)).item() == first

    def test_training_mode_needs_generator(self, relation, rng):
        relation.train()
        with pytest.raises(ValueError, match="random generator"):
            relation.relation_score(self._kernel(rng.uniform(size=(4, 4))))

    def test_batched_scores_match_single(self, relation, rng):
        kernels = [self._kernel(rng.uniform(-1, 1, size=(4, 4))) for _ in range(3)]
        with no_grad():
            batched = relation.scores(kernels).data.reshape(-1)
            single = [relation.relation_score(k).item() for k in kernels]
        np.testing.assert_allclose(batched, single, atol=1e-12)

    def test_parameter_shapes(self, relation):
        assert relation.hidden.weight.shape == (16, 16)
        assert relation.head.weight.shape == (16, 1)


class TestRelationInvariants:
    @pytest.fixture
    def relation(self, rng):
        return RelationNetwork(2, RelationConfig(hidden_multiplier=4, dropout=0.5), rng).eval()

    def test_masked_entries_never_change_the_score(self, rng):
        relation = RelationNetwork(4, RelationConfig(hidden_multiplier=4, dropout=0.5), rng).eval()
        row_alive = np.array([True, False, True, True])
        col_alive = np.array([True, True, False, True])
        values = rng.uniform(-1, 1, size=(4, 4))
        first = relation.relation_score(KernelMatrix(constant(values), row_alive, col_alive)).item()
        changed = values.copy()
        changed[1, :] = rng.uniform(-1, 1, size=4)
        changed[:, 2] = 5.0
        second = relation.relation_score(KernelMatrix(constant(changed), row_alive, col_alive)).item()
        assert first == second
        changed[0, 0] += 0.5
        assert relation.relation_score(KernelMatrix(constant(changed), row_alive, col_alive)).item() != first

    @pytest.mark.parametrize("seed", range(10))
    def test_relation_loss_within_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        relation = RelationNetwork(4, RelationConfig(hidden_multiplier=4, dropout=0.5), rng).eval()
        alive = np.ones(4, dtype=bool)
        kernels = [KernelMatrix(constant(rng.uniform(-1, 1, size=(4, 4))), alive, alive) for _ in range(6)]
        with no_grad():
            loss = relation_loss(relation.scores(kernels), rng.random(6) < 0.5).item()
        assert 0.0 <= loss <= 1.0

    def test_relation_loss_extremes(self):
        assert relation_loss(constant(np.array([[1.0], [0.0]])), [1, 0]).item() == 0.0
        assert relation_loss(constant(np.array([[0.0], [1.0]])), [1, 0]).item() == 1.0

    def test_two_token_loss_gradient_reaches_both_token_sets(self, rng, relation):
        sketch, photo = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(2, 3)))

        def fn():
            return relation_loss(relation.scores([cosine_kernel(_seq(sketch), _seq(photo))]), [1])

        assert gradcheck(fn, [sketch, photo]) < 1e-5
        backward(fn())
        assert np.any(sketch.grad != 0.0)
        assert np.any(photo.grad != 0.0)


def test_kernel_file_keeps_values(rng, tmp_path):
    values = rng.uniform(-1, 1, size=(3, 3))
    alive = np.ones(3, dtype=bool)
    path = write_kernel_matrix(tmp_path / "kernel.tsv", KernelMatrix(constant(values), alive, alive))
    np.testing.assert_allclose(read_kernel_matrix(path), values, atol=1e-9)
