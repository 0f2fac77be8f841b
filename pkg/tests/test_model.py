import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from halattn.corpus import EncodedDocument
from halattn.linalg import EmbeddingTable
from halattn.model import (
    AdamState,
    AttentionParams,
    ClassifierParams,
    DivergenceError,
    Gradients,
    ModelError,
    ModelParams,
    adam_step,
    attention_pool,
    attention_scores,
    attention_weights,
    classifier_forward,
    init_params,
    loss_and_grad,
    mean_pool,
    pool_sequence,
)


class Cfg:
    embed_dim = 4
    attn_dim = 3
    hidden = 5
    temperature = 2.0
    dropout_p = 0.0
    seed = 0


def random_attention(rng, k=4, d_a=3, temperature=2.0):
    return AttentionParams(
        w_a=rng.standard_normal((d_a, k)),
        b_a=rng.standard_normal(d_a),
        v_a=rng.standard_normal(d_a),
        temperature=temperature,
    )


def make_doc(ids, seq_len, label=0):
    arr = np.zeros(seq_len, dtype=np.int32)
    arr[: len(ids)] = ids
    return EncodedDocument(
        ids=arr,
        mask=np.arange(seq_len) < len(ids),
        label=label,
        real_length=len(ids),
    )


def loop_scores(x, mask, params):
    """Per-token oracle for the additive scoring network."""
    out = np.full(x.shape[0], -np.inf)
    for t in range(x.shape[0]):
        if mask[t]:
            out[t] = params.v_a @ np.tanh(params.w_a @ x[t] + params.b_a)
    return out


class TestAttentionScores:
    def test_zero_projection(self, rng):
        params = random_attention(rng)
        params.v_a = np.zeros(3)
        x = rng.standard_normal((5, 4))
        mask = np.array([True] * 4 + [False])
        e = attention_scores(x, mask, params)
        assert np.all(e[:4] == 0.0)
        assert e[4] == -np.inf

    def test_scalar_closed_form(self):
        params = AttentionParams(
            w_a=np.array([[1.0]]), b_a=np.zeros(1), v_a=np.ones(1), temperature=1.0
        )
        e = attention_scores(np.array([[0.5]]), np.array([True]), params)
        assert e[0] == pytest.approx(np.tanh(0.5), abs=1e-12)
        assert e[0] == pytest.approx(0.462117, abs=1e-6)

    def test_matches_loop_oracle(self, rng):
        params = random_attention(rng)
        x = rng.standard_normal((4, 4))
        mask = np.array([True, False, True, True])
        np.testing.assert_allclose(
            attention_scores(x, mask, params), loop_scores(x, mask, params), atol=1e-12
        )


class TestAttentionWeights:
    def test_symmetry(self):
        alphas = attention_weights(np.zeros(2), np.ones(2, bool), 2.0)
        assert alphas.tolist() == [0.5, 0.5]

    def test_closed_form_two_to_one(self):
        e = np.array([2.0 * np.log(2.0), 0.0])
        alphas = attention_weights(e, np.ones(2, bool), 2.0)
        np.testing.assert_allclose(alphas, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)

    def test_masked_hand_softmax(self):
        e = np.array([5.0, 1.0, 3.0])
        mask = np.array([True, False, True])
        alphas = attention_weights(e, mask, 1.0)
        denom = np.exp(5.0) + np.exp(3.0)
        np.testing.assert_allclose(
            alphas, [np.exp(5.0) / denom, 0.0, np.exp(3.0) / denom], atol=1e-12
        )
        np.testing.assert_allclose(alphas, [0.8808, 0.0, 0.1192], atol=1e-4)
        assert alphas[1] == 0.0

    def test_all_masked_rejected(self):
        with pytest.raises(ModelError):
            attention_weights(np.zeros(3), np.zeros(3, bool), 1.0)

    def test_invalid_temperature(self):
        with pytest.raises(ModelError):
            attention_weights(np.zeros(2), np.ones(2, bool), 0.0)

    @given(
        st.lists(st.floats(-30, 30), min_size=1, max_size=12),
        st.integers(0, 2**30),
        st.sampled_from([0.5, 1.0, 2.0, 10.0]),
    )
    @settings(max_examples=150)
    def test_normalization_properties(self, scores, mask_bits, tau):
        e = np.array(scores)
        mask = np.array([(mask_bits >> i) & 1 == 1 for i in range(len(scores))])
        if not mask.any():
            mask[0] = True
        alphas = attention_weights(e, mask, tau)
        assert abs(alphas.sum() - 1.0) < 1e-6
        assert np.all(alphas[~mask] == 0.0)
        assert np.all((alphas >= 0.0) & (alphas <= 1.0))

    @given(
        st.lists(st.integers(-2048, 2048), min_size=2, max_size=10),
        st.integers(-2048, 2048),
    )
    @settings(max_examples=150)
    def test_shift_invariance_bitwise_on_exact_floats(self, score_units, shift_units):
        # dyadic grid (multiples of 1/64) keeps the additions exact, so
        # max-subtraction yields bitwise identical weights
        e = np.array(score_units, dtype=np.float64) / 64.0
        shift = shift_units / 64.0
        mask = np.ones(len(score_units), bool)
        mask[0] = True
        base = attention_weights(e, mask, 2.0)
        shifted = attention_weights(e + shift, mask, 2.0)
        assert np.array_equal(base, shifted)

    def test_argmax_temperature_invariant(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 12))
            e = rng.standard_normal(n) * 5
            mask = rng.random(n) < 0.7
            if not mask.any():
                mask[0] = True
            argmaxes = {
                int(np.argmax(attention_weights(e, mask, tau)))
                for tau in (0.5, 1.0, 2.0, 10.0)
            }
            assert len(argmaxes) == 1


class TestPooling:
    def test_one_hot_selects(self, rng):
        x = rng.standard_normal((5, 3))
        alphas = np.zeros(5)
        alphas[2] = 1.0
        assert np.array_equal(attention_pool(x, alphas), x[2])

    def test_uniform_reduces_to_mean(self, rng):
        x = rng.standard_normal((4, 3))
        mask = np.array([True, True, True, False])
        alphas = mask / 3.0
        np.testing.assert_allclose(
            attention_pool(x, alphas), x[:3].mean(axis=0), atol=1e-12
        )

    def test_matches_loop_oracle(self, rng):
        x = rng.standard_normal((6, 4))
        alphas = rng.random(6)
        alphas /= alphas.sum()
        expected = sum(alphas[t] * x[t] for t in range(6))
        np.testing.assert_allclose(attention_pool(x, alphas), expected, atol=1e-12)

    def test_mean_single_token(self, rng):
        x = rng.standard_normal((4, 3))
        mask = np.array([True, False, False, False])
        assert np.array_equal(mean_pool(x, mask), x[0])

    def test_mean_two_basis_tokens(self):
        x = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(mean_pool(x, np.ones(2, bool)), [0.5, 0.5])

    def test_mean_ignores_padding(self, rng):
        x = rng.standard_normal((6, 4))
        mask = np.array([True, True, True, False, False, False])
        oracle = sum(x[t] for t in range(6) if mask[t]) / 3
        np.testing.assert_allclose(mean_pool(x, mask), oracle, atol=1e-12)
        x2 = x.copy()
        x2[3:] = 1e6  # pad rows must not matter
        np.testing.assert_allclose(mean_pool(x2, mask), mean_pool(x, mask), atol=0)

    def test_mean_empty_mask_rejected(self, rng):
        with pytest.raises(ModelError):
            mean_pool(rng.standard_normal((3, 2)), np.zeros(3, bool))

    def test_pool_sequence_weights_sum_to_one(self, rng):
        params = random_attention(rng)
        x = rng.standard_normal((6, 4))
        mask = np.array([True, True, False, True, False, False])
        for pooling in ("mean", "attention"):
            result = pool_sequence(x, mask, params, pooling)
            assert abs(result.alphas.sum() - 1.0) < 1e-6
            assert np.all(result.alphas[~mask] == 0.0)

    def test_temperature_limit_equals_mean(self, rng):
        for _ in range(20):
            params = AttentionParams(
                w_a=rng.uniform(-0.5, 0.5, (3, 4)),
                b_a=rng.uniform(-0.5, 0.5, 3),
                v_a=rng.uniform(-0.05, 0.05, 3),
                temperature=1e6,
            )
            m = int(rng.integers(1, 7))
            mask = np.arange(6) < m
            x = rng.uniform(-1, 1, (6, 4))
            s_attn = pool_sequence(x, mask, params, "attention").pooled
            assert np.abs(s_attn - mean_pool(x, mask)).max() < 1e-6

    def test_zero_init_equals_mean_exactly(self, rng):
        for _ in range(20):
            params = random_attention(rng)
            params.v_a = np.zeros(3)
            m = int(rng.integers(1, 7))
            mask = np.arange(6) < m
            x = rng.standard_normal((6, 4))
            s_attn = pool_sequence(x, mask, params, "attention").pooled
            assert np.array_equal(s_attn, mean_pool(x, mask))


class TestClassifierForward:
    def _params(self, h=4, k=3, dropout_p=0.0):
        return ClassifierParams(
            w_c=np.zeros((h, k)),
            b_c=np.zeros(h),
            ln_gain=np.ones(h),
            ln_shift=np.zeros(h),
            w_o=np.zeros((2, h)),
            b_o=np.zeros(2),
            dropout_p=dropout_p,
        )

    def test_zero_output_weights_give_bias(self, rng):
        params = self._params()
        params.w_c = rng.standard_normal((4, 3))
        params.b_o = np.array([0.3, -0.7])
        logits, _ = classifier_forward(rng.standard_normal(3), params, mode="eval")
        np.testing.assert_allclose(logits, [0.3, -0.7], atol=0)

    def test_eval_deterministic(self, rng):
        params = self._params(dropout_p=0.5)
        params.w_c = rng.standard_normal((4, 3))
        params.w_o = rng.standard_normal((2, 4))
        s = rng.standard_normal(3)
        first, _ = classifier_forward(s, params, mode="eval")
        second, _ = classifier_forward(s, params, mode="eval")
        assert np.array_equal(first, second)

    def test_two_point_layer_norm(self):
        params = ClassifierParams(
            w_c=np.eye(2),
            b_c=np.zeros(2),
            ln_gain=np.ones(2),
            ln_shift=np.zeros(2),
            w_o=np.eye(2),
            b_o=np.zeros(2),
            dropout_p=0.0,
        )
        # z = [1, 3]: mean 2, population variance 1 -> normalized [-1, 1]
        logits, cache = classifier_forward(np.array([1.0, 3.0]), params, mode="eval")
        np.testing.assert_allclose(cache["xhat"][0], [-1.0, 1.0], atol=1e-4)
        np.testing.assert_allclose(logits, [0.0, 1.0], atol=1e-4)  # after ReLU

    def test_train_mode_needs_noise(self, rng):
        params = self._params(dropout_p=0.5)
        with pytest.raises(ModelError):
            classifier_forward(rng.standard_normal(3), params, mode="train")

    def test_dropout_expectation_matches_eval(self, rng):
        h, k = 5, 3
        params = ClassifierParams(
            w_c=rng.standard_normal((h, k)),
            b_c=rng.standard_normal(h),
            ln_gain=np.ones(h),
            ln_shift=0.3 * rng.standard_normal(h),
            w_o=np.zeros((2, h)),
            b_o=np.zeros(2),
            dropout_p=0.6,
        )
        s = rng.standard_normal(k)
        _, eval_cache = classifier_forward(s, params, mode="eval")
        eval_hidden = eval_cache["hidden"][0]
        from halattn.model import _classifier_forward

        n = 100_000
        tiled = np.tile(s, (n, 1))
        _, cache = _classifier_forward(tiled, params, True, np.random.default_rng(9))
        sampled = cache["hidden"].mean(axis=0)
        active = eval_hidden > 1e-3
        assert active.any()
        np.testing.assert_allclose(sampled[active], eval_hidden[active], rtol=0.02)
        np.testing.assert_allclose(sampled[~active], eval_hidden[~active], atol=1e-12)


class TestLossAndGrad:
    def _table(self, rng, vocab=8, k=4):
        return EmbeddingTable(vectors=rng.standard_normal((vocab, k)).astype(np.float32))

    def _batch(self, rng, n=3, seq_len=6, vocab=8):
        docs = []
        for _ in range(n):
            m = int(rng.integers(1, seq_len + 1))
            docs.append(
                make_doc(rng.integers(0, vocab, m), seq_len, label=int(rng.integers(0, 2)))
            )
        return docs

    def _zero_params(self, k=4, d_a=3, h=5):
        return ModelParams(
            attention=AttentionParams(
                w_a=np.zeros((d_a, k)), b_a=np.zeros(d_a), v_a=np.zeros(d_a), temperature=2.0
            ),
            classifier=ClassifierParams(
                w_c=np.zeros((h, k)), b_c=np.zeros(h), ln_gain=np.ones(h),
                ln_shift=np.zeros(h), w_o=np.zeros((2, h)), b_o=np.zeros(2), dropout_p=0.0,
            ),
        )

    def test_uniform_logits_loss_is_ln2(self, rng):
        batch = self._batch(rng)
        loss, _, acc = loss_and_grad(
            batch, self._table(rng), self._zero_params(), "attention", 0.0, None
        )
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)
        labels = np.array([d.label for d in batch])
        assert acc == pytest.approx((labels == 0).mean())  # argmax ties pick class 0

    def test_zero_weights_kill_attention_gradient(self, rng):
        batch = self._batch(rng)
        _, grads, _ = loss_and_grad(
            batch, self._table(rng), self._zero_params(), "attention", 0.0, None
        )
        assert np.all(grads.v_a == 0.0)
        assert np.all(grads.w_a == 0.0)
        assert np.all(grads.b_a == 0.0)

    def test_l2_term_added_to_loss(self, rng):
        params = init_params(Cfg, seed=1)
        params.classifier.dropout_p = 0.0
        batch = self._batch(rng)
        table = self._table(rng)
        base, _, _ = loss_and_grad(batch, table, params, "attention", 0.0, None)
        lam = 0.01
        decayed, _, _ = loss_and_grad(batch, table, params, "attention", lam, None)
        expected = lam * sum(
            float((w * w).sum())
            for w in (params.attention.w_a, params.attention.v_a,
                      params.classifier.w_c, params.classifier.w_o)
        )
        assert decayed - base == pytest.approx(expected, rel=1e-12)

    def test_mean_pooling_excludes_attention_from_l2(self, rng):
        params = init_params(Cfg, seed=1)
        params.classifier.dropout_p = 0.0
        batch = self._batch(rng)
        table = self._table(rng)
        lam = 0.01
        loss, grads, _ = loss_and_grad(batch, table, params, "mean", lam, None)
        expected = lam * sum(
            float((w * w).sum()) for w in (params.classifier.w_c, params.classifier.w_o)
        )
        base, _, _ = loss_and_grad(batch, table, params, "mean", 0.0, None)
        assert loss - base == pytest.approx(expected, rel=1e-12)
        assert np.all(grads.w_a == 0.0) and np.all(grads.v_a == 0.0)

    def test_non_finite_loss_raises(self, rng):
        params = self._zero_params()
        params.classifier.b_o = np.array([np.inf, 0.0])
        with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
            loss_and_grad(self._batch(rng), self._table(rng), params, "mean", 0.0, None)

    def test_embeddings_receive_no_gradient(self, rng):
        # the embedding table is immutable through a training step
        table = self._table(rng)
        before = table.vectors.copy()
        params = init_params(Cfg, seed=3)
        state = AdamState.for_params(params)
        _, grads, _ = loss_and_grad(
            self._batch(rng), table, params, "attention", 1e-4, np.random.default_rng(1)
        )
        adam_step(params, grads, state, 1e-3)
        assert np.array_equal(table.vectors, before)


class TestAdam:
    def test_zero_gradient_is_identity(self):
        params = init_params(Cfg, seed=0)
        snapshot = {name: arr.copy() for name, arr in params.tensors().items()}
        state = AdamState.for_params(params)
        adam_step(params, Gradients.zeros_like(params), state, learning_rate=0.1)
        for name, arr in params.tensors().items():
            assert np.array_equal(arr, snapshot[name])

    def test_first_step_is_signed_learning_rate(self):
        params = init_params(Cfg, seed=0)
        before = params.attention.w_a.copy()
        grads = Gradients.zeros_like(params)
        grads.w_a[...] = np.where(before >= 0, 3.0, -2.0)  # |g| >> eps
        state = AdamState.for_params(params)
        adam_step(params, grads, state, learning_rate=0.01)
        delta = params.attention.w_a - before
        np.testing.assert_allclose(delta, -0.01 * np.sign(grads.w_a), rtol=1e-6)

    def test_quadratic_convergence(self):
        # minimize (x0 - 1)^2 + 5 (x1 + 2)^2 using b_a as the variable
        params = init_params(Cfg, seed=0)
        params.attention.b_a = np.array([3.0, 1.0, 0.0])
        target = np.array([1.0, -2.0, 0.0])
        scale = np.array([1.0, 5.0, 1.0])
        state = AdamState.for_params(params)
        for _ in range(100):
            grads = Gradients.zeros_like(params)
            grads.b_a[...] = 2.0 * scale * (params.attention.b_a - target)
            adam_step(params, grads, state, learning_rate=0.2)
        loss = float((scale * (params.attention.b_a - target) ** 2).sum())
        assert loss < 1e-3


class TestInitParams:
    def test_seed_determinism_bitwise(self):
        a = init_params(Cfg, seed=5)
        b = init_params(Cfg, seed=5)
        for name, arr in a.tensors().items():
            assert np.array_equal(arr, b.tensors()[name])

    def test_different_seeds_differ(self):
        a = init_params(Cfg, seed=5)
        b = init_params(Cfg, seed=6)
        assert not np.array_equal(a.attention.w_a, b.attention.w_a)

    def test_glorot_bound(self):
        class Big:
            embed_dim, attn_dim, hidden = 300, 64, 128
            temperature, dropout_p, seed = 2.0, 0.6, 0

        params = init_params(Big, seed=0)
        bound = np.sqrt(6.0 / (300 + 64))
        assert bound == pytest.approx(0.1284, abs=2e-4)
        assert np.abs(params.attention.w_a).max() <= bound
        assert np.abs(params.classifier.w_c).max() <= np.sqrt(6.0 / (300 + 128))
        assert np.abs(params.classifier.w_o).max() <= np.sqrt(6.0 / (128 + 2))

    def test_bias_and_affine_defaults(self):
        params = init_params(Cfg, seed=2)
        assert np.all(params.attention.b_a == 0.0)
        assert np.all(params.classifier.b_c == 0.0)
        assert np.all(params.classifier.b_o == 0.0)
        assert np.all(params.classifier.ln_shift == 0.0)
        assert np.all(params.classifier.ln_gain == 1.0)

    def test_empirical_mean_within_three_sigma(self):
        class Wide:
            embed_dim, attn_dim, hidden = 500, 200, 16
            temperature, dropout_p, seed = 2.0, 0.0, 0

        params = init_params(Wide, seed=7)
        samples = params.attention.w_a.ravel()  # 100k uniform draws
        bound = np.sqrt(6.0 / (500 + 200))
        sigma_mean = bound / np.sqrt(3.0 * samples.size)
        assert abs(samples.mean()) < 3.0 * sigma_mean
