"""Classifier components: encoder masking, attention, loss, baseline."""
import numpy as np
import pytest

from quarts import classifier as C
from quarts import tensor as T
from quarts.data import PAD
from quarts.gradcheck import grad_check
from quarts.tensor import Tape, Tensor


@pytest.fixture
def f64():
    with T.using_dtype(np.float64):
        yield


def zero_classifier(vocab_q=9, vocab_t=9, d=4, k=4):
    p = C.init_classifier(np.random.default_rng(0), vocab_q, vocab_t, d, k)
    for t in p.named().values():
        t.data[...] = 0.0
    return p


def tiny_classifier(seed=0, vocab_q=9, vocab_t=9, d=4, k=4, dropout=0.0):
    return C.init_classifier(np.random.default_rng(seed), vocab_q, vocab_t, d, k,
                             dropout=dropout)


class TestEncode:
    def test_zero_params_give_zero_states(self, f64):
        p = zero_classifier()
        h = C.encode([4, 5, 6], p.emb_q, p.lstm_q)
        np.testing.assert_array_equal(h.data, np.zeros((4, 3)))

    def test_single_step_hand_computation(self, f64):
        # one token, k=1: gates = x*wx + b with known numbers
        lstm = C.LstmParams(Tensor(np.full((1, 4), 0.5)),
                            Tensor(np.zeros((1, 4))),
                            Tensor(np.zeros(4)))
        emb = Tensor(np.array([[0.0], [1.0]]))
        h = C.encode([1], emb, lstm)
        # gates all 0.5: i=o=f=sigmoid(.5), g=tanh(.5); c=i*g; h=o*tanh(c)
        i = 1 / (1 + np.exp(-0.5))
        c = i * np.tanh(0.5)
        want = i * np.tanh(c)
        np.testing.assert_allclose(h.data, [[want]], atol=1e-12)

    def test_shape(self, f64):
        p = tiny_classifier()
        assert C.encode([4, 5, 6, 7, 4], p.emb_t, p.lstm_t).shape == (4, 5)

    def test_padding_leaves_true_columns_unchanged(self, f64):
        p = tiny_classifier()
        ids = [4, 5, 6]
        base = C.encode(ids, p.emb_q, p.lstm_q).data
        padded = C.encode(ids + [PAD, PAD], p.emb_q, p.lstm_q, true_len=3).data
        np.testing.assert_array_equal(base, padded[:, :3])

    def test_final_state_is_true_length_state(self, f64):
        p = tiny_classifier()
        ids = np.array([[4, 5, 6, PAD, PAD]], dtype=np.int64)
        _, final = C.encode_batch(ids, np.array([3]), p.emb_q, p.lstm_q)
        base = C.encode([4, 5, 6], p.emb_q, p.lstm_q).data
        np.testing.assert_array_equal(final.data[0], base[:, 2])

    def test_zero_length_rejected(self, f64):
        p = tiny_classifier()
        with pytest.raises(ValueError):
            C.encode([], p.emb_q, p.lstm_q)


class TestAttention:
    def test_zero_params_zero_everything(self, f64):
        p = zero_classifier()
        K = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
        H = Tensor(np.random.default_rng(1).normal(size=(4, 3)))
        r, alpha = C.wbw_attention(K, H, p.attn)
        np.testing.assert_array_equal(r.data, np.zeros(4))
        np.testing.assert_array_equal(alpha.data, np.zeros((3, 5)))

    def test_shapes(self, f64):
        p = tiny_classifier(k=2, d=3)
        K = Tensor(np.random.default_rng(0).normal(size=(2, 4)))
        H = Tensor(np.random.default_rng(1).normal(size=(2, 3)))
        r, alpha = C.wbw_attention(K, H, p.attn)
        assert r.shape == (2,)
        assert alpha.shape == (3, 4)

    def test_gradients_match_finite_differences(self, f64):
        rng = np.random.default_rng(7)
        k = 3
        attn = C.AttentionParams(
            Tensor(rng.normal(scale=0.3, size=(3 * k, k)), requires_grad=True),
            Tensor(rng.normal(scale=0.3, size=(k,)), requires_grad=True),
            Tensor(rng.normal(scale=0.3, size=(k, k)), requires_grad=True),
            Tensor(rng.normal(scale=0.3, size=(k, 3 * k)), requires_grad=True))
        K = Tensor(rng.normal(size=(k, 4)))
        H = Tensor(rng.normal(size=(k, 2)))

        def loss():
            r, _ = C.wbw_attention(K, H, attn)
            return T.sum_axis(r)

        err = grad_check(loss, [attn.w_h, attn.w, attn.w_r])
        assert err < 1e-4

    def test_first_step_ignores_initial_summary(self, f64):
        # r_0 = 0 makes the first score row depend only on K and h_1
        p = tiny_classifier(k=2, d=3)
        K = Tensor(np.random.default_rng(2).normal(size=(2, 3)))
        H1 = Tensor(np.random.default_rng(3).normal(size=(2, 2)))
        H2 = Tensor(np.hstack([H1.data[:, :1], np.ones((2, 1))]))
        _, a1 = C.wbw_attention(K, H1, p.attn)
        _, a2 = C.wbw_attention(K, H2, p.attn)
        np.testing.assert_allclose(a1.data[0], a2.data[0], atol=1e-12)


class TestCombine:
    def test_equal_inputs_zero_third_block(self, f64):
        k = 3
        w_x = Tensor(np.eye(k, 3 * k), requires_grad=False)
        r = Tensor(np.array([0.3, -0.2, 0.5]))
        h = C.combine(r, r, w_x)
        np.testing.assert_allclose(h.data, np.tanh(r.data), atol=1e-12)

    def test_zero_weight_zero_output(self, f64):
        w_x = Tensor(np.zeros((3, 9)))
        r = Tensor(np.ones(3))
        q = Tensor(np.zeros(3))
        np.testing.assert_array_equal(C.combine(r, q, w_x).data, np.zeros(3))

    def test_gradient_through_absolute_difference(self, f64):
        rng = np.random.default_rng(5)
        w_x = Tensor(rng.normal(scale=0.3, size=(3, 9)), requires_grad=True)
        r = Tensor(rng.normal(size=3) + 2.0, requires_grad=True)  # away from ties
        q = Tensor(rng.normal(size=3) - 2.0, requires_grad=True)
        err = grad_check(lambda: T.sum_axis(C.combine(r, q, w_x)), [w_x, r, q])
        assert err < 1e-4


class TestClassify:
    def test_zero_params_half(self, f64):
        p = zero_classifier()
        assert C.classify([4, 5], [4], p) == 0.5

    def test_output_in_unit_interval(self, f64):
        p = tiny_classifier(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            item = list(rng.integers(4, 9, size=rng.integers(1, 6)))
            query = list(rng.integers(4, 9, size=rng.integers(1, 4)))
            prob = C.classify(item, query, p)
            assert 0.0 < prob < 1.0

    def test_eval_deterministic(self):
        p = tiny_classifier(seed=1, dropout=0.1)
        a = C.classify([4, 5, 6], [7, 8], p)
        b = C.classify([4, 5, 6], [7, 8], p)
        assert a == b

    def test_padding_invariance_bitwise(self):
        p = tiny_classifier(seed=2, dropout=0.1)
        base = C.classify([4, 5, 6], [7, 8], p)
        assert C.classify([4, 5, 6, PAD, PAD], [7, 8, PAD], p) == base

    def test_full_model_gradcheck(self, f64):
        p = tiny_classifier(seed=4, dropout=0.0)
        batch_items = np.array([[4, 5]], dtype=np.int64)
        batch_queries = np.array([[6, 7, 8]], dtype=np.int64)
        labels = np.array([1.0])
        params = list(p.named().values())

        def loss():
            probs, _ = C.batch_probs(p, batch_items, np.array([2]),
                                     batch_queries, np.array([3]))
            return C.weighted_ce_loss(probs, labels, beta=5.0)

        from quarts.gradcheck import MODEL_EPS
        err = grad_check(loss, params, eps=MODEL_EPS)
        assert err < 1e-4


class TestWeightedCE:
    def test_hand_positive(self, f64):
        loss = C.weighted_ce_loss(Tensor([0.5]), np.array([1.0]), beta=5.0)
        assert abs(loss.item() - 5 * np.log(2)) < 1e-12

    def test_hand_negative(self, f64):
        loss = C.weighted_ce_loss(Tensor([0.5]), np.array([0.0]), beta=5.0)
        assert abs(loss.item() - np.log(2)) < 1e-12

    def test_beta_one_is_standard_bce(self, f64):
        rng = np.random.default_rng(8)
        f = rng.uniform(0.01, 0.99, size=32)
        y = rng.integers(0, 2, size=32).astype(float)
        got = C.weighted_ce_loss(Tensor(f), y, beta=1.0).item()
        want = -np.mean(y * np.log(f) + (1 - y) * np.log(1 - f))
        assert abs(got - want) < 1e-12

    def test_nonnegative(self, f64):
        rng = np.random.default_rng(9)
        for _ in range(50):
            f = rng.uniform(1e-9, 1 - 1e-9, size=16)
            y = rng.integers(0, 2, size=16).astype(float)
            assert C.weighted_ce_loss(Tensor(f), y, beta=5.0).item() >= 0.0

    def test_saturated_probs_stay_finite_in_f32(self):
        loss = C.weighted_ce_loss(Tensor([1.0, 0.0]), np.array([0.0, 1.0]), beta=5.0)
        assert np.isfinite(loss.item())


class TestDssm:
    def test_zero_params_half(self, f64):
        p = C.init_dssm(np.random.default_rng(0), 9, 9, 4, 4)
        for t in p.named().values():
            t.data[...] = 0.0
        assert C.dssm_baseline([4, 5], [6], p) == 0.5

    def test_pooled_invariant_to_word_order(self, f64):
        p = C.init_dssm(np.random.default_rng(1), 9, 9, 4, 4)
        a = C.dssm_baseline([4, 5, 6], [7, 8], p)
        b = C.dssm_baseline([4, 5, 6], [8, 7], p)
        assert abs(a - b) < 1e-12

    def test_loss_trains(self, f64):
        # one step of full-batch training must not error and must be finite
        from quarts.data import Batch
        p = C.init_dssm(np.random.default_rng(2), 9, 9, 4, 4)
        batch = Batch(np.array([[4, 5], [6, PAD]]), np.array([2, 1]),
                      np.array([[7], [8]]), np.array([1, 1]),
                      np.array([0.0, 1.0]), ["annotated", "annotated"])
        with Tape() as tape:
            loss = C.dssm_batch_loss(p, batch, beta=5.0)
            tape.backward(loss)
        assert np.isfinite(loss.item())


class TestHeatmap:
    def test_single_token_pair_normalizes_to_one(self, f64):
        p = tiny_classifier(seed=6)
        alpha = C.attention_heatmap([4], [5], p)
        norm = C.normalize_heatmap(alpha)
        assert norm.shape == (1, 1)
        assert norm[0, 0] == 1.0

    def test_dimensions(self, f64):
        p = tiny_classifier(seed=6)
        alpha = C.attention_heatmap([4, 5, 6, 7], [8, 4], p)
        assert alpha.shape == (2, 4)

    def test_rows_normalized_to_unit_range(self, f64):
        p = tiny_classifier(seed=7)
        norm = C.normalize_heatmap(C.attention_heatmap([4, 5, 6], [7, 8], p))
        assert norm.min() >= 0.0 and norm.max() <= 1.0
        for row in norm:
            assert row.max() == 1.0 and row.min() == 0.0

    def test_text_export(self, f64):
        p = tiny_classifier(seed=7)
        norm = C.normalize_heatmap(C.attention_heatmap([4, 5], [6], p))
        text = C.heatmap_text(norm, ["q1"], ["t1", "t2"])
        assert text.startswith("\tt1\tt2\n")
        assert "q1\t" in text


class TestBatchSingleConsistency:
    def test_batched_matches_single_probs(self, f64):
        p = tiny_classifier(seed=9)
        items = np.array([[4, 5, 6], [7, 8, PAD]], dtype=np.int64)
        queries = np.array([[5, 6], [7, PAD]], dtype=np.int64)
        probs, _ = C.batch_probs(p, items, np.array([3, 2]),
                                 queries, np.array([2, 1]))
        one = C.classify([4, 5, 6], [5, 6], p)
        two = C.classify([7, 8], [7], p)
        np.testing.assert_allclose(probs.data, [one, two], atol=1e-10)
