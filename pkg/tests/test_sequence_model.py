"""Bi-LSTM classifier tests.

The two independent oracles here are `manual_bilstm_logits` (a scalar,
loop-by-loop unroll of the recurrence, no numpy) and `fd_gradient`
(central finite differences of the batch loss).  Both were written
before the module's backprop and must not import from it beyond the
public API under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sparse4d.sequence_model as sm
from sparse4d.errors import DegenerateDatasetError, MalformedFileError, ShapeMismatchError

# --------------------------------------------------------------------------
# oracle 1: scalar unroll of the bidirectional recurrence


def manual_bilstm_logits(params, seq):
    H = params.hidden_dim

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    def run(W, U, b, rows):
        h = [0.0] * H
        c = [0.0] * H
        for x in rows:
            z = [
                b[r]
                + sum(W[r][d] * x[d] for d in range(len(x)))
                + sum(U[r][j] * h[j] for j in range(H))
                for r in range(4 * H)
            ]
            i = [sig(z[j]) for j in range(H)]
            f = [sig(z[H + j]) for j in range(H)]
            g = [math.tanh(z[2 * H + j]) for j in range(H)]
            o = [sig(z[3 * H + j]) for j in range(H)]
            c = [f[j] * c[j] + i[j] * g[j] for j in range(H)]
            h = [o[j] * math.tanh(c[j]) for j in range(H)]
        return h

    rows = [list(map(float, r)) for r in seq]
    hf = run(params.w_fwd.tolist(), params.u_fwd.tolist(), params.b_fwd.tolist(), rows)
    hb = run(params.w_bwd.tolist(), params.u_bwd.tolist(), params.b_bwd.tolist(), rows[::-1])
    rep = hf + hb
    return [
        float(params.fc_b[k]) + sum(float(params.fc_w[k][j]) * rep[j] for j in range(2 * H))
        for k in range(params.class_count)
    ]


# --------------------------------------------------------------------------
# oracle 2: central finite differences of the loss


def with_entry(params, name, flat_index, value):
    arrays = {n: np.array(getattr(params, n)) for n in sm.PARAM_FIELDS}
    arrays[name].ravel()[flat_index] = value
    return sm.BiLstmParams(**arrays)


def fd_gradient(params, batch, cfg, seed, name, flat_index, eps=1e-5):
    base = float(getattr(params, name).ravel()[flat_index])

    def loss_at(v):
        p = with_entry(params, name, flat_index, v)
        rng = np.random.default_rng(seed)
        return sm.loss_and_gradients(p, batch, cfg, rng)[0]

    return (loss_at(base + eps) - loss_at(base - eps)) / (2.0 * eps)


def random_batch(rng, D, class_count, lengths):
    return [
        (rng.standard_normal((T, D)), int(rng.integers(class_count)))
        for T in lengths
    ]


# --------------------------------------------------------------------------
# parameter containers


def test_params_shape_mismatch_rejected():
    good = sm.zeros_params(3, 2)
    with pytest.raises(ValueError):
        sm.BiLstmParams(
            **{
                name: (np.zeros(5) if name == "b_fwd" else getattr(good, name))
                for name in sm.PARAM_FIELDS
            }
        )


def test_params_nonfinite_rejected():
    bad = np.zeros((8, 3))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        sm.BiLstmParams(
            w_fwd=bad,
            u_fwd=np.zeros((8, 2)),
            b_fwd=np.zeros(8),
            w_bwd=np.zeros((8, 3)),
            u_bwd=np.zeros((8, 2)),
            b_bwd=np.zeros(8),
            fc_w=np.zeros((6, 4)),
            fc_b=np.zeros(6),
        )


def test_init_params_bounds_and_forget_bias():
    p = sm.init_params(5, 4, 6, seed=9)
    bound = 1.0 / math.sqrt(4)
    for name in ("w_fwd", "u_fwd", "w_bwd", "u_bwd", "fc_w"):
        a = getattr(p, name)
        assert np.all(np.abs(a) <= bound)
        assert a.std() > 0
    for b in (p.b_fwd, p.b_bwd):
        assert np.array_equal(b[4:8], np.ones(4))
        assert np.array_equal(b[:4], np.zeros(4))
        assert np.array_equal(b[8:], np.zeros(8))
    assert np.array_equal(p.fc_b, np.zeros(6))


def test_init_params_deterministic():
    a = sm.init_params(3, 2, 6, seed=4)
    b = sm.init_params(3, 2, 6, seed=4)
    for name in sm.PARAM_FIELDS:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_score_vector_validation():
    with pytest.raises(ValueError):
        sm.ScoreVector(np.array([0.5, 0.6]))
    with pytest.raises(ValueError):
        sm.ScoreVector(np.array([-0.1, 1.1]))
    sv = sm.ScoreVector(np.full(6, 1.0 / 6.0))
    assert sv.probabilities.shape == (6,)


# --------------------------------------------------------------------------
# forward pass


def test_zero_params_give_uniform_scores():
    p = sm.zeros_params(4, 3)
    seq = np.random.default_rng(0).standard_normal((5, 4))
    score, _ = sm.forward(p, seq)
    assert np.array_equal(score.probabilities, np.full(6, 1.0 / 6.0))


def test_forward_matches_manual_unroll():
    p = sm.init_params(2, 2, 6, seed=3)
    seq = np.random.default_rng(12).standard_normal((3, 2))
    _, cache = sm.forward(p, seq)
    expected = manual_bilstm_logits(p, seq)
    assert np.allclose(cache["logits"][0], expected, atol=1e-12, rtol=0)


def test_forward_infer_deterministic():
    p = sm.init_params(3, 4, 6, seed=1)
    seq = np.random.default_rng(2).standard_normal((6, 3))
    a, _ = sm.forward(p, seq)
    b, _ = sm.forward(p, seq)
    assert np.array_equal(a.probabilities, b.probabilities)


def test_forward_rejects_bad_shapes():
    p = sm.init_params(3, 2)
    with pytest.raises(ShapeMismatchError):
        sm.forward(p, np.zeros((4, 2)))
    with pytest.raises(ShapeMismatchError):
        sm.forward(p, np.zeros((0, 3)))
    with pytest.raises(ShapeMismatchError):
        sm.forward(p, np.zeros(3))


def test_predict_scores_equals_infer_forward():
    p = sm.init_params(3, 2, 6, seed=8)
    seq = np.random.default_rng(5).standard_normal((4, 3))
    direct, _ = sm.forward(p, seq, mode="infer")
    assert np.array_equal(sm.predict_scores(p, seq).probabilities, direct.probabilities)


@settings(deadline=None, max_examples=40)
@given(
    seed=st.integers(0, 10_000),
    T=st.integers(1, 6),
    D=st.integers(1, 5),
    H=st.integers(1, 4),
)
def test_scores_form_distribution(seed, T, D, H):
    rng = np.random.default_rng(seed)
    p = sm.init_params(D, H, 6, seed=seed)
    seq = rng.standard_normal((T, D)) * 3.0
    score, _ = sm.forward(p, seq)
    assert score.probabilities.min() >= 0.0
    assert abs(float(score.probabilities.sum()) - 1.0) <= 1e-12


# --------------------------------------------------------------------------
# dropout behaviour


def test_infer_mode_ignores_dropout():
    p = sm.init_params(3, 4, 6, seed=2)
    seq = np.random.default_rng(3).standard_normal((5, 3))
    _, cache = sm.forward(p, seq, mode="infer", rng=np.random.default_rng(0))
    assert np.array_equal(cache["mask"], np.ones_like(cache["mask"]))
    assert np.array_equal(cache["dropped"], cache["representation"])


def test_train_mode_zero_rate_is_noop():
    p = sm.init_params(3, 4, 6, seed=2)
    seq = np.random.default_rng(3).standard_normal((5, 3))
    _, cache = sm.forward(p, seq, mode="train", rng=np.random.default_rng(0), dropout_rate=0.0)
    assert np.array_equal(cache["dropped"], cache["representation"])


def test_train_mode_requires_rng_when_dropping():
    p = sm.init_params(3, 2)
    with pytest.raises(ValueError):
        sm.forward(p, np.zeros((2, 3)), mode="train", rng=None, dropout_rate=0.5)


def test_inverted_dropout_preserves_expectation():
    p = sm.init_params(3, 4, 6, seed=6)
    seq = np.random.default_rng(7).standard_normal((5, 3))
    _, ref = sm.forward(p, seq, mode="infer")
    rep = ref["representation"][0]
    rng = np.random.default_rng(99)
    total = np.zeros_like(rep)
    passes = 10_000
    for _ in range(passes):
        _, cache = sm.forward(p, seq, mode="train", rng=rng, dropout_rate=0.5)
        total += cache["dropped"][0]
    mean = total / passes
    assert np.all(np.abs(mean - rep) <= 0.02 * max(1.0, float(np.abs(rep).max())))


# --------------------------------------------------------------------------
# loss


def cfg_no_dropout(**kw):
    base = dict(learning_rate=0.1, epochs=1, batch_size=4, dropout_rate=0.0,
                seed=0, gradient_clip_norm=1e9)
    base.update(kw)
    return sm.TrainConfig(**base)


def test_uniform_predictions_loss_is_log6():
    p = sm.zeros_params(3, 2)
    batch = random_batch(np.random.default_rng(1), 3, 6, [4, 4, 5])
    loss, _ = sm.loss_and_gradients(p, batch, cfg_no_dropout(), np.random.default_rng(0))
    assert abs(loss - math.log(6.0)) <= 1e-12


def test_duplicated_example_keeps_mean_loss():
    p = sm.init_params(3, 3, 6, seed=4)
    seq = np.random.default_rng(8).standard_normal((4, 3))
    cfg = cfg_no_dropout()
    single, _ = sm.loss_and_gradients(p, [(seq, 2)], cfg, np.random.default_rng(0))
    doubled, _ = sm.loss_and_gradients(p, [(seq, 2), (seq, 2)], cfg, np.random.default_rng(0))
    assert abs(single - doubled) <= 1e-12


def test_loss_rejects_bad_labels_and_empty_batch():
    p = sm.init_params(3, 2)
    with pytest.raises(ValueError):
        sm.loss_and_gradients(p, [], cfg_no_dropout(), np.random.default_rng(0))
    with pytest.raises(ShapeMismatchError):
        sm.loss_and_gradients(p, [(np.zeros((2, 3)), 6)], cfg_no_dropout(), np.random.default_rng(0))


def test_batch_order_does_not_change_loss():
    p = sm.init_params(3, 3, 6, seed=4)
    rng = np.random.default_rng(10)
    batch = random_batch(rng, 3, 6, [3, 5, 3, 4])
    cfg = cfg_no_dropout()
    a, ga = sm.loss_and_gradients(p, batch, cfg, np.random.default_rng(0))
    b, gb = sm.loss_and_gradients(p, batch[::-1], cfg, np.random.default_rng(0))
    assert abs(a - b) <= 1e-12
    for name in sm.PARAM_FIELDS:
        assert np.allclose(ga[name], gb[name], atol=1e-12, rtol=0)


# --------------------------------------------------------------------------
# gradients vs central finite differences


def assert_gradients_match(params, batch, cfg, seed, entries_min):
    analytic = sm.loss_and_gradients(params, batch, cfg, np.random.default_rng(seed))[1]
    checked = 0
    worst = 0.0
    for name in sm.PARAM_FIELDS:
        flat = analytic[name].ravel()
        for k in range(flat.size):
            fd = fd_gradient(params, batch, cfg, seed, name, k)
            denom = max(abs(float(flat[k])), abs(fd), 1e-6)
            worst = max(worst, abs(float(flat[k]) - fd) / denom)
            checked += 1
    assert checked >= entries_min
    assert worst < 1e-4, f"worst relative gradient error {worst}"


def test_gradients_match_finite_differences():
    p = sm.init_params(3, 3, 6, seed=21)
    batch = random_batch(np.random.default_rng(22), 3, 6, [4, 5, 3])
    assert_gradients_match(p, batch, cfg_no_dropout(), seed=0, entries_min=100)


def test_gradients_match_finite_differences_with_dropout():
    p = sm.init_params(2, 2, 6, seed=23)
    batch = random_batch(np.random.default_rng(24), 2, 6, [3, 4])
    cfg = cfg_no_dropout(dropout_rate=0.5)
    assert_gradients_match(p, batch, cfg, seed=77, entries_min=60)


def test_gradient_clipping_caps_global_norm():
    p = sm.init_params(3, 3, 6, seed=25)
    batch = random_batch(np.random.default_rng(26), 3, 6, [4, 4])
    clip = 1e-3
    _, grads = sm.loss_and_gradients(
        p, batch, cfg_no_dropout(gradient_clip_norm=clip), np.random.default_rng(0)
    )
    gnorm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    assert abs(gnorm - clip) <= 1e-12


# --------------------------------------------------------------------------
# direction symmetry


def test_time_reversal_swaps_direction_states():
    p = sm.init_params(3, 4, 6, seed=30)
    seq = np.random.default_rng(31).standard_normal((7, 3))
    swapped = sm.BiLstmParams(
        w_fwd=p.w_bwd, u_fwd=p.u_bwd, b_fwd=p.b_bwd,
        w_bwd=p.w_fwd, u_bwd=p.u_fwd, b_bwd=p.b_fwd,
        fc_w=p.fc_w, fc_b=p.fc_b,
    )
    _, orig = sm.forward(p, seq)
    _, rev = sm.forward(swapped, seq[::-1].copy())
    assert np.array_equal(rev["fwd"]["h_final"], orig["bwd"]["h_final"])
    assert np.array_equal(rev["bwd"]["h_final"], orig["fwd"]["h_final"])


# --------------------------------------------------------------------------
# training


def separable_dataset(rng, n_per_class=10, D=3, T=4):
    data = []
    for label, center in ((0, 1.0), (1, -1.0)):
        for _ in range(n_per_class):
            seq = center + 0.1 * rng.standard_normal((T, D))
            data.append((seq, label))
    return data


def test_training_halves_loss_on_separable_data():
    data = separable_dataset(np.random.default_rng(40))
    cfg = sm.TrainConfig(learning_rate=0.3, epochs=50, batch_size=4,
                         dropout_rate=0.0, seed=1, gradient_clip_norm=5.0)
    history = []
    sm.train(data, cfg, hidden_dim=4, class_count=2, history=history)
    assert len(history) == 50
    first, last = history[0][1], history[-1][1]
    assert last <= 0.5 * first


def test_zero_epochs_returns_initial_params():
    data = separable_dataset(np.random.default_rng(41), n_per_class=3)
    cfg = sm.TrainConfig(epochs=0, seed=5)
    got = sm.train(data, cfg, hidden_dim=3, class_count=2)
    want = sm.init_params(3, 3, 2, seed=5)
    for name in sm.PARAM_FIELDS:
        assert np.array_equal(getattr(got, name), getattr(want, name))


def test_training_is_bitwise_deterministic():
    data = separable_dataset(np.random.default_rng(42), n_per_class=4)
    cfg = sm.TrainConfig(learning_rate=0.2, epochs=5, batch_size=3,
                         dropout_rate=0.5, seed=7, gradient_clip_norm=5.0)
    h1, h2 = [], []
    a = sm.train(data, cfg, hidden_dim=3, class_count=2, history=h1)
    b = sm.train(data, cfg, hidden_dim=3, class_count=2, history=h2)
    assert h1 == h2
    for name in sm.PARAM_FIELDS:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_single_class_dataset_rejected():
    data = [(np.zeros((3, 2)), 0), (np.ones((3, 2)), 0)]
    with pytest.raises(DegenerateDatasetError):
        sm.train(data, sm.TrainConfig())


def test_mixed_widths_rejected():
    data = [(np.zeros((3, 2)), 0), (np.ones((3, 4)), 1)]
    with pytest.raises(ShapeMismatchError):
        sm.train(data, sm.TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        sm.TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        sm.TrainConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        sm.TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        sm.TrainConfig(gradient_clip_norm=0.0)


# --------------------------------------------------------------------------
# serialization


def test_checkpoint_round_trip(tmp_path):
    p = sm.init_params(3, 2, 6, seed=55)
    path = tmp_path / "model.csv"
    sm.write_checkpoint(p, path)
    q = sm.read_checkpoint(path)
    for name in sm.PARAM_FIELDS:
        assert np.array_equal(getattr(p, name), getattr(q, name))


def test_checkpoint_missing_tensor_rejected(tmp_path):
    p = sm.init_params(2, 2, 6, seed=56)
    path = tmp_path / "model.csv"
    sm.write_checkpoint(p, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[1:]) + "\n")
    with pytest.raises(MalformedFileError):
        sm.read_checkpoint(path)


def test_checkpoint_bad_count_rejected(tmp_path):
    path = tmp_path / "model.csv"
    path.write_text("w_fwd,2,2,1.0,2.0,3.0\n")
    with pytest.raises(MalformedFileError):
        sm.read_checkpoint(path)


def test_training_log_format(tmp_path):
    path = tmp_path / "log.csv"
    sm.write_training_log([(0, 1.5), (1, 0.75)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss"
    assert lines[1].startswith("0,") and float(lines[1].split(",")[1]) == 1.5
    assert lines[2].startswith("1,") and float(lines[2].split(",")[1]) == 0.75
