import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import REL_TOL, check_instance, random_instance
from hateclf.errors import InvalidConfig, ShapeMismatch
from hateclf.heads import (
    KINDS,
    ClassificationHead,
    HeadConfig,
    backward,
    cnn_pooled,
    cross_entropy,
    forward,
    forward_bilstm,
    forward_cnn,
    forward_linear,
    forward_mlp,
    init_params,
    leaky_relu,
    param_shapes,
    parameter_count,
    predict,
    zero_params,
)
from oracles import (
    conv_maxpool_bruteforce,
    lstm_unrolled,
    sampled_central_difference,
    softmax_np,
    tensor_relative_error,
)

MINI = dict(hidden=16, num_layers=2, mlp_hidden=32, cnn_filters=8)


def seeded_states(seed, L=2, S=8, H=16, B=None):
    g = torch.Generator().manual_seed(seed)
    shape = (L, S, H) if B is None else (B, L, S, H)
    return torch.randn(shape, generator=g, dtype=torch.float64)


def seeded_params(cfg):
    g = torch.Generator().manual_seed(cfg.seed + 1000)
    return {k: torch.randn(v.shape, generator=g, dtype=torch.float64) * 0.3 for k, v in init_params(cfg).items()}


# ---------------------------------------------------------------- shapes and counts

def test_parameter_counts():
    assert parameter_count(HeadConfig("linear", hidden=768, num_classes=3)) == 2307
    cnn = HeadConfig("cnn", hidden=768, num_layers=12, cnn_filters=32)
    assert param_shapes(cnn)["W"] == (384, 3)
    assert 384 * 3 + 3 == 1155
    assert param_shapes(cnn)["K"] == (32, 3 * 768)
    mlp = HeadConfig("mlp", hidden=768)
    assert param_shapes(mlp) == {"W1": (768, 768), "b1": (768,), "W2": (768, 768), "b2": (768,), "W3": (768, 3), "b3": (3,)}
    bil = HeadConfig("bilstm", hidden=16)
    assert param_shapes(bil)["W"] == (32, 3)


@pytest.mark.parametrize("kwargs", [dict(kind="gru"), dict(num_classes=1), dict(cnn_window=65), dict(cnn_filters=0)])
def test_invalid_head_config(kwargs):
    with pytest.raises(InvalidConfig):
        HeadConfig(**kwargs)


def test_init_is_seeded():
    cfg = HeadConfig("bilstm", **MINI, seed=3)
    a, b = init_params(cfg), init_params(cfg)
    assert all(torch.equal(a[k], b[k]) for k in a)
    assert torch.equal(a["b"], torch.zeros(3))
    W_hh = a["fw_W_hh"]
    # orthogonal-style: the (h, 4h) matrix has orthonormal rows
    torch.testing.assert_close(W_hh @ W_hh.T, torch.eye(16, dtype=torch.float64), atol=1e-12, rtol=0)


def test_shape_mismatch():
    cfg = HeadConfig("linear", **MINI)
    p = init_params(cfg)
    with pytest.raises(ShapeMismatch):
        forward_linear(torch.zeros(2, 8, 12, dtype=torch.float64), p)
    with pytest.raises(ShapeMismatch):
        forward_linear(torch.zeros(8, 16, dtype=torch.float64), p)
    with pytest.raises(ShapeMismatch):
        forward_cnn(torch.zeros(2, 2, 16, dtype=torch.float64), init_params(HeadConfig("cnn", **MINI)))
    with pytest.raises(ShapeMismatch):
        ClassificationHead(cfg, {"W": p["W"]})


# ---------------------------------------------------------------- zero parameters

@pytest.mark.parametrize("kind", KINDS)
def test_zero_params_give_uniform(kind):
    cfg = HeadConfig(kind, **MINI)
    s = seeded_states(0)
    probs = forward(cfg, s, zero_params(cfg), torch.arange(8) < 5)
    torch.testing.assert_close(probs, torch.full((3,), 1 / 3, dtype=torch.float64), atol=1e-15, rtol=0)


def test_leaky_relu_slope():
    out = leaky_relu(torch.tensor([-1.0, 2.0, 0.0], dtype=torch.float64), 0.01)
    assert out.tolist() == [-0.01, 2.0, 0.0]


# ---------------------------------------------------------------- oracle equivalence

@pytest.mark.parametrize("seed", range(5))
def test_linear_matches_oracle(seed):
    cfg = HeadConfig("linear", **MINI, seed=seed)
    s, p = seeded_states(seed), seeded_params(cfg)
    cls = s[-1, 0].numpy()
    W, b = p["W"].numpy(), p["b"].numpy()
    logits = [sum(cls[i] * W[i, c] for i in range(16)) + b[c] for c in range(3)]
    np.testing.assert_allclose(forward_linear(s, p).numpy(), softmax_np(logits), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_mlp_matches_oracle(seed):
    cfg = HeadConfig("mlp", **MINI, seed=seed)
    s, p = seeded_states(seed), seeded_params(cfg)
    P = {k: v.numpy() for k, v in p.items()}

    def affine(x, W, b):
        return [sum(x[i] * W[i, j] for i in range(len(x))) + b[j] for j in range(W.shape[1])]

    def lrelu(v):
        return [x if x >= 0 else 0.01 * x for x in v]

    h1 = lrelu(affine(s[-1, 0].numpy(), P["W1"], P["b1"]))
    h2 = lrelu(affine(h1, P["W2"], P["b2"]))
    expected = softmax_np(affine(h2, P["W3"], P["b3"]))
    np.testing.assert_allclose(forward_mlp(s, p).numpy(), expected, rtol=0, atol=1e-12)


def test_bilstm_matches_unrolled_oracle():
    # sequence of 3 content positions (plus padding), hidden 2
    H, h = 3, 2
    cfg = HeadConfig("bilstm", hidden=H, num_layers=1, lstm_hidden=h)
    g = torch.Generator().manual_seed(42)
    p = {k: torch.randn(v.shape, generator=g, dtype=torch.float64) for k, v in init_params(cfg).items()}
    s = torch.randn(1, 5, H, generator=g, dtype=torch.float64)
    mask = torch.tensor([True, True, True, False, False])
    xs = s[0, :3].tolist()
    P = {k: v.tolist() for k, v in p.items()}
    h_fw = lstm_unrolled(xs, P["fw_W_ih"], P["fw_W_hh"], P["fw_b"])
    h_bw = lstm_unrolled(xs[::-1], P["bw_W_ih"], P["bw_W_hh"], P["bw_b"])
    z = h_fw + h_bw
    logits = [sum(z[i] * P["W"][i][c] for i in range(2 * h)) + P["b"][c] for c in range(3)]
    np.testing.assert_allclose(forward_bilstm(s, mask, p).numpy(), softmax_np(logits), rtol=0, atol=1e-12)


def test_bilstm_single_step_is_finite():
    cfg = HeadConfig("bilstm", **MINI)
    mask = torch.zeros(8, dtype=torch.bool)
    mask[0] = True
    probs = forward_bilstm(seeded_states(1), mask, seeded_params(cfg))
    assert torch.isfinite(probs).all() and abs(float(probs.sum()) - 1) < 1e-12


def test_bilstm_ignores_padding():
    cfg = HeadConfig("bilstm", **MINI)
    p = seeded_params(cfg)
    s = seeded_states(2)
    mask = torch.arange(8) < 4
    other = s.clone()
    other[:, 4:] = torch.randn(2, 4, 16, dtype=torch.float64)
    assert torch.equal(forward_bilstm(s, mask, p), forward_bilstm(other, mask, p))


def test_cnn_matches_bruteforce():
    cfg = HeadConfig("cnn", hidden=4, num_layers=2, cnn_filters=1)
    g = torch.Generator().manual_seed(3)
    s = torch.randn(2, 5, 4, generator=g, dtype=torch.float64)
    p = {k: torch.randn(v.shape, generator=g, dtype=torch.float64) for k, v in init_params(cfg).items()}
    expected = conv_maxpool_bruteforce(s.numpy(), p["K"].numpy(), p["bk"].numpy())
    np.testing.assert_allclose(cnn_pooled(s, p)[0].numpy(), expected, rtol=0, atol=1e-12)
    no_relu = conv_maxpool_bruteforce(s.numpy(), p["K"].numpy(), p["bk"].numpy(), relu=False)
    np.testing.assert_allclose(cnn_pooled(s, p, relu=False)[0].numpy(), no_relu, rtol=0, atol=1e-12)


def test_cnn_many_filters_match_bruteforce():
    cfg = HeadConfig("cnn", **MINI)
    s, p = seeded_states(4), seeded_params(cfg)
    expected = conv_maxpool_bruteforce(s.numpy(), p["K"].numpy(), p["bk"].numpy())
    np.testing.assert_allclose(cnn_pooled(s, p)[0].numpy(), expected, rtol=0, atol=1e-12)
    assert cnn_pooled(s, p).shape == (1, 2 * 8)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 59), st.integers(2, 59), st.integers(0, 1000))
def test_cnn_shift_invariance(i, j, seed):
    # offsets keep two zero rows on each side, so every partial overlap occurs
    cfg = HeadConfig("cnn", hidden=4, num_layers=2, cnn_filters=3)
    g = torch.Generator().manual_seed(seed)
    p = {k: torch.randn(v.shape, generator=g, dtype=torch.float64) for k, v in init_params(cfg).items()}
    pattern = torch.randn(2, 3, 4, generator=g, dtype=torch.float64)
    a = torch.zeros(2, 64, 4, dtype=torch.float64)
    b = torch.zeros(2, 64, 4, dtype=torch.float64)
    a[:, i:i + 3] = pattern
    b[:, j:j + 3] = pattern
    assert torch.equal(cnn_pooled(a, p), cnn_pooled(b, p))


# ---------------------------------------------------------------- probabilities and predict

@pytest.mark.parametrize("kind", KINDS)
def test_probabilities_normalized(kind):
    cfg = HeadConfig(kind, **MINI)
    s = seeded_states(9, B=200) * 5
    probs = forward(cfg, s, seeded_params(cfg), torch.ones(200, 8, dtype=torch.bool))
    assert ((probs >= 0) & (probs <= 1)).all()
    assert (probs.sum(-1) - 1).abs().max() <= 1e-6


@pytest.mark.parametrize("kind", KINDS)
def test_dropout_off_is_deterministic(kind):
    cfg = HeadConfig(kind, **MINI, dropout_p=0.5)
    s, p = seeded_states(5), seeded_params(cfg)
    mask = torch.arange(8) < 6
    assert torch.equal(forward(cfg, s, p, mask), forward(cfg, s, p, mask))
    torch.manual_seed(0)
    a = forward(cfg, s, p, mask, training=True)
    b = forward(cfg, s, p, mask, training=True)
    assert not torch.equal(a, b)


@pytest.mark.parametrize("probs, expected", [((0.1, 0.7, 0.2), 1), ((0.5, 0.5, 0.0), 0), ((1 / 3, 1 / 3, 1 / 3), 0)])
def test_predict_examples(probs, expected):
    assert predict(np.array(probs)) == expected


@given(st.lists(st.integers(-30, 30), min_size=3, max_size=3, unique=True).map(lambda v: [x / 4 for x in v]),
       st.floats(0.01, 50))
def test_predict_invariant_to_logit_scaling(logits, c):
    z = torch.tensor(logits, dtype=torch.float64)
    assert predict(torch.softmax(c * z, 0)) == int(np.argmax(logits))


def test_predict_batched():
    assert predict(np.array([[0.2, 0.8, 0.0], [0.4, 0.4, 0.2]])).tolist() == [1, 0]


# ---------------------------------------------------------------- loss and gradients

def test_cross_entropy_examples():
    assert math.isclose(float(cross_entropy(torch.full((3,), 1 / 3), 2)), math.log(3), rel_tol=1e-6)
    assert float(cross_entropy(torch.tensor([0.0, 1.0, 0.0]), 1)) == 0.0
    assert math.isclose(float(cross_entropy(torch.tensor([0.7, 0.2, 0.1], dtype=torch.float64), 1)), -math.log(0.2), rel_tol=1e-12)
    assert math.isclose(float(cross_entropy(torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64), 1)), -math.log(1e-12), rel_tol=1e-12)


def test_linear_zero_params_bias_gradient():
    cfg = HeadConfig("linear", **MINI)
    grads, _ = backward(cfg, seeded_states(0), zero_params(cfg), 0)
    torch.testing.assert_close(grads["b"], torch.tensor([-2 / 3, 1 / 3, 1 / 3], dtype=torch.float64), atol=1e-15, rtol=0)


def test_gradients_vanish_where_output_cannot_depend():
    s = seeded_states(3)
    mask = torch.arange(8) < 4
    cfg = HeadConfig("linear", **MINI)
    _, gs = backward(cfg, s, seeded_params(cfg), 1, mask)
    assert torch.count_nonzero(gs[-1, 1:]) == 0 and torch.count_nonzero(gs[0]) == 0
    cfg = HeadConfig("bilstm", **MINI)
    _, gs = backward(cfg, s, seeded_params(cfg), 1, mask)
    assert torch.count_nonzero(gs[:, 4:]) == 0 and torch.count_nonzero(gs[0]) == 0
    assert torch.count_nonzero(gs[-1, :4]) > 0


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(kind, seed):
    report = check_instance(kind, seed)
    assert report.max_rel_error <= REL_TOL, report.rel_errors
    assert report.componentwise_ok


def test_gradient_instances_are_well_conditioned():
    for kind in KINDS:
        cfg, params, states, mask, target = random_instance(kind, 0)
        p = forward(cfg, states, params, mask)
        assert 1e-3 < float(p.max()) < 0.999


def test_mlp_full_width_sampled_gradients():
    cfg, params, states, mask, target = random_instance("mlp", 0, mlp_hidden=768)
    grads, _ = backward(cfg, states, params, target, mask)
    g = torch.Generator().manual_seed(0)
    for name, x in params.items():
        idx = torch.randint(0, x.numel(), (40,), generator=g).tolist()

        def loss(z, name=name):
            return cross_entropy(forward(cfg, states, {**params, name: z}, mask), target)

        numeric = sampled_central_difference(loss, x, idx)
        analytic = grads[name].reshape(-1)[idx]
        assert tensor_relative_error(analytic, numeric) <= REL_TOL, name


def test_batched_backward_is_mean_of_singles():
    cfg = HeadConfig("cnn", **MINI)
    p = seeded_params(cfg)
    s = seeded_states(6, B=3)
    targets = torch.tensor([0, 2, 1])
    grads, _ = backward(cfg, s, p, targets)
    singles = [backward(cfg, s[i], p, int(targets[i]))[0] for i in range(3)]
    for k in grads:
        torch.testing.assert_close(grads[k], sum(sg[k] for sg in singles) / 3, atol=1e-14, rtol=0)


def test_module_wrapper_matches_functional():
    cfg = HeadConfig("mlp", **MINI)
    p = seeded_params(cfg)
    head = ClassificationHead(cfg, p).eval()
    s = seeded_states(7, B=2)
    assert torch.equal(head(s), forward(cfg, s, p))
