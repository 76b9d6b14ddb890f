import math

import numpy as np
import pytest

from sslchrono import ndgrad
from sslchrono.ndgrad import Tensor
from sslchrono.transformer import (
    ModelConfig,
    attention,
    backbone,
    block_forward,
    embed,
    forward,
    init_params,
    predict_proba,
    swap_head,
)
from sslchrono.util import ConfigError, HeadMismatchError, ShapeError

from .util import assert_close, random_windows, toy_model_config


def reference_forward(window, arrays, config):
    """Straight-line float64 evaluation of one window, for comparison."""
    a = {k: v.astype(np.float64) for k, v in arrays.items()}
    x = window.astype(np.float64) @ a["input_projection.weight"]
    x = x + a["input_projection.bias"] + a["position_embeddings"]
    n = config.seq_len
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    for i in range(config.n_blocks):
        p = f"blocks.{i}."
        q = x @ a[p + "query.weight"] + a[p + "query.bias"]
        k = x @ a[p + "key.weight"] + a[p + "key.bias"]
        v = x @ a[p + "value.weight"] + a[p + "value.bias"]
        scores = q @ k.T / math.sqrt(config.d_model)
        scores[future] = -np.inf
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        h = x + (weights @ v) @ a[p + "output.weight"] + a[p + "output.bias"]
        h = np.maximum(h, 0)
        mu = h.mean(axis=1, keepdims=True)
        var = ((h - mu) ** 2).mean(axis=1, keepdims=True)
        x = (h - mu) / np.sqrt(var + 1e-5) * a[p + "norm.gamma"] + a[p + "norm.beta"]
    return x[-1] @ a["head.weight"] + a["head.bias"]


def test_init_is_deterministic():
    config = toy_model_config()
    a = init_params(config, np.random.default_rng(3))
    b = init_params(config, np.random.default_rng(3))
    assert list(a) == list(b)
    for name in a:
        assert np.array_equal(a[name].data, b[name].data)


def test_init_norm_parameters():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    for i in range(2):
        assert np.all(params[f"blocks.{i}.norm.gamma"].data == 1)
        assert np.all(params[f"blocks.{i}.norm.beta"].data == 0)
        assert np.all(params[f"blocks.{i}.query.bias"].data == 0)


def test_init_weight_std():
    params = init_params(ModelConfig(), np.random.default_rng(0))
    names = [f"blocks.{i}.{p}.weight" for i in range(4) for p in ("query", "key")]
    weights = np.concatenate([params[name].data.ravel() for name in names])
    assert weights.size >= 10_000
    assert abs(weights.std() - 0.02) < 0.002


def test_partition_is_exhaustive_and_disjoint():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    backbone_names, head_names = set(params.backbone_names), set(params.head_names)
    assert not backbone_names & head_names
    assert backbone_names | head_names == set(params)
    assert head_names == {"head.weight", "head.bias"}


def test_parameter_shapes():
    config = toy_model_config(head_kind="classification")
    params = init_params(config, np.random.default_rng(0))
    assert params["input_projection.weight"].shape == (6, 8)
    assert params["position_embeddings"].shape == (10, 8)
    assert params["blocks.1.output.weight"].shape == (8, 8)
    assert params["head.weight"].shape == (8, 2)


@pytest.mark.parametrize(
    "overrides",
    (
        dict(d_model=10, n_heads=3),
        dict(seq_len=1),
        dict(dropout_p=1.0),
        dict(n_blocks=0),
    ),
)
def test_invalid_model_config(overrides):
    with pytest.raises(ConfigError):
        init_params(toy_model_config(**overrides), np.random.default_rng(0))


def test_embed_zero_window_is_position_embeddings():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    out = embed(np.zeros((10, 6), dtype=np.float32), params)
    assert_close(out.data[0], params["position_embeddings"].data)


def test_embed_row_locality():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    window = random_windows(np.random.default_rng(1), 1)[0]
    changed = window.copy()
    changed[4] += 1
    diff = np.abs(embed(window, params).data - embed(changed, params).data)[0]
    assert diff[4].max() > 0
    assert diff[np.arange(10) != 4].max() == 0


def test_embed_matches_matrix_product():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    window = random_windows(np.random.default_rng(2), 1)[0]
    expected = (
        window.astype(np.float64) @ params["input_projection.weight"].data
        + params["input_projection.bias"].data
        + params["position_embeddings"].data
    )
    assert_close(embed(window, params).data[0], expected, atol=1e-6)


def test_embed_shape_mismatch():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    with pytest.raises(ShapeError):
        embed(np.zeros((9, 6)), params)


def test_attention_single_position_returns_v():
    v = Tensor([[3.0, -2.0]])
    assert_close(attention(Tensor([[1.0, 5.0]]), Tensor([[0.5, 2.0]]), v).data, v.data)


def test_attention_zero_query_is_prefix_mean():
    v = np.arange(12, dtype=np.float64).reshape(4, 3)
    out = attention(Tensor(np.zeros((4, 3))), Tensor(np.ones((4, 3))), Tensor(v)).data
    expected = np.cumsum(v, axis=0) / np.arange(1, 5)[:, None]
    assert_close(out, expected, atol=1e-12)


def test_attention_two_positions():
    out = attention(
        Tensor([[1.0], [1.0]], dtype=np.float64),
        Tensor([[1.0], [2.0]], dtype=np.float64),
        Tensor([[10.0], [20.0]], dtype=np.float64),
    ).data
    second = 10 * (1 / (1 + math.e)) + 20 * (math.e / (1 + math.e))
    assert_close(out[:, 0], [10.0, second], atol=1e-12)


def test_block_eval_is_deterministic_and_normalized():
    params = init_params(toy_model_config(dropout_p=0.5), np.random.default_rng(0))
    x = embed(random_windows(np.random.default_rng(1), 3), params)
    first = block_forward(x, params, 0, "eval").data
    second = block_forward(x, params, 0, "eval").data
    assert np.array_equal(first, second)
    assert np.all(np.abs(first.mean(axis=-1)) < 1e-5)


def test_train_mode_dropout_depends_on_rng():
    params = init_params(toy_model_config(dropout_p=0.5), np.random.default_rng(0))
    windows = random_windows(np.random.default_rng(1), 2)
    a = forward(windows, params, "train", np.random.default_rng(1)).data
    b = forward(windows, params, "train", np.random.default_rng(2)).data
    assert not np.array_equal(a, b)


def test_causality():
    rng = np.random.default_rng(5)
    for trial in range(20):
        config = toy_model_config(n_heads=int(rng.choice([1, 2, 4])))
        params = init_params(config, rng)
        window = random_windows(rng, 1)
        t = int(rng.integers(1, 10))
        changed = window.copy()
        changed[0, t:] += rng.standard_normal(changed[0, t:].shape).astype(np.float32)
        out = backbone(window, params).data[0]
        out_changed = backbone(changed, params).data[0]
        assert np.all(np.abs(out[:t] - out_changed[:t]) <= 1e-6), trial
        assert np.abs(out[t:] - out_changed[t:]).max() > 0


def test_day_order_matters():
    params = init_params(toy_model_config(init_std=0.3), np.random.default_rng(0))
    window = random_windows(np.random.default_rng(1), 1)
    shuffled = window[:, np.random.default_rng(2).permutation(10)]
    assert forward(window, params).item() != forward(shuffled, params).item()


def test_regression_output_shape():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    assert forward(random_windows(np.random.default_rng(1), 5), params).shape == (5,)
    assert forward(random_windows(np.random.default_rng(1), 1)[0], params).shape == (1,)


def test_classification_probabilities():
    rng = np.random.default_rng(9)
    for _ in range(20):
        config = toy_model_config(head_kind="classification", init_std=0.5)
        params = init_params(config, rng)
        windows = random_windows(rng, 4)
        logits = forward(windows, params)
        assert logits.shape == (4, 2)
        probs = ndgrad.softmax(logits).data
        assert np.all(np.abs(probs.sum(axis=-1) - 1) <= 1e-6)
        assert np.all(probs >= 0)
        positive = predict_proba(params, windows)
        assert_close(positive, probs[:, 1])


def test_forward_matches_reference():
    rng = np.random.default_rng(4)
    for head_kind in ("regression", "classification"):
        config = toy_model_config(head_kind=head_kind, init_std=0.3)
        params = init_params(config, rng)
        windows = random_windows(rng, 3)
        out = forward(windows, params).data
        for i in range(3):
            expected = reference_forward(windows[i], params.arrays(), config)
            assert_close(np.ravel(out[i]), np.ravel(expected), atol=1e-4)


def test_forward_is_pure_in_eval_mode():
    params = init_params(toy_model_config(dropout_p=0.3), np.random.default_rng(0))
    windows = random_windows(np.random.default_rng(1), 4)
    assert np.array_equal(forward(windows, params).data, forward(windows, params).data)


def test_task_mismatch():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    with pytest.raises(HeadMismatchError):
        forward(random_windows(np.random.default_rng(1), 1), params, task="classification")
    with pytest.raises(HeadMismatchError):
        predict_proba(params, random_windows(np.random.default_rng(1), 1))


def test_swap_head():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    before = params.checksum("backbone")
    swapped = swap_head(params, "classification", np.random.default_rng(1))
    again = swap_head(params, "classification", np.random.default_rng(1))
    assert swapped.checksum("backbone") == before
    assert params["head.weight"].shape == (8, 1)
    assert swapped["head.weight"].shape == (8, 2)
    assert swapped.head_kind == swapped.config.head_kind == "classification"
    assert swapped.checksum("head") == again.checksum("head")


def test_swap_head_unknown_kind():
    params = init_params(toy_model_config(), np.random.default_rng(0))
    with pytest.raises(HeadMismatchError):
        swap_head(params, "ranking", np.random.default_rng(0))
