import math

import numpy as np
import pytest

from adaptpoint import autograd as ag
from adaptpoint import nn
from adaptpoint.autograd import Tensor
from adaptpoint.checks import op_cases
from adaptpoint.gradcheck import gradcheck
from adaptpoint.rng import RngStream


def test_every_op_case_passes_its_tolerance():
    for case in op_cases(seed=3):
        report = gradcheck(case.loss_fn, case.params)
        assert report.max_rel_err <= case.tol, f"{case.name}: {report}"


def test_module_names_are_dotted_and_unique():
    gen = np.random.default_rng(0)
    mha = nn.MultiHeadAttention(8, 2, gen)
    names = [n for n, _ in mha.named_parameters()]
    assert "pe.layers.0.w" in names
    assert "wq.w" in names and "norm.gamma" in names
    assert len(names) == len(set(names))


def test_state_dict_round_trip():
    gen = np.random.default_rng(1)
    a = nn.MLP([4, 8, 2], gen)
    b = nn.MLP([4, 8, 2], np.random.default_rng(2))
    b.load_state_dict(a.state_dict())
    x = Tensor(np.random.default_rng(3).normal(size=(5, 4)))
    assert np.array_equal(a(x).data, b(x).data)


def test_attention_single_token_weight_is_one():
    # with one token the softmax has a single logit, so attention output == v;
    # force identity projections and zero PE to check the residual/norm path
    gen = np.random.default_rng(4)
    mha = nn.MultiHeadAttention(4, 1, gen)
    eye = np.eye(4)
    for layer in (mha.wq, mha.wk, mha.wv, mha.wo):
        layer.w.data = eye.copy()
    mha.wo.b.data = np.zeros(4)
    for lin in mha.pe.layers:
        lin.w.data = np.zeros_like(lin.w.data)
        lin.b.data = np.zeros_like(lin.b.data)
    token = np.array([[0.3, -1.2, 0.7, 2.0]])
    out = mha(Tensor(token), np.zeros((1, 3)))
    expected = mha.norm(Tensor(2.0 * token))
    assert np.abs(out.data - expected.data).max() <= 1e-12


def test_attention_identical_tokens_get_identical_rows():
    gen = np.random.default_rng(5)
    mha = nn.MultiHeadAttention(8, 4, gen)
    token = gen.normal(size=(1, 8))
    tokens = np.repeat(token, 3, axis=0)
    pos = np.repeat(gen.normal(size=(1, 3)), 3, axis=0)
    out = mha(Tensor(tokens), pos).data
    assert np.abs(out - out[0]).max() <= 1e-12


def test_attention_rejects_bad_head_split():
    with pytest.raises(ValueError):
        nn.MultiHeadAttention(6, 4, np.random.default_rng(0))


def test_gumbel_hard_rows_are_one_hot():
    gen = RngStream(0).generator()
    logits = Tensor(np.random.default_rng(1).normal(size=(40, 2)))
    y = nn.gumbel_softmax(logits, 1.0, hard=True, rng=gen)
    assert np.array_equal(np.sort(y.data, axis=1), np.tile([0.0, 1.0], (40, 1)))


def test_gumbel_soft_rows_sum_to_one():
    gen = RngStream(1).generator()
    logits = Tensor(np.random.default_rng(2).normal(size=(64, 2)))
    y = nn.gumbel_softmax(logits, 0.5, hard=False, rng=gen)
    assert np.abs(y.data.sum(axis=1) - 1.0).max() <= 1e-12
    assert np.all(y.data > 0) and np.all(y.data < 1)


def test_gumbel_hard_marginal_matches_categorical():
    # argmax(logits + G) ~ Categorical(softmax(logits)); temperature is irrelevant
    logits = Tensor(np.tile([math.log(3.0), math.log(1.0)], (10_000, 1)))
    y = nn.gumbel_softmax(logits, 0.5, hard=True, rng=RngStream(7).generator())
    freq = y.data[:, 0].mean()
    assert abs(freq - 0.75) <= 0.02


def test_gumbel_rejects_bad_temperature():
    with pytest.raises(ValueError):
        nn.gumbel_softmax(Tensor(np.zeros((2, 2))), 0.0, hard=False, rng=RngStream(0).generator())


def test_cross_entropy_uniform_logits_is_log_k():
    for k in (2, 5, 9):
        logits = Tensor(np.zeros((3, k)))
        assert nn.cross_entropy(logits, [0, 1, k - 1]).item() == pytest.approx(math.log(k))


def test_cross_entropy_confident_logit_approaches_zero():
    logits = np.zeros((1, 4))
    logits[0, 2] = 60.0
    assert nn.cross_entropy(Tensor(logits), [2]).item() <= 1e-20


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(ValueError):
        nn.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


def test_layer_norm_output_is_standardized():
    gen = np.random.default_rng(8)
    ln = nn.LayerNorm(16)
    out = ln(Tensor(gen.normal(size=(10, 16)) * 5 + 3)).data
    assert np.abs(out.mean(axis=1)).max() <= 1e-12
    assert np.abs(out.std(axis=1) - 1.0).max() <= 1e-3


def test_forward_determinism_with_frozen_stream():
    def run():
        gen = RngStream(123).generator()
        mha = nn.MultiHeadAttention(8, 2, gen)
        tokens = Tensor(RngStream(5).generator().normal(size=(6, 8)))
        pos = RngStream(6).generator().normal(size=(6, 3))
        return mha(tokens, pos).data

    assert np.array_equal(run(), run())
