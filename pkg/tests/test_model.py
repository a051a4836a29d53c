import math

import numpy as np
import pytest

from layoutbridge.codec import Vocab, layout_to_sequence, tokenize_captions
from layoutbridge.data import synth_toy_dataset
from layoutbridge.geometry import Layout
from layoutbridge.model import (
    Adam,
    Batch,
    LayoutTransformer,
    ModelConfig,
    TrainingDiverged,
    grad_check,
    grad_check_fn,
    make_batch,
    train_step,
)
from layoutbridge.model import nn
from layoutbridge.model.gradcheck import relative_error
from layoutbridge.model.train import greedy_decode
from layoutbridge.model.transformer import layout_loss, param_shapes

from conftest import build_tiny


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(K=4, d=10, heads=4)
    with pytest.raises(ValueError):
        ModelConfig(K=0)
    cfg = ModelConfig(K=5, S=7, C=80)
    assert cfg.n_classes == 3921 and cfg.n_dec_tokens == 3922
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_params_are_float32_representable(tiny):
    model, _, _ = tiny
    for k, p in model.params.items():
        assert np.array_equal(p, p.astype(np.float32).astype(np.float64)), k


def test_same_seed_same_params():
    a, _, _ = build_tiny()
    b, _, _ = build_tiny()
    c, _, _ = build_tiny(seed=4)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert not np.array_equal(a.params["out.w"], c.params["out.w"])


def test_softmax_rows_sum_to_one(tiny):
    model, _, batch = tiny
    logits, f, _ = model.forward(batch)
    p = nn.softmax(logits)
    assert np.allclose(p.sum(-1), 1.0, atol=1e-12)
    assert logits.shape[-1] == model.config.n_classes
    assert ((f > 0) & (f < 1)).all()


def test_softmax_oracle():
    w = nn.softmax(np.array([1.0, 2.0, 3.0]))
    assert np.round(w, 4).tolist() == [0.0900, 0.2447, 0.6652]


def test_regression_head_matches_plain_arithmetic(tiny):
    model, _, _ = tiny
    P = model.params
    h = np.random.default_rng(0).normal(size=model.config.d)

    def mv(x, W, b):
        return [sum(x[i] * W[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]

    r1 = [max(v, 0.0) for v in mv(h.tolist(), P["reg.w1"].tolist(), P["reg.b1"].tolist())]
    r2 = [max(v, 0.0) for v in mv(r1, P["reg.w2"].tolist(), P["reg.b2"].tolist())]
    want = [1.0 / (1.0 + math.exp(-v)) for v in mv(r2, P["reg.w3"].tolist(), P["reg.b3"].tolist())]
    assert np.allclose(model.regress_bbox(h), want, atol=1e-12)


def test_uniform_logits_give_log_class_count():
    n = 7 * 7 * 80 + 1
    batch = Batch(
        text_ids=np.zeros((1, 1), dtype=np.int64),
        text_mask=np.ones((1, 1, 1), dtype=bool),
        text_valid=np.ones((1, 1), dtype=bool),
        dec_in=np.array([[n]]),
        targets=np.array([[n - 1]]),
        reg_targets=np.full((1, 1, 4), 0.5),
        reg_valid=np.zeros((1, 1), dtype=bool),
    )
    total, cls, reg, _, _ = layout_loss(np.zeros((1, 1, n)), np.full((1, 1, 4), 0.5), batch, 2.0)
    assert cls == pytest.approx(math.log(3921), rel=1e-12)
    assert cls == pytest.approx(8.2742, abs=2e-4)
    assert reg == 0.0 and total == cls


def test_loss_decomposition(tiny):
    model, _, batch = tiny
    total, cls, reg = model.loss(batch)
    assert total == pytest.approx(cls + model.config.lam * reg, rel=1e-14)
    # padding steps contribute nothing
    logits, f, _ = model.forward(batch)
    valid = batch.targets >= 0
    logp = nn.log_softmax(logits)
    manual = -sum(logp[b, t, batch.targets[b, t]] for b, t in zip(*np.nonzero(valid)))
    assert cls == pytest.approx(manual, rel=1e-12)


def test_regression_loss_uses_square_root_sizes():
    batch = Batch(
        text_ids=np.zeros((1, 1), dtype=np.int64),
        text_mask=np.ones((1, 1, 1), dtype=bool),
        text_valid=np.ones((1, 1), dtype=bool),
        dec_in=np.array([[5]]),
        targets=np.array([[0]]),
        reg_targets=np.array([[[0.5, 0.5, 0.25, 0.04]]]),
        reg_valid=np.ones((1, 1), dtype=bool),
    )
    f = np.array([[[0.6, 0.3, 0.36, 0.09]]])
    _, _, reg, _, _ = layout_loss(np.zeros((1, 1, 4)), f, batch, 1.0)
    assert reg == pytest.approx(0.1 ** 2 + 0.2 ** 2 + 0.1 ** 2 + 0.1 ** 2)


def test_decoder_is_causal(tiny):
    model, _, batch = tiny
    logits, _, _ = model.forward(batch)
    mutated = Batch(**{**batch.__dict__, "dec_in": batch.dec_in.copy()})
    mutated.dec_in[:, 2:] = 7
    logits2, _, _ = model.forward(mutated)
    assert np.array_equal(logits[:, :2], logits2[:, :2])
    assert not np.array_equal(logits[:, 2:], logits2[:, 2:])


def test_decode_step_agrees_with_teacher_forcing(tiny):
    model, vocab, batch = tiny
    logits, f, _ = model.forward(batch)
    enc = model.encode_text(tokenize_captions(["a b c", "d e"], vocab))
    prefix = batch.dec_in[0, :2].tolist()
    step_logits, h = model.decode_step(enc, prefix)
    assert np.allclose(step_logits, logits[0, 1], atol=1e-10)
    assert np.allclose(model.regress_bbox(h), f[0, 1], atol=1e-10)


def test_text_padding_is_ignored(tiny):
    model, vocab, batch = tiny
    # sample 2 is padded to the longest caption; its decoder output must match
    # an unpadded forward pass
    single = make_batch([(tokenize_captions(["e"], vocab), layout_to_sequence(Layout(), model.config.gridspec()))],
                        model.config.gridspec().n_joint, vocab.pad_id)
    a = model.forward(batch)[0][2, :1]
    b = model.forward(single)[0][0, :1]
    assert np.allclose(a, b, atol=1e-10)


def test_mask_isolation_bitwise(tiny):
    model, vocab, _ = tiny
    rng = np.random.default_rng(0)
    for _ in range(20):
        base = tokenize_captions(["a b c", "d e f", "g"], vocab)
        ids = np.array(base.ids)
        states = model.encode_text(base)
        other = ids.copy()
        a, b = base.spans[1]
        other[a:b] = rng.integers(4, len(vocab), b - a)
        other[base.spans[2][0]] = rng.integers(4, len(vocab))
        mutated = type(base)(tuple(int(v) for v in other), base.spans)
        states2 = model.encode_text(mutated)
        s0, e0 = base.spans[0]
        assert np.array_equal(states[s0:e0], states2[s0:e0])


def test_zero_layer_encoder_is_embedding_plus_position():
    model, vocab, _ = build_tiny(layers_enc=0)
    assert "enc_ln.g" not in model.params
    tc = tokenize_captions(["a b"], vocab)
    want = model.params["text_embed"][list(tc.ids)] + nn.sinusoidal_positions(len(tc), model.config.d)
    assert np.array_equal(model.encode_text(tc), want)


def test_param_shape_order_is_stable():
    names = list(param_shapes(ModelConfig(K=3, layers_enc=1, layers_dec=1)))
    assert names[:2] == ["text_embed", "token_embed"]
    assert names[-2:] == ["reg.w3", "reg.b3"]


def test_linear_toy_grad_check_is_near_exact():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
    params = {"W": rng.normal(size=(3, 2))}

    def loss():
        r = X @ params["W"] - Y
        return float((r * r).sum())

    grads = {"W": 2.0 * X.T @ (X @ params["W"] - Y)}
    errs = grad_check_fn(loss, params, grads)
    assert errs["W"] <= 1e-10


def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.full(3, 1e-12)) < 1e-5


def test_small_model_grad_check():
    # a 1e-3 step crosses a ReLU kink in this configuration
    model, _, batch = build_tiny(d=8, heads=2, layers_enc=1, layers_dec=1, d_ff=8, d_reg=8)
    assert grad_check(model, batch, eps=1e-4) <= 1e-4


def test_grad_check_negative_control():
    model, _, batch = build_tiny(d=8, heads=2, layers_enc=1, layers_dec=1, d_ff=8, d_reg=8)
    _, grads = model.loss_and_grads(batch)
    bad = {k: v.copy() for k, v in grads.items()}
    bad["dec0.ffn.w1"][0, 0] += 0.5 + abs(bad["dec0.ffn.w1"][0, 0])
    assert grad_check(model, batch, grads=bad) > 1e-2


def test_adam_zero_lr_leaves_params():
    model, _, batch = build_tiny()
    before = {k: v.copy() for k, v in model.params.items()}
    opt = Adam(model.params, lr=0.0)
    train_step(model, batch, opt)
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_training_is_deterministic():
    out = []
    for _ in range(2):
        model, _, batch = build_tiny()
        opt = Adam(model.params, lr=1e-2)
        out.append([train_step(model, batch, opt) for _ in range(3)])
    assert out[0] == out[1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    model, _, batch = build_tiny()
    model.params["out.b"][0] = np.inf
    with pytest.raises(TrainingDiverged):
        train_step(model, batch, Adam(model.params))


def _toy_overfit(steps):
    ds = synth_toy_dataset(0, 8)
    vocab = Vocab.build(c for r in ds.records for c in r.captions)
    cfg = ModelConfig(K=len(vocab), C=len(ds.category_names), d=32, heads=4, seed=0)
    g = cfg.gridspec()
    samples = [(tokenize_captions(r.captions, vocab), layout_to_sequence(r.gt_layout, g)) for r in ds.records]
    model = LayoutTransformer(cfg)
    batch = make_batch(samples, g.n_joint, vocab.pad_id)
    opt = Adam(model.params, lr=3e-3)
    losses = [train_step(model, batch, opt) for _ in range(steps)]
    return model, vocab, ds, losses


def test_overfit_loss_strictly_decreases():
    _, _, _, losses = _toy_overfit(10)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_memorizes_single_sample():
    ds = synth_toy_dataset(2, 1)
    vocab = Vocab.build(ds.records[0].captions)
    cfg = ModelConfig(K=len(vocab), C=len(ds.category_names), d=32, heads=4, seed=0)
    g = cfg.gridspec()
    r = ds.records[0]
    target = layout_to_sequence(r.gt_layout, g)
    model = LayoutTransformer(cfg)
    batch = make_batch([(tokenize_captions(r.captions, vocab), target)], g.n_joint, vocab.pad_id)
    opt = Adam(model.params, lr=3e-3)
    for _ in range(60):
        train_step(model, batch, opt)
    assert greedy_decode(model, r.captions, vocab).tokens == target.tokens
