import numpy as np
import pytest

from bigru_eeg import autodiff as ad
from bigru_eeg.autodiff import Tape, Tensor
from bigru_eeg.errors import BadArch, ShapeMismatch
from bigru_eeg.gradcheck import numeric_grad, relative_error
from bigru_eeg.nn import (
    ArchConfig,
    BiGruLayerParams,
    DenseParams,
    GruCellParams,
    bigru_layer,
    build_model,
    dense_forward,
    gru_cell_step,
    gru_layer_forward,
    model_forward,
)

SMALL = ArchConfig(n_features=3, hidden=(4, 3, 2), dense=(6, 4), dtype="float64")


def cell(f_in, h, seed=None, zero=False):
    rng = np.random.default_rng(seed)
    mats = {}
    for kind, shape in (("W", (f_in, h)), ("U", (h, h)), ("b", (h,))):
        for g in "zrh":
            arr = np.zeros(shape) if zero else rng.standard_normal(shape) * 0.5
            mats[f"{kind}_{g}"] = Tensor(arr, requires_grad=True)
    return GruCellParams(**mats)


def test_cell_zero_params():
    v = np.array([[1.0, -2.0, 0.5]])
    h = gru_cell_step(np.zeros((1, 2)), v, cell(2, 3, zero=True)).data
    np.testing.assert_array_equal(h, 0.5 * v)
    h0 = gru_cell_step(np.zeros((1, 2)), np.zeros((1, 3)), cell(2, 3, zero=True)).data
    np.testing.assert_array_equal(h0, np.zeros((1, 3)))


def test_cell_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        gru_cell_step(np.zeros((1, 5)), np.zeros((1, 3)), cell(2, 3, zero=True))


def test_cell_gradients_all_nine_blocks():
    p = cell(2, 3, seed=11)
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 2))
    h = rng.standard_normal((2, 3))
    blocks = list(p.named().values())
    with Tape() as tape:
        out = ad.sum(gru_cell_step(x, h, p))
    grads = tape.backward(out, blocks)
    numeric = numeric_grad(lambda: ad.sum(gru_cell_step(x, h, p)).item(), [b.data for b in blocks])
    assert len(blocks) == 9
    for b, n in zip(blocks, numeric):
        assert relative_error(grads[b], n) < 1e-6


def test_layer_matches_stepwise_cells():
    p = cell(3, 4, seed=1)
    seq = np.random.default_rng(2).standard_normal((2, 5, 3))
    out = gru_layer_forward(seq, p, "fwd").data
    h = np.zeros((2, 4))
    for t in range(5):
        h = gru_cell_step(seq[:, t, :], h, p).data
        np.testing.assert_allclose(out[:, t, :], h, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("direction", ["fwd", "bwd"])
def test_fused_scan_matches_composed_graph(direction):
    p = cell(3, 4, seed=5)
    seq = Tensor(np.random.default_rng(6).standard_normal((3, 7, 3)), requires_grad=True)
    w = np.random.default_rng(7).standard_normal((3, 7, 4))
    results = []
    for fused in (True, False):
        with Tape() as tape:
            out = gru_layer_forward(seq, p, direction, fused=fused)
            loss = ad.sum(out * Tensor(w))
        grads = tape.backward(loss, [seq, *p.named().values()])
        results.append((out.data, [grads[t] for t in [seq, *p.named().values()]]))
    np.testing.assert_allclose(results[0][0], results[1][0], rtol=1e-12, atol=1e-14)
    for a, b in zip(results[0][1], results[1][1]):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_layer_single_step_direction_irrelevant():
    p = cell(3, 4, seed=3)
    seq = np.random.default_rng(4).standard_normal((2, 1, 3))
    np.testing.assert_array_equal(gru_layer_forward(seq, p, "fwd").data, gru_layer_forward(seq, p, "bwd").data)


def test_backward_direction_is_reversed_forward():
    p = cell(3, 4, seed=5)
    seq = np.random.default_rng(6).standard_normal((2, 7, 3))
    bwd = gru_layer_forward(seq, p, "bwd").data
    ref = gru_layer_forward(seq[:, ::-1, :], p, "fwd").data[:, ::-1, :]
    np.testing.assert_array_equal(bwd, ref)


def test_layer_zero_params_zero_output():
    seq = np.random.default_rng(0).standard_normal((2, 6, 3))
    out = gru_layer_forward(seq, cell(3, 4, zero=True), "fwd").data
    np.testing.assert_array_equal(out, np.zeros((2, 6, 4)))


def test_bigru_shapes_default_widths():
    m = build_model(ArchConfig(), init_seed=0)
    x = Tensor(np.random.default_rng(0).standard_normal((64, 64, 13)).astype(np.float32))
    y1 = bigru_layer(x, m.bigru[0])
    assert y1.shape == (64, 64, 256)
    last = BiGruLayerParams(m.bigru[2].forward, m.bigru[2].backward, "last_concat")
    y3 = bigru_layer(bigru_layer(y1, m.bigru[1]), last)
    assert y3.shape == (64, 64)


def test_palindrome_forward_end_equals_backward_start():
    p = cell(2, 2, seed=8)
    a, b = np.random.default_rng(9).standard_normal((2, 2))
    seq = np.stack([a, b, a])[None, :, :]
    layer = BiGruLayerParams(p, p, "sequence")
    out = bigru_layer(seq, layer).data
    np.testing.assert_allclose(out[0, -1, :2], out[0, 0, 2:], rtol=1e-14)


def test_dense_forward():
    x = np.random.default_rng(0).standard_normal((4, 3))
    ident = DenseParams(Tensor(np.eye(3)), Tensor(np.zeros(3)), "none")
    np.testing.assert_array_equal(dense_forward(x, ident).data, x)
    neg = DenseParams(Tensor(np.eye(3)), Tensor(np.full(3, -100.0)), "relu")
    np.testing.assert_array_equal(dense_forward(x, neg).data, np.zeros((4, 3)))
    soft = DenseParams(Tensor(np.random.default_rng(1).standard_normal((3, 2))), Tensor(np.zeros(2)), "softmax")
    np.testing.assert_allclose(dense_forward(x, soft).data.sum(axis=1), 1.0, atol=1e-12)


def test_default_parameter_count():
    m = build_model(ArchConfig(), init_seed=0)
    count = 0
    f = 13
    for h in (128, 64, 32):
        count += 2 * 3 * (f * h + h * h + h)
        f = 2 * h
    for fin, fout in ((64, 64), (64, 32), (32, 2)):
        count += fin * fout + fout
    assert count == 269_538
    assert m.count() == 269_538


def test_build_deterministic_and_orthogonal():
    a = build_model(SMALL, init_seed=4).state_dict()
    b = build_model(SMALL, init_seed=4).state_dict()
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])
    m = build_model(ArchConfig(), init_seed=0)
    for name, t in m.named().items():
        if ".U_" in name:
            u = t.data.astype(np.float64)
            np.testing.assert_allclose(u.T @ u, np.eye(u.shape[0]), atol=1e-5)
        if name.endswith((".b", "b_z", "b_r", "b_h")):
            assert not t.data.any()


def test_bad_arch():
    with pytest.raises(BadArch):
        build_model(ArchConfig(dense_in=128))
    with pytest.raises(BadArch):
        build_model(ArchConfig(hidden=(0, 4)))
    build_model(ArchConfig(hidden=(4, 4, 2), dense_in=4))


def test_model_forward_shapes_and_rows():
    m = build_model(ArchConfig(), init_seed=1)
    x = np.random.default_rng(0).standard_normal((64, 64, 13)).astype(np.float32)
    p = model_forward(x, m).data
    assert p.shape == (64, 2)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    one = model_forward(x[:1], m).data
    assert one.shape == (1, 2)
    np.testing.assert_allclose(one.sum(), 1.0, atol=1e-6)


def test_shape_chain_widths():
    m = build_model(ArchConfig(), init_seed=0)
    assert [l.output_width for l in m.bigru] == [256, 128, 64]
    assert [d.W.shape[1] for d in m.dense] == [64, 32, 2]
    assert m.dense[0].W.shape[0] == 64


def test_inference_row_independence():
    m = build_model(SMALL, init_seed=2)
    x = np.random.default_rng(3).standard_normal((5, 6, 3))
    x[3] = x[1]
    p = model_forward(x, m).data
    np.testing.assert_array_equal(p[3], p[1])
    perm = np.array([4, 2, 0, 1, 3])
    np.testing.assert_allclose(model_forward(x[perm], m).data, p[perm], rtol=1e-12)


def test_zero_model_uniform():
    m = build_model(SMALL, init_seed=0)
    for t in m.named().values():
        t.data[...] = 0
    p = model_forward(np.random.default_rng(0).standard_normal((3, 4, 3)), m).data
    np.testing.assert_array_equal(p, np.full((3, 2), 0.5))


def test_model_shape_mismatch():
    m = build_model(SMALL, init_seed=0)
    with pytest.raises(ShapeMismatch):
        model_forward(np.zeros((2, 5, 4)), m)


def test_shrunken_model_gradient_check():
    arch = ArchConfig(n_features=3, hidden=(4, 3, 2), dense=(6, 4), dtype="float64")
    m = build_model(arch, init_seed=7)
    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 5, 3))
    y = np.eye(2)[[0, 1]]
    named = m.named()
    # nonzero biases: with zero init a dead ReLU row puts the next layer's
    # pre-activation exactly on the kink, where central differences read 0.5
    for t in named.values():
        t.data += 0.1 * rng.standard_normal(t.shape)

    def loss():
        return ad.softmax_cross_entropy(
            model_forward(x, m, training=True, rng=np.random.default_rng(99), return_logits=True), y
        )

    with Tape() as tape:
        out = loss()
    grads = tape.backward(out, named)
    numeric = numeric_grad(lambda: loss().item(), [t.data for t in named.values()])
    worst = max(relative_error(grads[k], n) for k, n in zip(named, numeric))
    assert worst < 1e-4
