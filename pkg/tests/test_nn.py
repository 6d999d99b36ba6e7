import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cabr.checks import op_checks
from cabr.nn import (
    Adam,
    CheckpointError,
    Conv2d,
    GatedConv2d,
    GateVariant,
    ShapeError,
    Tensor,
    adam_step,
    finite_diff_check,
    functional as F,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from cabr.nn.gradcheck import relative_error


def naive_conv(x, w, b, stride=1, dilation=1):
    """Direct 3x3 cross-correlation with zero padding = dilation."""
    n, c, h, wd = x.shape
    cout = w.shape[0]
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for i in range(ho):
        for j in range(wo):
            for ky in range(3):
                for kx in range(3):
                    y = i * stride + (ky - 1) * dilation
                    xx = j * stride + (kx - 1) * dilation
                    if 0 <= y < h and 0 <= xx < wd:
                        out[:, :, i, j] += x[:, :, y, xx] @ w[:, :, ky, kx].T
    return out + b[None, :, None, None]


@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("dilation", [1, 2])
def test_conv_matches_direct_loops(stride, dilation):
    rng = np.random.default_rng(stride * 10 + dilation)
    x = rng.standard_normal((2, 3, 8, 7)).astype(np.float32)
    w = rng.standard_normal((5, 3, 3, 3)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, dilation).data
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, dilation), rtol=1e-5, atol=1e-5)
    if stride == 1:
        assert out.shape[2:] == x.shape[2:]


def test_conv_examples():
    x = np.random.default_rng(0).standard_normal((1, 1, 5, 5)).astype(np.float32)
    ident = np.zeros((1, 1, 3, 3), np.float32)
    ident[0, 0, 1, 1] = 1
    assert np.array_equal(F.conv2d(Tensor(x), Tensor(ident), Tensor(np.zeros(1))).data, x)
    ones = F.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1))).data
    assert ones[0, 0, 2, 2] == 9
    y = F.conv2d(Tensor(np.ones((1, 2, 8, 8))), Tensor(np.ones((3, 2, 3, 3))), Tensor(np.zeros(3)), stride=2)
    assert y.shape == (1, 3, 4, 4)


def test_conv_shape_errors():
    w = Tensor(np.zeros((2, 3, 3, 3)))
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 4, 8, 8))), w, Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 3, 8, 8))), Tensor(np.zeros((2, 3, 5, 5))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 3, 8, 8))), w, Tensor(np.zeros(2)), stride=3)


def test_conv_backward_bias_and_zero_grad():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 3, 3, 3)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    g = rng.standard_normal((2, 4, 6, 6)).astype(np.float32)
    F.conv2d(x, w, b).backward(g)
    np.testing.assert_allclose(b.grad, g.sum(axis=(0, 2, 3)), rtol=1e-5)
    for t in (x, w, b):
        t.grad = None
    F.conv2d(x, w, b).backward(np.zeros_like(g))
    assert not x.grad.any() and not w.grad.any() and not b.grad.any()


@pytest.mark.parametrize("report", op_checks(0), ids=lambda r: r.name)
def test_op_gradients_match_central_differences(report):
    assert report.passed, str(report)


def test_gradcheck_detects_a_wrong_gradient():
    x = Tensor(np.random.default_rng(0).standard_normal((1, 1, 4, 4)), requires_grad=True)

    def bad():
        out = F.leaky_relu(x)
        back = out._backward
        out._backward = lambda g: tuple(2 * v for v in back(g))
        return out

    assert not finite_diff_check(bad, [x]).passed


def test_relative_error_floor():
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-6])) < 1e-3
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_activation_values():
    assert F.sigmoid(Tensor(np.zeros((1, 1, 1, 1)))).data.item() == 0.5
    assert F.leaky_relu(Tensor(-np.ones((1, 1, 1, 1))), 0.2).data.item() == pytest.approx(-0.2)
    big = F.sigmoid(Tensor(np.array([[[[-1e4, 1e4]]]]))).data
    assert np.isfinite(big).all() and big[0, 0, 0, 0] == 0 and big[0, 0, 0, 1] == 1


def _scalar_gated(x, w, b, gw, gb, slope=0.2):
    """Elementwise evaluation of one output channel of a gated conv at stride 1."""
    h, wd = x.shape[2:]
    out = np.zeros((w.shape[0], h, wd))
    xp = np.pad(x[0].astype(np.float64), ((0, 0), (1, 1), (1, 1)))
    for o in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                f = b[o] + float((xp[:, i : i + 3, j : j + 3] * w[o]).sum())
                g = gb[o] + float((xp[:, i : i + 3, j : j + 3] * gw[o]).sum())
                act = f if f >= 0 else slope * f
                out[o, i, j] = act / (1 + np.exp(-g))
    return out


def test_gated_conv_scalar_oracle_and_variants():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((1, 2, 3, 3)).astype(np.float32)
    w, gw = (rng.standard_normal((2, 2, 3, 3)).astype(np.float32) for _ in range(2))
    b, gb = (rng.standard_normal(2).astype(np.float32) for _ in range(2))
    two = F.gated_conv2d(Tensor(x), Tensor(w), Tensor(b), Tensor(gw), Tensor(gb)).data
    np.testing.assert_allclose(two[0], _scalar_gated(x, w, b, gw, gb), rtol=1e-5, atol=1e-6)
    shared = F.gated_conv2d(Tensor(x), Tensor(np.concatenate([w, gw])), Tensor(np.concatenate([b, gb]))).data
    np.testing.assert_allclose(shared, two, rtol=1e-6, atol=1e-7)


def test_gated_conv_examples():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)))
    w, b = Tensor(rng.standard_normal((2, 3, 3, 3))), Tensor(rng.standard_normal(2))
    zero_w, zero_b = Tensor(np.zeros((2, 3, 3, 3))), Tensor(np.zeros(2))
    half = F.gated_conv2d(x, w, b, zero_w, zero_b).data
    feat = F.leaky_relu(F.conv2d(x, w, b)).data
    np.testing.assert_allclose(half, 0.5 * feat, rtol=1e-6)
    zero = F.gated_conv2d(Tensor(np.zeros((1, 3, 6, 6))), w, zero_b, Tensor(rng.standard_normal((2, 3, 3, 3))), zero_b)
    assert not zero.data.any()
    gated = F.gated_conv2d(x, w, b, Tensor(rng.standard_normal((2, 3, 3, 3))), Tensor(rng.standard_normal(2))).data
    assert (np.abs(gated) <= np.abs(feat) + 1e-6).all()


def test_upsample_examples():
    a = Tensor(np.array([[[[3.0]]]]), requires_grad=True)
    assert F.upsample_nearest2x(a).data.tolist() == [[[[3.0, 3.0], [3.0, 3.0]]]]
    x = np.random.default_rng(0).standard_normal((2, 3, 4, 6)).astype(np.float32)
    up = F.upsample_nearest2x(Tensor(x)).data
    assert np.array_equal(up[:, :, ::2, ::2], x)
    t = Tensor(x, requires_grad=True)
    g = np.random.default_rng(1).standard_normal(up.shape).astype(np.float32)
    F.upsample_nearest2x(t).backward(g)
    np.testing.assert_allclose(t.grad, g.reshape(2, 3, 4, 2, 6, 2).sum(axis=(3, 5)), rtol=1e-6)


def _dice_oracle(p, t, w, eps=1.0):
    p, t, w = (np.asarray(a, np.float64) for a in (p, t, w))
    return 1 - (2 * (w * p * t).sum() + eps) / ((w * p).sum() + (w * t).sum() + eps)


def test_dice_loss_examples():
    rng = np.random.default_rng(0)
    t = (rng.random((2, 1, 6, 6)) > 0.5).astype(np.float32)
    n_pos = t.sum()
    assert F.dice_loss(Tensor(t), t).data <= 1.0 / (2 * n_pos + 1.0)
    inv = F.dice_loss(Tensor(1 - t), t).data
    assert inv == pytest.approx(1 - 1.0 / (t.size + 1.0))
    p = Tensor(rng.random(t.shape), requires_grad=True)
    loss = F.dice_loss(p, t, np.zeros_like(t))
    assert loss.data == 0
    loss.backward()
    assert not p.grad.any()
    with pytest.raises(ShapeError):
        F.dice_loss(p, t[:, :, :5])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_dice_loss_matches_formula_and_range(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.99, (2, 1, 5, 5))
    t = rng.random(p.shape) > 0.5
    w = rng.random(p.shape) > 0.3
    got = float(F.dice_loss(Tensor(p), t, w).data)
    assert got == pytest.approx(_dice_oracle(p.astype(np.float32), t, w), abs=1e-6)
    assert 0 <= got < 1


def test_dice_loss_decreases_with_overlap():
    t = np.zeros((1, 1, 1, 4), np.float32)
    t[..., :2] = 1
    # same total mass, moved from a background pixel onto a target pixel
    a = np.array([[[[0.5, 0.2, 0.5, 0.0]]]], np.float32)
    b = np.array([[[[0.5, 0.7, 0.0, 0.0]]]], np.float32)
    assert F.dice_loss(Tensor(b), t).data < F.dice_loss(Tensor(a), t).data


def test_adam_examples():
    p = Tensor(np.array([[[[2.0]]]]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert p.data.item() == 2.0
    q = Tensor(np.array([[[[1.0]]]]), requires_grad=True)
    opt = Adam([q], lr=1e-3)
    q.grad = np.ones_like(q.data)
    opt.step()
    # m_hat = 1, v_hat = 1 -> p - lr / (1 + eps)
    assert q.data.item() == pytest.approx(1.0 - 1e-3 / (1 + 1e-8), rel=1e-6)


def test_adam_reference_two_steps_and_determinism():
    rng = np.random.default_rng(0)
    init = rng.standard_normal(5)
    grads = [rng.standard_normal(5) for _ in range(2)]
    ref, m, v = init.copy(), 0.0, 0.0
    for k, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 1e-2 * (m / (1 - 0.9**k)) / (np.sqrt(v / (1 - 0.999**k)) + 1e-8)
    runs = []
    for _ in range(2):
        p = Tensor(init.copy(), requires_grad=True)
        opt = Adam([p], lr=1e-2)
        for g in grads:
            p.grad = g.astype(np.float32)
            opt.step()
        runs.append(p.data.copy())
    np.testing.assert_allclose(runs[0], ref, rtol=1e-5)
    assert np.array_equal(runs[0], runs[1])


def test_adam_step_function():
    p = Tensor(np.ones(3), requires_grad=True)
    state = Adam([p], lr=0.5)
    adam_step([p], [np.ones(3, np.float32)], state)
    assert state.step_count == 1 and (p.data < 1).all()


def test_param_count_examples():
    assert param_count(Conv2d(3, 3, rng=np.random.default_rng(0))) == 84
    assert param_count(GatedConv2d(16, 16, rng=np.random.default_rng(0))) == 4640
    shared = GatedConv2d(16, 16, variant=GateVariant.SHARED_SPLIT, rng=np.random.default_rng(0))
    assert param_count(shared) == 4640
    assert param_count([]) == 0 and param_count(None) == 0


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {"a.weight": rng.standard_normal((2, 3, 3, 3)).astype(np.float32), "a.bias": np.zeros(2, np.float32)}
    save_checkpoint(tmp_path / "c.ckpt", arrays, {"note": "x"})
    got, meta = load_checkpoint(tmp_path / "c.ckpt")
    assert meta == {"note": "x"}
    assert set(got) == set(arrays)
    for k in arrays:
        assert np.array_equal(got[k], arrays[k]) and got[k].dtype == np.float32
    head = (tmp_path / "c.ckpt").read_bytes().split(b"\n", 1)[0]
    assert b'"dtype":"<f4"' in head


def test_checkpoint_errors(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"not json\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "x.ckpt")
    save_checkpoint(tmp_path / "t.ckpt", {"w": np.ones(10, np.float32)}, {})
    data = (tmp_path / "t.ckpt").read_bytes()
    (tmp_path / "t.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "t.ckpt")
