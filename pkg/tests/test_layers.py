import numpy as np
import numpy.testing as npt
import pytest

from cvmri import autodiff as ad
from cvmri import layers
from cvmri.errors import ContractError, DimensionError


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def conv_oracle(x, kernel, bias, stride=1):
    """Direct complex correlation loop with "same" zero padding; independent of
    the im2col implementation."""
    b, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    ho, wo = -(-h // stride), -(-w // stride)
    pt = max((ho - 1) * stride + k - h, 0) // 2
    pl = max((wo - 1) * stride + k - w, 0) // 2
    out = np.zeros((b, cout, ho, wo), dtype=np.result_type(x, kernel))
    for bi in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0j
                    for c in range(cin):
                        for ki in range(k):
                            for kj in range(k):
                                ii = i * stride + ki - pt
                                jj = j * stride + kj - pl
                                if 0 <= ii < h and 0 <= jj < w:
                                    acc += kernel[o, c, ki, kj] * x[bi, c, ii, jj]
                    out[bi, o, i, j] = acc + bias[o]
    return out


# ---------------------------------------------------------------------------
# complex convolution


def test_conv_1x1_kernel_is_complex_multiply():
    x = np.full((1, 1, 1, 1), 2 - 1j)
    layer = layers.ComplexConv2D(1, 1, kernel=1)
    p = {"kernel": np.full((1, 1, 1, 1), 1 + 1j), "bias": np.zeros(1, complex)}
    npt.assert_allclose(layer.apply(p, x), np.full((1, 1, 1, 1), 3 + 1j), rtol=1e-6)


def test_conv_identity_kernel():
    rng = np.random.default_rng(0)
    x = crand(rng, 1, 1, 6, 6)
    kernel = np.zeros((1, 1, 3, 3), complex)
    kernel[0, 0, 1, 1] = 1.0
    layer = layers.ComplexConv2D(1, 1)
    out = layer.apply({"kernel": kernel, "bias": np.zeros(1, complex)}, x)
    npt.assert_allclose(out, x, atol=1e-6)


def test_conv_matches_loop_oracle_random():
    rng = np.random.default_rng(1)
    x = crand(rng, 1, 1, 8, 8)
    kernel = crand(rng, 1, 1, 3, 3)
    bias = crand(rng, 1)
    layer = layers.ComplexConv2D(1, 1)
    npt.assert_allclose(layer.apply({"kernel": kernel, "bias": bias}, x),
                        conv_oracle(x, kernel, bias), atol=1e-5)


@pytest.mark.parametrize("cin,cout", [(1, 1), (2, 3), (4, 2)])
@pytest.mark.parametrize("size", [4, 8, 16])
def test_conv_equivalence_matrix(cin, cout, size):
    rng = np.random.default_rng(cin * 100 + size)
    x = crand(rng, 2, cin, size, size)
    kernel = crand(rng, cout, cin, 3, 3)
    bias = crand(rng, cout)
    layer = layers.ComplexConv2D(cin, cout)
    npt.assert_allclose(layer.apply({"kernel": kernel, "bias": bias}, x),
                        conv_oracle(x, kernel, bias), atol=1e-5)


def test_conv_stride2_matches_oracle():
    rng = np.random.default_rng(2)
    x = crand(rng, 1, 2, 8, 8)
    kernel = crand(rng, 3, 2, 3, 3)
    bias = crand(rng, 3)
    layer = layers.ComplexConv2D(2, 3, stride=2)
    out = layer.apply({"kernel": kernel, "bias": bias}, x)
    assert ad.value_of(out).shape == (1, 3, 4, 4)
    npt.assert_allclose(out, conv_oracle(x, kernel, bias, stride=2), atol=1e-5)


def test_conv_linearity():
    rng = np.random.default_rng(3)
    f1, f2 = crand(rng, 1, 2, 8, 8), crand(rng, 1, 2, 8, 8)
    kernel = crand(rng, 2, 2, 3, 3)
    zero_bias = np.zeros(2, complex)
    layer = layers.ComplexConv2D(2, 2)
    alpha = 0.7 - 0.3j
    lhs = layer.apply({"kernel": kernel, "bias": zero_bias}, alpha * f1 + f2)
    rhs = alpha * layer.apply({"kernel": kernel, "bias": zero_bias}, f1) \
        + layer.apply({"kernel": kernel, "bias": zero_bias}, f2)
    npt.assert_allclose(lhs, rhs, atol=1e-5)


def test_conv_channel_mismatch():
    layer = layers.ComplexConv2D(2, 1)
    p = layer.init_params(np.random.default_rng(0))
    with pytest.raises(DimensionError):
        layer.apply(p, np.zeros((1, 3, 8, 8), complex))


def test_conv_grad_check():
    rng = np.random.default_rng(4)
    x = crand(rng, 2, 2, 5, 5)
    t = crand(rng, 2, 3, 5, 5)
    kernel = crand(rng, 3, 2, 3, 3)
    bias = crand(rng, 3)

    def f(p):
        y = ad.conv2d(p["x"], p["kernel"], p["bias"])
        d = ad.magnitude(ad.sub(y, t))
        return ad.total_sum(ad.mul(d, d))

    assert ad.grad_check(f, {"x": x, "kernel": kernel, "bias": bias},
                         h=1e-5, seed=0) < 1e-6


# ---------------------------------------------------------------------------
# complex batch normalization


def whiten_exact(x):
    """Test-side exact whitening so the batch has mean 0 and covariance I."""
    flat = x.reshape(-1)
    ri = np.stack([flat.real, flat.imag])
    ri = ri - ri.mean(axis=1, keepdims=True)
    cov = (ri @ ri.T) / ri.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    inv_sqrt = evecs @ np.diag(evals ** -0.5) @ evecs.T
    white = inv_sqrt @ ri
    return (white[0] + 1j * white[1]).reshape(x.shape)


def test_cbn_identity_whitening_passthrough():
    rng = np.random.default_rng(5)
    x = whiten_exact(crand(rng, 64, 1, 4, 4))
    bn = layers.ComplexBatchNorm(1)
    out = bn.apply(bn.init_params(), bn.init_state(), x, train=True)
    npt.assert_allclose(ad.value_of(out), x / np.sqrt(2), rtol=1e-4, atol=1e-5)


def test_cbn_whitens_any_batch():
    rng = np.random.default_rng(6)
    x = crand(rng, 256, 2, 1, 1) * np.array([2.0, 0.5]).reshape(1, 2, 1, 1) \
        + np.array([1 + 1j, -2j]).reshape(1, 2, 1, 1)
    bn = layers.ComplexBatchNorm(2)
    p = bn.init_params()
    p["gamma"] = np.zeros_like(p["gamma"])
    p["gamma"][:, 0, 0] = p["gamma"][:, 1, 1] = 1.0
    out = ad.value_of(bn.apply(p, bn.init_state(), x, train=True))
    for c in range(2):
        flat = out[:, c].reshape(-1)
        ri = np.stack([flat.real, flat.imag])
        ri = ri - ri.mean(axis=1, keepdims=True)
        cov = (ri @ ri.T) / ri.shape[1]
        npt.assert_allclose(cov, np.eye(2), atol=1e-4)
        assert abs(flat.mean()) < 1e-5


def test_cbn_constant_batch_outputs_beta():
    bn = layers.ComplexBatchNorm(1)
    p = bn.init_params()
    p["beta"] = np.array([0.3 - 0.7j], dtype=np.complex64)
    x = np.full((4, 1, 2, 2), 5 + 2j)
    out = ad.value_of(bn.apply(p, bn.init_state(), x, train=True))
    npt.assert_allclose(out, np.full_like(x, 0.3 - 0.7j), atol=1e-5)


def test_cbn_batch_one_rejected():
    bn = layers.ComplexBatchNorm(1)
    with pytest.raises(ContractError):
        bn.apply(bn.init_params(), bn.init_state(), np.zeros((1, 1, 2, 2), complex),
                 train=True)


def test_cbn_infer_uses_running_stats():
    rng = np.random.default_rng(7)
    bn = layers.ComplexBatchNorm(1)
    p = bn.init_params()
    state = bn.init_state()
    # seed running stats from a large batch, then check a fresh input is
    # normalized with those stats rather than its own
    x = crand(rng, 128, 1, 2, 2) * 3 + (1 - 2j)
    bn.apply(p, state, x, train=True, update_state=True)
    assert abs(state["mean"][0] - 0.1 * x.mean()) < 1e-5  # momentum 0.9 from a zero start
    probe = crand(rng, 2, 1, 2, 2)
    out_infer = ad.value_of(bn.apply(p, state, probe, train=False))
    out_again = ad.value_of(bn.apply(p, state, probe, train=False))
    npt.assert_array_equal(out_infer, out_again)
    out_train = ad.value_of(bn.apply(p, state, probe, train=True))
    assert not np.allclose(out_infer, out_train)


def test_cbn_grad_check():
    rng = np.random.default_rng(8)
    x = crand(rng, 4, 2, 3, 3)
    t = crand(rng, 4, 2, 3, 3)
    bn = layers.ComplexBatchNorm(2)
    base = bn.init_params()

    def f(p):
        y = bn.apply(p, bn.init_state(), p["x"], train=True)
        d = ad.magnitude(ad.sub(y, t))
        return ad.total_sum(ad.mul(d, d))

    params = {"x": x, "gamma": base["gamma"], "beta": base["beta"]}
    assert ad.grad_check(f, params, h=1e-5, seed=1) < 1e-4


# ---------------------------------------------------------------------------
# real batch norm, leaky relu, tanh output


def test_real_bn_normalizes():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((64, 3, 2, 2)) * 4 + 2
    bn = layers.RealBatchNorm(3)
    out = ad.value_of(bn.apply(bn.init_params(), bn.init_state(), x, train=True))
    npt.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
    npt.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-3)


def test_leaky_relu_values():
    x = np.array([[-2.0, 0.0, 3.0]])
    npt.assert_allclose(layers.leaky_relu(x, 0.2), [[-0.4, 0.0, 3.0]])


def test_tanh_out_values():
    assert ad.value_of(layers.tanh_out(np.zeros((1, 1, 1, 1), complex)))[0, 0, 0, 0] == 0
    big = ad.value_of(layers.tanh_out(np.full((1, 1, 1, 1), 100 + 0j)))[0, 0, 0, 0]
    assert big.real == pytest.approx(1.0, abs=1e-6) and big.imag == pytest.approx(0.0)
    v = ad.value_of(layers.tanh_out(np.full((1, 1, 1, 1), 0.5 - 0.5j)))[0, 0, 0, 0]
    assert v.real == pytest.approx(np.tanh(0.5)) and v.imag == pytest.approx(-np.tanh(0.5))


def test_tanh_out_grad_check():
    rng = np.random.default_rng(10)
    x = crand(rng, 2, 1, 3, 3)
    t = crand(rng, 2, 1, 3, 3)

    def f(p):
        y = layers.tanh_out(p["x"])
        return ad.total_sum(ad.magnitude(ad.sub(y, t)))

    assert ad.grad_check(f, {"x": x}, h=1e-5, seed=2) < 1e-5
