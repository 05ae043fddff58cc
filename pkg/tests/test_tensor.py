import numpy as np
import numpy.testing as npt
import pytest

from cvmri import tensor
from cvmri.errors import DimensionError, FormatError, UnsupportedSizeError


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


# ---------------------------------------------------------------------------
# elementwise algebra


def test_c_mul_expansion():
    npt.assert_allclose(tensor.c_mul(np.array([1 + 1j]), np.array([2 - 1j])),
                        np.array([3 + 1j]))


def test_add_identity():
    rng = np.random.default_rng(0)
    z = crand(rng, 5)
    npt.assert_array_equal(tensor.c_add(z, 0), z)


def test_mul_identity():
    rng = np.random.default_rng(1)
    z = crand(rng, 5)
    npt.assert_array_equal(tensor.c_mul(z, np.ones(5, dtype=complex)), z)


def test_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        tensor.c_add(np.zeros(3, complex), np.zeros(4, complex))
    with pytest.raises(DimensionError):
        tensor.c_mul(np.zeros((2, 2), complex), np.zeros((2, 3), complex))


def test_c_mul_assoc_comm():
    rng = np.random.default_rng(2)
    for _ in range(20):
        a, b, c = (crand(rng, 8) for _ in range(3))
        npt.assert_allclose(tensor.c_mul(tensor.c_mul(a, b), c),
                            tensor.c_mul(a, tensor.c_mul(b, c)), rtol=1e-5)
        npt.assert_allclose(tensor.c_mul(a, b), tensor.c_mul(b, a), rtol=1e-5)


def test_magnitude_phase_conj():
    assert tensor.magnitude(np.array(3 + 4j)) == pytest.approx(5.0)
    assert tensor.phase(np.array(1j)) == pytest.approx(np.pi / 2)
    assert tensor.phase(np.array(0j)) == 0.0
    # contract: phase lands in (-pi, pi], including for signed-zero imag parts
    assert tensor.phase(np.array(complex(-1.0, -0.0))) == pytest.approx(np.pi)
    rng = np.random.default_rng(3)
    z = crand(rng, 7)
    npt.assert_array_equal(tensor.conj(tensor.conj(z)), z)


# ---------------------------------------------------------------------------
# FFT


def test_fft2_roundtrip():
    rng = np.random.default_rng(4)
    a = crand(rng, 64, 64)
    npt.assert_allclose(tensor.ifft2(tensor.fft2(a)), a, rtol=1e-5, atol=1e-8)


def test_fft2_constant_dc_only():
    c = 0.7 - 0.2j
    a = np.full((4, 4), c)
    f = tensor.fft2(a)
    assert f[0, 0] == pytest.approx(c * 4)
    f[0, 0] = 0
    npt.assert_allclose(f, 0, atol=1e-12)


def test_fft2_delta_flat():
    a = np.zeros((8, 8), complex)
    a[0, 0] = 1.0
    npt.assert_allclose(tensor.fft2(a), np.full((8, 8), 1 / 8 + 0j), atol=1e-12)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 32, 64, 128])
def test_fft2_unitary(n):
    rng = np.random.default_rng(n)
    a = crand(rng, n, n)
    f = tensor.fft2(a)
    assert np.linalg.norm(f) == pytest.approx(np.linalg.norm(a), rel=1e-4)


def test_fft2_matches_numpy_oracle():
    rng = np.random.default_rng(5)
    a = crand(rng, 16, 32)
    npt.assert_allclose(tensor.fft2(a), np.fft.fft2(a, norm="ortho"),
                        rtol=1e-10, atol=1e-10)
    npt.assert_allclose(tensor.ifft2(a), np.fft.ifft2(a, norm="ortho"),
                        rtol=1e-10, atol=1e-10)


def test_fft2_rejects_non_power_of_two():
    with pytest.raises(UnsupportedSizeError):
        tensor.fft2(np.zeros((6, 8), complex))


def test_fft2_batched_and_float32():
    rng = np.random.default_rng(6)
    a = crand(rng, 3, 8, 8).astype(np.complex64)
    f = tensor.fft2(a)
    assert f.dtype == np.complex64
    npt.assert_allclose(f, np.fft.fft2(a, norm="ortho"), rtol=1e-4, atol=1e-5)


# ---------------------------------------------------------------------------
# pooling / upsampling / pad / crop


def test_avg_pool2_constant():
    c = 1.5 - 0.5j
    a = np.full((8, 8), c)
    npt.assert_allclose(tensor.avg_pool2(a, 2), np.full((4, 4), c), rtol=1e-6)


def test_upsample_constant():
    c = -0.25 + 2j
    a = np.full((4, 4), c)
    npt.assert_allclose(tensor.upsample_bilinear(a, 2), np.full((8, 8), c), rtol=1e-6)


def test_avg_pool2_block_mean_oracle():
    rng = np.random.default_rng(7)
    a = crand(rng, 8, 8)
    got = tensor.avg_pool2(a, 2)
    # independent oracle: direct 2x2 block mean
    want = np.empty((4, 4), complex)
    for i in range(4):
        for j in range(4):
            want[i, j] = a[2 * i:2 * i + 2, 2 * j:2 * j + 2].mean()
    npt.assert_allclose(got, want, atol=1e-6)


def test_pool_errors():
    with pytest.raises(DimensionError):
        tensor.avg_pool2(np.zeros((6, 6), complex), 4)
    with pytest.raises(DimensionError):
        tensor.avg_pool2(np.zeros((8, 8), complex), 3)


def test_upsample_linearity():
    rng = np.random.default_rng(8)
    a, b = crand(rng, 4, 4), crand(rng, 4, 4)
    npt.assert_allclose(tensor.upsample_bilinear(a + 2 * b, 2),
                        tensor.upsample_bilinear(a, 2) + 2 * tensor.upsample_bilinear(b, 2),
                        rtol=1e-6)


def test_pad_crop_roundtrip():
    rng = np.random.default_rng(9)
    a = crand(rng, 5, 6)
    p = tensor.pad_zero(a, 1, 2, 3, 4)
    assert p.shape == (8, 13)
    npt.assert_array_equal(tensor.crop(p, 1, 3, 5, 6), a)
    assert p[0].sum() == 0
    with pytest.raises(DimensionError):
        tensor.crop(a, 2, 0, 5, 6)


def test_finite_outputs():
    rng = np.random.default_rng(10)
    a = crand(rng, 16, 16)
    for out in (tensor.fft2(a), tensor.avg_pool2(a, 4), tensor.upsample_bilinear(a, 2),
                tensor.magnitude(a), tensor.phase(a)):
        assert np.isfinite(out).all()


# ---------------------------------------------------------------------------
# .cvt file format


def test_cvt_roundtrip_complex(tmp_path):
    rng = np.random.default_rng(11)
    a = crand(rng, 3, 4, 5).astype(np.complex64)
    path = tmp_path / "t.cvt"
    tensor.save_cvt(path, a)
    npt.assert_array_equal(tensor.load_cvt(path), a)


def test_cvt_roundtrip_real(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(3, 4)
    path = tmp_path / "t.cvt"
    tensor.save_cvt(path, a)
    back = tensor.load_cvt(path)
    assert back.dtype == np.float32
    npt.assert_array_equal(back, a)


def test_cvt_header_layout(tmp_path):
    path = tmp_path / "t.cvt"
    tensor.save_cvt(path, np.zeros((2, 3), np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"CVT1"
    assert raw[4] == 0 and raw[5] == 2
    assert raw[6:14] == (2).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert len(raw) == 14 + 6 * 4


def test_cvt_bad_magic(tmp_path):
    path = tmp_path / "bad.cvt"
    path.write_bytes(b"NOPE" + bytes(10))
    with pytest.raises(FormatError):
        tensor.load_cvt(path)
