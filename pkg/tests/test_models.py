import numpy as np
import numpy.testing as npt
import pytest

from cvmri import autodiff as ad
from cvmri import losses
from cvmri import models
from cvmri import wavelet as wv
from cvmri.errors import DimensionError


def crand(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)


def fresh_generator(depth=3, channels=8, activation="pcss", seed=0, **kw):
    cfg = models.GeneratorConfig(depth=depth, channels=channels,
                                 activation=activation, **kw)
    gen = models.build_generator(cfg)
    rng = np.random.default_rng(seed)
    return gen, gen.init_params(rng), gen.init_state()


# ---------------------------------------------------------------------------
# generator


@pytest.mark.parametrize("size", [32, 64])
def test_generator_shape_contract(size):
    gen, params, state = fresh_generator()
    x = crand(np.random.default_rng(1), 2, 1, size, size)
    out = ad.value_of(gen.apply(params, state, x, train=True))
    assert out.shape == x.shape


@pytest.mark.parametrize("depth", [2, 3])
@pytest.mark.parametrize("channels", [4, 8])
def test_generator_shape_matrix(depth, channels):
    gen, params, state = fresh_generator(depth=depth, channels=channels)
    x = crand(np.random.default_rng(2), 2, 1, 32, 32)
    out = ad.value_of(gen.apply(params, state, x, train=True))
    assert out.shape == x.shape


def test_generator_rejects_indivisible_size():
    gen, params, state = fresh_generator(depth=3)
    with pytest.raises(DimensionError):
        gen.apply(params, state, np.zeros((2, 1, 20, 20), np.complex64), train=True)


def test_param_count_decreases_when_channels_halve():
    _, p8, _ = fresh_generator(channels=8)
    _, p4, _ = fresh_generator(channels=4)
    assert models.param_count(p4) < models.param_count(p8)


def test_generator_zero_input_finite():
    gen, params, state = fresh_generator()
    x = np.zeros((2, 1, 32, 32), np.complex64)
    out = ad.value_of(gen.apply(params, state, x, train=True))
    assert np.isfinite(out.view(np.float32)).all()


def test_generator_output_bounded_by_tanh():
    gen, params, state = fresh_generator(seed=3)
    x = 5 * crand(np.random.default_rng(4), 2, 1, 32, 32)
    out = ad.value_of(gen.apply(params, state, x, train=True))
    assert np.abs(out.real).max() < 1.0
    assert np.abs(out.imag).max() < 1.0


def test_generator_inference_deterministic():
    gen, params, state = fresh_generator()
    x = crand(np.random.default_rng(5), 1, 1, 32, 32)
    a = ad.value_of(gen.apply(params, state, x, train=False))
    b = ad.value_of(gen.apply(params, state, x, train=False))
    npt.assert_array_equal(a, b)


def test_full_loss_on_tiny_phantom_is_finite():
    # smoke check: the whole training objective evaluates to a finite scalar
    # on an 8x8 phantom batch
    from cvmri import mri
    gen, params, state = fresh_generator(seed=12)
    ph = mri.make_phantoms(2, 8, seed=0)
    gt = np.stack([p.image for p in ph])[:, None]
    mask = mri.make_mask("gauss1d", 0.5, 8, seed=0)
    xu = mri.zfr(mri.acquire(gt, mask, 0.0), mask).astype(np.complex64)
    out = gen.apply(params, state, xu, train=True)
    terms = losses.composite_loss(out, gt, None, losses.LossWeights(gan=0.0),
                                  losses.SSIMConfig(), wv.gaussian_weights(64, 12.5), 3)
    val = float(ad.value_of(terms["total"]))
    assert np.isfinite(val)


def test_gradient_coverage_over_99_percent():
    gen, params, state = fresh_generator(depth=2, channels=4, seed=6)
    rng = np.random.default_rng(7)
    # random working point: nudge activation params off their structured init
    for k in list(params):
        if k.endswith((".weights", ".offsets", ".rotation")):
            params[k] = params[k] + rng.normal(0, 0.2, params[k].shape).astype(params[k].dtype)
    x = crand(rng, 2, 1, 16, 16)
    gt = crand(rng, 2, 1, 16, 16) * 0.3
    sw = wv.gaussian_weights(16, 12.5)

    def f(p):
        out = gen.apply(p, gen.init_state(), x, train=True)
        terms = losses.composite_loss(out, gt, None, losses.LossWeights(gan=0.0),
                                      losses.SSIMConfig(), sw, wavelet_levels=2)
        return terms["total"]

    _, grads = ad.value_and_grad(f, params)
    total = sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in params.values())
    nonzero = 0
    for k, v in params.items():
        g = grads[k]
        if np.iscomplexobj(v):
            nonzero += np.count_nonzero(g.real) + np.count_nonzero(g.imag)
        else:
            nonzero += np.count_nonzero(g)
    assert nonzero / total >= 0.99


# ---------------------------------------------------------------------------
# RRDB


def zeroed(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def test_rrdb_zero_weights_is_identity():
    block = models.RRDB(channels=4, dense_blocks=3, block_convs=4, alpha=0.2,
                        activation="crelu", kernel=3)
    params = zeroed(block.init_params(np.random.default_rng(0), np.complex64))
    x = crand(np.random.default_rng(1), 2, 4, 8, 8)
    npt.assert_allclose(ad.value_of(models.rrdb_forward(x, params, block)), x, atol=1e-7)


def test_rrdb_alpha_zero_is_identity():
    block = models.RRDB(channels=4, dense_blocks=2, block_convs=3, alpha=0.0,
                        activation="pcss", kernel=3)
    params = block.init_params(np.random.default_rng(2), np.complex64)
    x = crand(np.random.default_rng(3), 1, 4, 8, 8)
    npt.assert_allclose(ad.value_of(models.rrdb_forward(x, params, block)), x, atol=1e-6)


def test_rrdb_hand_unrolled_single_pixel():
    # 1 channel, 1 dense block of 2 convs, 1x1 spatial: only center taps act
    alpha = 0.2
    block = models.RRDB(channels=1, dense_blocks=1, block_convs=2, alpha=alpha,
                        activation="crelu", kernel=3)
    rng = np.random.default_rng(4)
    params = block.init_params(rng, np.complex64)
    x = np.array(0.7 - 0.4j, np.complex64).reshape(1, 1, 1, 1)

    w1 = params["db1.conv1.kernel"][0, 0, 1, 1]
    b1 = params["db1.conv1.bias"][0]
    wf0 = params["db1.fuse.kernel"][0, 0, 1, 1]
    wf1 = params["db1.fuse.kernel"][0, 1, 1, 1]
    bf = params["db1.fuse.bias"][0]

    z = w1 * complex(x[0, 0, 0, 0]) + b1
    a1 = max(z.real, 0) + 1j * max(z.imag, 0)
    fusion = wf0 * complex(x[0, 0, 0, 0]) + wf1 * a1 + bf
    inner = complex(x[0, 0, 0, 0]) + alpha * fusion
    want = complex(x[0, 0, 0, 0]) + alpha * (inner - complex(x[0, 0, 0, 0]))

    got = ad.value_of(models.rrdb_forward(x, params, block))[0, 0, 0, 0]
    assert got == pytest.approx(want, rel=1e-5)


# ---------------------------------------------------------------------------
# discriminator


def fresh_discriminator(seed=0, **kw):
    cfg = models.DiscriminatorConfig(**kw)
    disc = models.build_discriminator(cfg)
    rng = np.random.default_rng(seed)
    return disc, disc.init_params(rng), disc.init_state()


@pytest.mark.parametrize("size", [64, 96])
def test_discriminator_accepts_multiple_sizes(size):
    disc, params, state = fresh_discriminator()
    x = np.random.default_rng(1).uniform(0, 1, (2, 1, size, size)).astype(np.float32)
    scores = ad.value_of(disc.apply(params, state, x, train=True))
    assert scores.shape == (2,)
    assert np.isfinite(scores).all()


def test_discriminator_constant_degenerate_net():
    disc, params, state = fresh_discriminator()
    params = {k: np.zeros_like(v) for k, v in params.items()}
    for k in params:
        if k.endswith("bn.gamma"):
            params[k] = np.ones_like(params[k])
    params["head.bias"] = np.array([0.37], np.float32)
    x = np.random.default_rng(2).uniform(0, 1, (2, 1, 32, 32)).astype(np.float32)
    scores = ad.value_of(disc.apply(params, state, x, train=True))
    npt.assert_allclose(scores, 0.37, atol=1e-6)


def test_discriminator_sensitive_to_contrast():
    disc, params, state = fresh_discriminator(seed=3)
    x = np.random.default_rng(4).uniform(0, 1, (2, 1, 32, 32)).astype(np.float32)
    s1 = ad.value_of(disc.apply(params, state, x, train=True))
    s2 = ad.value_of(disc.apply(params, state, 2 * x, train=True))
    assert not np.allclose(s1, s2)


def test_discriminator_grad_check():
    disc, params, state = fresh_discriminator(seed=5)

    def f(p):
        scores = disc.apply(p, disc.init_state(), p["x"], train=True)
        return ad.mean(scores)

    # a draw whose leaky-relu pre-activations land within h of zero spoils the
    # finite differences; such draws are rejected and resampled
    errs = []
    for input_seed in range(6, 14):
        x = np.random.default_rng(input_seed).uniform(0.1, 1, (2, 1, 16, 16))
        check = dict(params)
        check["x"] = x
        errs.append(ad.grad_check(f, check, h=1e-5, seed=0, max_components=300))
        if errs[-1] < 1e-4:
            break
    assert min(errs) < 1e-4


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_roundtrip(tmp_path):
    gen, params, state = fresh_generator(depth=2, channels=4)
    config = {"gen_depth": "2", "gen_channels": "4", "note": "unit test"}
    tensors = dict(params)
    for layer, sub in state.items():
        for key, val in sub.items():
            tensors[f"state:{layer}.{key}"] = val
    path = tmp_path / "model.cvck"
    models.save_checkpoint(path, config, tensors)
    config2, tensors2 = models.load_checkpoint(path)
    assert config2 == config
    assert set(tensors2) == set(tensors)
    for k, v in tensors.items():
        assert tensors2[k].dtype == v.dtype
        npt.assert_array_equal(tensors2[k], v)


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.cvck"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(Exception):
        models.load_checkpoint(path)


def test_every_param_appears_once_in_checkpoint(tmp_path):
    gen, params, state = fresh_generator(depth=2, channels=4)
    path = tmp_path / "model.cvck"
    models.save_checkpoint(path, {}, params)
    _, tensors = models.load_checkpoint(path)
    assert sorted(tensors) == sorted(params)
