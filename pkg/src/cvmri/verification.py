"""Gradient verification tables: every layer type and every loss checked
against central finite differences in 64-bit, plus a whole-generator check.

Used by the `gradcheck` CLI subcommand for first-run confidence and by the
acceptance suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import activations as act
from . import autodiff as ad
from . import layers as L
from . import losses
from . import models
from . import wavelet as wv

LAYER_TOL = 1e-4
GENERATOR_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tolerance


def _crand(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _away_from_axes(z, margin=5e-3):
    """Shift components off the ReLU-family kink lines."""
    z = np.array(z)
    z.real[np.abs(z.real) < margin] += 2 * margin
    z.imag[np.abs(z.imag) < margin] += 2 * margin
    return z


def _sq_err(y, t):
    d = ad.magnitude(ad.sub(y, t))
    return ad.total_sum(ad.mul(d, d))


def layer_checks(seed: int = 0) -> list:
    """(name, fn, params, tolerance) for every layer type and loss term."""
    rng = np.random.default_rng(seed)
    checks = []

    x = _crand(rng, 2, 2, 6, 6)
    t = _crand(rng, 2, 3, 3, 3)
    kernel = _crand(rng, 3, 2, 3, 3)
    bias = _crand(rng, 3)
    checks.append(("complex_conv", lambda p: _sq_err(
        ad.conv2d(p["x"], p["kernel"], p["bias"], stride=2), t),
        {"x": x, "kernel": kernel, "bias": bias}, LAYER_TOL))

    bn = L.ComplexBatchNorm(2)
    bn_p = bn.init_params()
    xb = _crand(rng, 4, 2, 4, 4)
    tb = _crand(rng, 4, 2, 4, 4)
    checks.append(("complex_batch_norm", lambda p: _sq_err(
        bn.apply(p, bn.init_state(), p["x"], train=True), tb),
        {"x": xb, "gamma": bn_p["gamma"], "beta": bn_p["beta"]}, LAYER_TOL))

    xa = _away_from_axes(_crand(rng, 2, 2, 4, 4))
    ta = _crand(rng, 2, 2, 4, 4)
    checks.append(("crelu", lambda p: _sq_err(act.crelu(p["x"]), ta),
                   {"x": xa}, LAYER_TOL))
    checks.append(("zrelu", lambda p: _sq_err(act.zrelu(p["x"]), ta),
                   {"x": xa}, LAYER_TOL))
    checks.append(("cprelu", lambda p: _sq_err(act.cprelu(p["x"], p), ta),
                   {"x": xa, "beta_r": rng.uniform(0.1, 0.5, 2),
                    "beta_i": rng.uniform(0.1, 0.5, 2)}, LAYER_TOL))
    checks.append(("cardioid", lambda p: _sq_err(act.cardioid(p["x"]), ta),
                   {"x": xa}, LAYER_TOL))
    ss = {"weights": rng.uniform(0.2, 1.0, (2, 3)),
          "offsets": rng.uniform(-1, 1, (2, 3)),
          "rotation": rng.uniform(-1, 1, 2)}
    for variant in ("pcss", "ppss", "tipss"):
        checks.append((variant, (lambda v: lambda p: _sq_err(
            act.pcss(p["x"], p, variant=v), ta))(variant),
            {"x": xa, **ss}, LAYER_TOL))

    checks.append(("tanh_out", lambda p: _sq_err(L.tanh_out(p["x"]), ta),
                   {"x": xa}, LAYER_TOL))

    xp = _crand(rng, 1, 1, 8, 8)
    tp = _crand(rng, 1, 1, 8, 8)
    checks.append(("pool_upsample", lambda p: _sq_err(
        ad.upsample_bilinear(ad.avg_pool2(p["x"], 2), 2), tp),
        {"x": xp}, LAYER_TOL))

    gen_img = _crand(rng, 2, 1, 16, 16) * 0.3
    gt_img = _crand(rng, 2, 1, 16, 16) * 0.3
    gt_mag = np.abs(gt_img).reshape(2, 16, 16)
    sw = wv.gaussian_weights(16, 12.5)
    cfg = losses.SSIMConfig()
    checks.append(("loss_l1", lambda p: losses.l1_loss(p["gen"], gt_img),
                   {"gen": gen_img}, LAYER_TOL))
    checks.append(("loss_mssim", lambda p: losses.mssim_loss(
        ad.reshape(ad.magnitude(p["gen"]), (2, 16, 16)), gt_mag, cfg),
        {"gen": gen_img}, LAYER_TOL))
    checks.append(("loss_wavelet", lambda p: losses.wavelet_loss(
        ad.reshape(ad.magnitude(p["gen"]), (2, 16, 16)), gt_mag, sw, 2),
        {"gen": gen_img}, LAYER_TOL))
    checks.append(("loss_composite", lambda p: losses.composite_loss(
        p["gen"], gt_img, None, losses.LossWeights(gan=0.0), cfg, sw, 2)["total"],
        {"gen": gen_img}, LAYER_TOL))
    return checks


def generator_check(seed: int = 0, size: int = 32,
                    max_components: int = 120) -> CheckResult:
    """Finite-difference check of the full desk generator under the content
    composite loss (adversarial weight 0), sampled components only."""
    cfg = models.GeneratorConfig(depth=3, channels=8, n_rrdb=1, activation="pcss")
    gen = models.build_generator(cfg)
    rng = np.random.default_rng(seed)
    params = gen.init_params(rng, dtype=np.complex128)
    for k in list(params):
        if k.endswith((".weights", ".offsets", ".rotation")):
            params[k] = params[k] + rng.normal(0, 0.1, params[k].shape)
    x = _crand(rng, 2, 1, size, size) * 0.5
    gt = _crand(rng, 2, 1, size, size) * 0.5
    sw = wv.gaussian_weights(4 ** 3, 12.5)

    def f(p):
        out = gen.apply(p, gen.init_state(dtype=np.complex128), x, train=True)
        return losses.composite_loss(out, gt, None, losses.LossWeights(gan=0.0),
                                     losses.SSIMConfig(), sw, 3)["total"]

    err = ad.grad_check(f, params, h=1e-5, seed=seed, max_components=max_components)
    return CheckResult("full_generator", err, GENERATOR_TOL)


def run_all(include_generator: bool = True, seed: int = 0) -> list[CheckResult]:
    results = []
    for name, fn, params, tol in layer_checks(seed):
        results.append(CheckResult(name, ad.grad_check(fn, params, h=1e-5, seed=seed),
                                   tol))
    if include_generator:
        results.append(generator_check(seed))
    return results
