"""Training losses (adversarial, pixel, structural, wavelet) and evaluation
metrics (PSNR, mean SSIM, phase RMSE).

All loss functions accept autodiff Nodes for the generated side and plain
arrays for the ground truth; each returns a real scalar (Node when traced).
Magnitude-domain losses expect inputs normalized to [0, 1]; `normalize_pair`
applies the shared per-image rule (divide both magnitudes by the ground-truth
max).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import wavelet as wv
from .errors import DimensionError


@dataclass
class SSIMConfig:
    window: int = 7
    stride: int = 4
    eps1: float = 1e-4  # (0.01)^2 on unit dynamic range
    eps2: float = 9e-4  # (0.03)^2 on unit dynamic range


@dataclass
class LossWeights:
    gan: float = 0.01
    l1: float = 20.0
    mssim: float = 1.0
    wavelet: float = 100.0


def l1_loss(gen, gt):
    """Mean absolute complex error: E |gen - gt| over batch and pixels."""
    if ad.value_of(gen).shape != np.shape(gt):
        raise DimensionError(
            f"l1_loss: {ad.value_of(gen).shape} vs {np.shape(gt)}")
    return ad.mean(ad.magnitude(ad.sub(gen, gt)))


def ssim(m, n, cfg: SSIMConfig = SSIMConfig()):
    """Similarity of two equal-size patches: luminance and contrast/structure
    terms with population moments and the configured slack constants."""
    if ad.value_of(m).shape != ad.value_of(n).shape:
        raise DimensionError("ssim: patch shapes differ")
    mu_m, mu_n = ad.mean(m), ad.mean(n)
    var_m = ad.sub(ad.mean(ad.mul(m, m)), ad.mul(mu_m, mu_m))
    var_n = ad.sub(ad.mean(ad.mul(n, n)), ad.mul(mu_n, mu_n))
    cov = ad.sub(ad.mean(ad.mul(m, n)), ad.mul(mu_m, mu_n))
    lum = ad.div(ad.add(ad.mul(2.0, ad.mul(mu_m, mu_n)), cfg.eps1),
                 ad.add(ad.add(ad.mul(mu_m, mu_m), ad.mul(mu_n, mu_n)), cfg.eps1))
    st = ad.div(ad.add(ad.mul(2.0, cov), cfg.eps2),
                ad.add(ad.add(var_m, var_n), cfg.eps2))
    return ad.mul(lum, st)


def _patch_moments(x, cfg):
    patches = ad.unfold(x, cfg.window, cfg.stride)  # (B, P, window^2)
    mu = ad.mean(patches, axis=2)
    ex2 = ad.mean(ad.mul(patches, patches), axis=2)
    return patches, mu, ex2


def mssim_map(gen_mag, gt_mag, cfg: SSIMConfig = SSIMConfig()):
    """Per-patch SSIM values, shape (B, P)."""
    gp, g_mu, g_ex2 = _patch_moments(gen_mag, cfg)
    tp, t_mu, t_ex2 = _patch_moments(gt_mag, cfg)
    var_g = ad.sub(g_ex2, ad.mul(g_mu, g_mu))
    var_t = ad.sub(t_ex2, ad.mul(t_mu, t_mu))
    cov = ad.sub(ad.mean(ad.mul(gp, tp), axis=2), ad.mul(g_mu, t_mu))
    lum = ad.div(ad.add(ad.mul(2.0, ad.mul(g_mu, t_mu)), cfg.eps1),
                 ad.add(ad.add(ad.mul(g_mu, g_mu), ad.mul(t_mu, t_mu)), cfg.eps1))
    st = ad.div(ad.add(ad.mul(2.0, cov), cfg.eps2),
                ad.add(ad.add(var_g, var_t), cfg.eps2))
    return ad.mul(lum, st)


def mssim_loss(gen_mag, gt_mag, cfg: SSIMConfig = SSIMConfig()):
    """1 - mean patch-wise SSIM over a (B, H, W) magnitude pair in [0, 1]."""
    return ad.sub(1.0, ad.mean(mssim_map(gen_mag, gt_mag, cfg)))


def wavelet_loss(gen_mag, gt_mag, weights: wv.SubbandWeights, levels: int = 3):
    """Weighted mean absolute subband difference,
    sum_p gamma_p sum_ij |C_gen^p - C_gt^p| / (P K_w^2), averaged over batch."""
    gen_packet = wv.wpt(gen_mag, levels)
    gt_packet = wv.wpt(ad.value_of(gt_mag), levels)
    order = wv.sequency_linear_indices(levels)
    batch = ad.value_of(gen_mag).shape[0]
    kw2 = ad.value_of(gt_packet.subbands[0]).shape[-2:]
    scale = 1.0 / (weights.count * kw2[0] * kw2[1] * batch)
    total = None
    for leaf in range(gen_packet.count):
        gamma = float(weights.values[order[leaf]])
        diff = ad.total_sum(ad.magnitude(
            ad.sub(gen_packet.subbands[leaf], gt_packet.subbands[leaf])))
        term = ad.mul(gamma * scale, diff)
        total = term if total is None else ad.add(total, term)
    return total


def wasserstein_losses(d_real, d_fake):
    """Critic and generator objectives from per-image scores:
    d_loss = -(E[D(real)] - E[D(fake)]), g_loss = -E[D(fake)]."""
    d_loss = ad.neg(ad.sub(ad.mean(d_real), ad.mean(d_fake)))
    g_loss = ad.neg(ad.mean(d_fake))
    return d_loss, g_loss


def normalize_pair(gen_mag, gt_mag):
    """Scale both magnitudes by the per-image ground-truth max (shape (B,H,W))."""
    gt = np.asarray(gt_mag)
    peak = gt.reshape(gt.shape[0], -1).max(axis=1)
    peak = np.maximum(peak, 1e-12).reshape(-1, 1, 1)
    return ad.div(gen_mag, peak), gt / peak


def psnr(gen_mag, gt_mag, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE) in dB; math.inf when the images are identical."""
    g = np.asarray(ad.value_of(gen_mag), dtype=np.float64)
    t = np.asarray(gt_mag, dtype=np.float64)
    if g.shape != t.shape:
        raise DimensionError(f"psnr: {g.shape} vs {t.shape}")
    mse = float(np.mean((g - t) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def phase_rmse(gen, gt, floor: float = 0.05) -> float:
    """RMS wrapped phase difference over pixels with |gt| above floor * max|gt|."""
    g = np.asarray(ad.value_of(gen))
    t = np.asarray(gt)
    if g.shape != t.shape:
        raise DimensionError(f"phase_rmse: {g.shape} vs {t.shape}")
    mag = np.abs(t)
    mask = mag > floor * mag.max()
    if not mask.any():
        return 0.0
    diff = np.angle(g[mask]) - np.angle(t[mask])
    diff = np.mod(diff + np.pi, 2 * np.pi) - np.pi
    return float(np.sqrt(np.mean(diff ** 2)))


def evaluate_pair(rec, gt, cfg: SSIMConfig = SSIMConfig()) -> dict:
    """Reconstruction metrics for one complex image pair: magnitude PSNR and
    mean patch SSIM on a shared [0, 1] normalization, plus phase RMSE.

    The normalizer is the max magnitude over both images, so swapping the
    arguments leaves PSNR unchanged (MSE is symmetric)."""
    rec = np.asarray(rec)
    gt = np.asarray(gt)
    rec_mag = np.abs(rec)[None]
    gt_mag = np.abs(gt)[None]
    peak = max(float(rec_mag.max()), float(gt_mag.max()), 1e-12)
    rec_n = rec_mag / peak
    gt_n = gt_mag / peak
    mean_ssim = float(ad.value_of(ad.mean(mssim_map(rec_n, gt_n, cfg))))
    return {
        "psnr_db": psnr(rec_n, gt_n, peak=1.0),
        "mssim": mean_ssim,
        "phase_rmse": phase_rmse(rec, gt),
    }


def composite_loss(gen, gt, d_fake_scores, weights: LossWeights,
                   ssim_cfg: SSIMConfig, subband_weights: wv.SubbandWeights,
                   wavelet_levels: int = 3):
    """All generator loss terms plus their weighted total.

    gen/gt are (B, 1, K, K) complex; d_fake_scores are per-image critic scores
    of |gen| (or None when the adversarial weight is 0). Returns a dict with
    Nodes under keys gan, l1, mssim, wavelet, total.
    """
    gv = ad.value_of(gen)
    b, _, h, w = gv.shape
    gen_mag = ad.reshape(ad.magnitude(gen), (b, h, w))
    gt_mag = np.abs(np.asarray(gt)).reshape(b, h, w)
    gen_n, gt_n = normalize_pair(gen_mag, gt_mag)

    terms = {
        "l1": l1_loss(gen, gt),
        "mssim": mssim_loss(gen_n, gt_n, ssim_cfg),
        "wavelet": wavelet_loss(gen_n, gt_n, subband_weights, wavelet_levels),
    }
    if d_fake_scores is not None:
        terms["gan"] = ad.neg(ad.mean(d_fake_scores))
    else:
        terms["gan"] = 0.0
    total = ad.add(ad.add(ad.mul(weights.gan, terms["gan"]),
                          ad.mul(weights.l1, terms["l1"])),
                   ad.add(ad.mul(weights.mssim, terms["mssim"]),
                          ad.mul(weights.wavelet, terms["wavelet"])))
    terms["total"] = total
    return terms
