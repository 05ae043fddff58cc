"""Conditional Wasserstein-GAN training: n_disc critic updates with weight
clipping per generator update, Adam on per-real-component moments, inverse-time
learning-rate decay, CSV loss logging and ".cvck" checkpoints.

Everything a run does is determined by (TrainConfig, phantom set): batching,
noise draws and parameter init all derive from the config seed.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses
from . import models
from . import mri
from . import tensor as T
from . import wavelet as wv
from .errors import ContractError, TrainingDivergedError

LOG_COLUMNS = ("step", "L_GAN", "L_l1", "L_mSSIM", "L_wvt", "total", "d_loss")


@dataclass
class TrainConfig:
    image_size: int = 64
    batch_size: int = 4
    n_disc: int = 3
    clip: float = 0.05
    beta1: float = 0.5
    beta2: float = 0.999
    lr: float = 1e-4
    lr_decay: float = 1.39e-3
    epochs: int = 5
    max_steps: int = 0          # optional cap on generator updates; 0 = no cap
    seed: int = 0
    lambda_gan: float = 0.01
    lambda_l1: float = 20.0
    lambda_mssim: float = 1.0
    lambda_wavelet: float = 100.0
    activation: str = "pcss"
    mask_pattern: str = "gauss1d"
    mask_ratio: float = 0.3
    mask_seed: int = 0
    noise_mix: tuple = (0.7, 0.15, 0.15)  # fractions of clean / 10% / 20% noise
    gen_depth: int = 3
    gen_channels: int = 8
    gen_rrdb: int = 1
    gen_dense_blocks: int = 3
    gen_block_convs: int = 4
    gen_alpha: float = 0.2
    gen_reach: int = 3
    gen_kernel: int = 3
    disc_layers: int = 5
    disc_channels: int = 8
    wavelet_levels: int = 3
    wavelet_sigma2: float = 12.5
    ssim_window: int = 7
    ssim_stride: int = 4

    def generator_config(self) -> models.GeneratorConfig:
        return models.GeneratorConfig(
            depth=self.gen_depth, channels=self.gen_channels, reach=self.gen_reach,
            n_rrdb=self.gen_rrdb, dense_blocks=self.gen_dense_blocks,
            block_convs=self.gen_block_convs, alpha=self.gen_alpha,
            activation=self.activation, kernel=self.gen_kernel)

    def discriminator_config(self) -> models.DiscriminatorConfig:
        return models.DiscriminatorConfig(layers=self.disc_layers,
                                          channels=self.disc_channels)

    def loss_weights(self) -> losses.LossWeights:
        return losses.LossWeights(gan=self.lambda_gan, l1=self.lambda_l1,
                                  mssim=self.lambda_mssim, wavelet=self.lambda_wavelet)

    def ssim_config(self) -> losses.SSIMConfig:
        return losses.SSIMConfig(window=self.ssim_window, stride=self.ssim_stride)


def lr_schedule(lr0: float, decay: float, step: int) -> float:
    """Inverse-time decay per generator update: lr0 / (1 + decay * step)."""
    return lr0 / (1.0 + decay * step)


# ---------------------------------------------------------------------------
# config file: flat UTF-8 key=value lines, '#' comments


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for f_ in dataclasses.fields(cfg):
        value = getattr(cfg, f_.name)
        if isinstance(value, tuple):
            value = ",".join(repr(v) for v in value)
        lines.append(f"{f_.name}={value}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> TrainConfig:
    fields = {f_.name: f_ for f_ in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not eq:
            raise ContractError(f"config line {lineno}: expected key=value, got {raw!r}")
        if key not in fields:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        ftype = fields[key].type
        try:
            if key == "noise_mix":
                values[key] = tuple(float(v) for v in value.split(","))
            elif ftype == "int":
                values[key] = int(value)
            elif ftype == "float":
                values[key] = float(value)
            else:
                values[key] = value
        except ValueError as exc:
            raise ContractError(f"config line {lineno}: bad value for {key!r}: {exc}")
    cfg = TrainConfig(**values)
    if cfg.batch_size < 2:
        raise ContractError("config: batch_size must be >= 2 (batch norm requirement)")
    if cfg.n_disc < 1:
        raise ContractError("config: n_disc must be >= 1")
    if cfg.clip <= 0:
        raise ContractError("config: clip must be positive")
    if abs(sum(cfg.noise_mix) - 1.0) > 1e-6 or len(cfg.noise_mix) != 3:
        raise ContractError("config: noise_mix must be three fractions summing to 1")
    return cfg


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


# ---------------------------------------------------------------------------
# Adam with moments per real component (complex arrays seen as pairs)


def adam_step(param, grad, m, v, t, lr, beta1=0.5, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new_param, m, v).

    Complex parameters are updated through their float view so each real
    component keeps its own moment estimates.
    """
    new = np.array(param, copy=True)
    rdt = np.float32 if new.dtype in (np.complex64, np.float32) else np.float64
    pv = new.reshape(-1).view(rdt) if np.iscomplexobj(new) else new.reshape(-1)
    g = np.ascontiguousarray(grad)
    gv = g.reshape(-1).view(rdt) if np.iscomplexobj(g) else g.reshape(-1).astype(rdt, copy=False)
    m = beta1 * m + (1 - beta1) * gv
    v = beta2 * v + (1 - beta2) * gv * gv
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    pv -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(rdt, copy=False)
    return new, m, v


class Adam:
    def __init__(self, beta1=0.5, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            if k not in self.m:
                n = p.size * (2 if np.iscomplexobj(p) else 1)
                rdt = np.float32 if p.dtype in (np.complex64, np.float32) else np.float64
                self.m[k] = np.zeros(n, rdt)
                self.v[k] = np.zeros(n, rdt)
            out[k], self.m[k], self.v[k] = adam_step(
                p, grads[k], self.m[k], self.v[k], self.t, lr,
                self.beta1, self.beta2, self.eps)
        return out


def clip_params(params: dict, bound: float) -> dict:
    return {k: np.clip(v, -bound, bound) for k, v in params.items()}


# ---------------------------------------------------------------------------
# data pipeline: clean phantoms on disk, degradation on the fly


class _BatchStream:
    """Deterministic sample stream: epoch-shuffled indices plus per-sample
    noise levels drawn from a dedicated rng."""

    def __init__(self, images, batch_size, mask_grid, noise_mix, order_seed, noise_seed):
        self.images = images
        self.batch = batch_size
        self.grid = mask_grid
        self.mix = noise_mix
        self.order_rng = np.random.default_rng(order_seed)
        self.noise_rng = np.random.default_rng(noise_seed)
        self._queue: list = []
        self._clean_zfr = None
        if noise_mix[1] == 0.0 and noise_mix[2] == 0.0:
            self._clean_zfr = T.ifft2(mask_grid * T.fft2(images)).astype(images.dtype)

    def _refill(self):
        self._queue.extend(self.order_rng.permutation(len(self.images)).tolist())

    def next_batch(self):
        while len(self._queue) < self.batch:
            self._refill()
        idx = [self._queue.pop(0) for _ in range(self.batch)]
        x = self.images[idx]
        if self._clean_zfr is not None:
            return x, self._clean_zfr[idx]
        levels = self.noise_rng.choice([0.0, 10.0, 20.0], size=self.batch, p=self.mix)
        spectrum = T.fft2(x)
        scale = (levels / 100.0) * np.abs(spectrum).mean(axis=(1, 2, 3))
        noise = (self.noise_rng.standard_normal(x.shape)
                 + 1j * self.noise_rng.standard_normal(x.shape))
        y = self.grid * (spectrum + scale.reshape(-1, 1, 1, 1) * noise)
        xu = T.ifft2(y).astype(x.dtype)
        return x, xu


@dataclass
class TrainResult:
    gen_params: dict
    gen_state: dict
    disc_params: dict
    disc_state: dict
    log_rows: list
    checkpoint_path: str | None
    log_path: str | None
    config: TrainConfig
    steps: int


def _checkpoint_tensors(result_like) -> dict:
    gp, gs, dp, ds = result_like
    tensors = {}
    for k, v in gp.items():
        tensors[f"g:{k}"] = v
    for layer, sub in gs.items():
        for key, val in sub.items():
            tensors[f"gs:{layer}.{key}"] = val
    for k, v in dp.items():
        tensors[f"d:{k}"] = v
    for layer, sub in ds.items():
        for key, val in sub.items():
            tensors[f"ds:{layer}.{key}"] = val
    return tensors


def save_training_checkpoint(path, cfg: TrainConfig, gen_params, gen_state,
                             disc_params, disc_state) -> None:
    config = {f_.name: str(getattr(cfg, f_.name)) if not isinstance(getattr(cfg, f_.name), tuple)
              else ",".join(repr(x) for x in getattr(cfg, f_.name))
              for f_ in dataclasses.fields(cfg)}
    models.save_checkpoint(path, config,
                           _checkpoint_tensors((gen_params, gen_state,
                                                disc_params, disc_state)))


def load_training_checkpoint(path):
    config, tensors = models.load_checkpoint(path)
    cfg = parse_config("\n".join(f"{k}={v}" for k, v in config.items()))
    gp, dp = {}, {}
    gs_flat, ds_flat = {}, {}
    for name, arr in tensors.items():
        kind, _, rest = name.partition(":")
        {"g": gp, "gs": gs_flat, "d": dp, "ds": ds_flat}[kind][rest] = arr
    return cfg, gp, models._nest_states(gs_flat), dp, models._nest_states(ds_flat)


def _dump_batch(out_dir, step, x, xu):
    dump = os.path.join(out_dir, f"diagnostic_step_{step}")
    os.makedirs(dump, exist_ok=True)
    for i in range(x.shape[0]):
        T.save_cvt(os.path.join(dump, f"gt_{i}.cvt"), x[i, 0])
        T.save_cvt(os.path.join(dump, f"zfr_{i}.cvt"), xu[i, 0])
    return dump


def train(cfg: TrainConfig, phantoms, out_dir=None, callback=None) -> TrainResult:
    """Run the adversarial training loop over a list of phantoms (or complex
    arrays). Writes per-step CSV rows and a checkpoint per epoch when out_dir
    is given. `callback(step, row, context)` may return True to stop early.
    """
    if cfg.batch_size < 2:
        raise ContractError("train: batch_size must be >= 2")
    images = np.stack([p.image if isinstance(p, mri.Phantom) else np.asarray(p)
                       for p in phantoms]).astype(np.complex64)[:, None]
    size = images.shape[-1]
    if size != cfg.image_size:
        raise ContractError(f"train: config image_size {cfg.image_size} but data is {size}")

    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    gen = models.build_generator(cfg.generator_config())
    disc = models.build_discriminator(cfg.discriminator_config())
    gen_params = gen.init_params(np.random.default_rng(seeds[0]))
    gen_state = gen.init_state()
    disc_params = disc.init_params(np.random.default_rng(seeds[1]))
    disc_state = disc.init_state()

    mask = mri.make_mask(cfg.mask_pattern, cfg.mask_ratio, size, cfg.mask_seed)
    stream = _BatchStream(images, cfg.batch_size, mask.grid, cfg.noise_mix,
                          seeds[2], seeds[3])

    weights = cfg.loss_weights()
    ssim_cfg = cfg.ssim_config()
    subband = wv.gaussian_weights(4 ** cfg.wavelet_levels, cfg.wavelet_sigma2)
    adversarial = weights.gan != 0.0

    opt_g = Adam(cfg.beta1, cfg.beta2)
    opt_d = Adam(cfg.beta1, cfg.beta2)

    steps_per_epoch = max(1, math.ceil(len(images) / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    if cfg.max_steps:
        total_steps = min(total_steps, cfg.max_steps)

    ckpt_path = log_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "latest.cvck")
        log_path = os.path.join(out_dir, "log.csv")

    log_rows = []
    stopped = False
    for step in range(total_steps):
        lr_t = lr_schedule(cfg.lr, cfg.lr_decay, step)
        bx, bxu = stream.next_batch()  # one (x, x_u) batch drives the whole step

        # generator forward is traced once; its value feeds the critic updates
        # and the tape then carries the generator update against the sharpened
        # critic
        leaves = {k: ad.Node(v, name=k) for k, v in gen_params.items()}
        fake = gen.apply(leaves, gen_state, bxu, train=True, update_state=True)

        d_losses = []
        if adversarial:
            real_mag = np.abs(bx[:, 0])[:, None]
            fake_val = np.abs(ad.value_of(fake)[:, 0])[:, None]
            for _ in range(cfg.n_disc):
                def d_objective(p):
                    s_real = disc.apply(p, disc_state, real_mag, train=True,
                                        update_state=True)
                    s_fake = disc.apply(p, disc_state, fake_val, train=True)
                    d_loss, _ = losses.wasserstein_losses(s_real, s_fake)
                    return d_loss

                d_val, d_grads = ad.value_and_grad(d_objective, disc_params)
                disc_params = clip_params(opt_d.step(disc_params, d_grads, lr_t),
                                          cfg.clip)
                d_losses.append(d_val)

        scores = None
        if adversarial:
            fake_mag = ad.reshape(ad.magnitude(fake), (cfg.batch_size, 1, size, size))
            scores = disc.apply(disc_params, disc_state, fake_mag, train=True)
        terms = losses.composite_loss(fake, bx, scores, weights, ssim_cfg,
                                      subband, cfg.wavelet_levels)
        g_grads = ad.backward(terms["total"], wrt=gen_params)
        gen_params = opt_g.step(gen_params, g_grads, lr_t)

        row = {
            "step": step,
            "L_GAN": float(ad.value_of(terms["gan"])),
            "L_l1": float(ad.value_of(terms["l1"])),
            "L_mSSIM": float(ad.value_of(terms["mssim"])),
            "L_wvt": float(ad.value_of(terms["wavelet"])),
            "total": float(ad.value_of(terms["total"])),
            "d_loss": float(np.mean(d_losses)) if d_losses else 0.0,
        }
        log_rows.append(row)

        if not all(math.isfinite(v) for v in row.values()):
            dump = _dump_batch(out_dir, step, bx, bxu) if out_dir else "(no out dir)"
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: {row}; offending batch in {dump}")

        if out_dir is not None and (step + 1) % steps_per_epoch == 0:
            save_training_checkpoint(ckpt_path, cfg, gen_params, gen_state,
                                     disc_params, disc_state)
        if callback is not None:
            context = {"gen": gen, "disc": disc, "gen_params": gen_params,
                       "gen_state": gen_state, "disc_params": disc_params,
                       "disc_state": disc_state, "lr": lr_t, "mask": mask}
            if callback(step, row, context):
                stopped = True
        if stopped:
            break

    if out_dir is not None:
        save_training_checkpoint(ckpt_path, cfg, gen_params, gen_state,
                                 disc_params, disc_state)
        with open(log_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(LOG_COLUMNS)
            for row in log_rows:
                writer.writerow([row["step"]] + [f"{row[c]:.9g}" for c in LOG_COLUMNS[1:]])

    return TrainResult(gen_params=gen_params, gen_state=gen_state,
                       disc_params=disc_params, disc_state=disc_state,
                       log_rows=log_rows, checkpoint_path=ckpt_path,
                       log_path=log_path, config=cfg, steps=len(log_rows))


def reconstruct(source, x_u) -> np.ndarray:
    """Single inference-mode pass through a trained generator.

    source: a TrainResult or a checkpoint path; x_u: (K, K) complex zero-filled
    reconstruction. Deterministic given the checkpoint.
    """
    if isinstance(source, TrainResult):
        cfg, gp, gs = source.config, source.gen_params, source.gen_state
    else:
        cfg, gp, gs, _, _ = load_training_checkpoint(source)
    gen = models.build_generator(cfg.generator_config())
    x = np.asarray(x_u, dtype=np.complex64)
    single = x.ndim == 2
    if single:
        x = x[None, None]
    out = ad.value_of(gen.apply(gp, gs, x, train=False))
    return out[0, 0] if single else out
