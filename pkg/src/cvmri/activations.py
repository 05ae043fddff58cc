"""Complex activation functions: split-ReLU variants, phase-gated cardioid,
and the trainable sum-of-sinusoids gain family.

The trainable activations share their parameters across spatial positions of a
channel: weight arrays are (C, P) or (C,) and broadcast over (B, C, H, W).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

SS_TERMS = 3  # sinusoids per channel in the sum-of-sinusoids gain
SS_EPS = 1e-7  # denominator guard so an all-zero weight vector yields zero gain


def crelu(a):
    """ReLU on real and imaginary parts independently."""
    return ad.as_complex(ad.relu(ad.real(a)), ad.relu(ad.imag(a)))


def cprelu(a, params):
    """Quadrant-wise parametric ReLU: negative real/imag parts are scaled by the
    per-channel beta_r/beta_i instead of being zeroed."""
    av = ad.value_of(a)
    re, im = ad.real(a), ad.imag(a)
    pos_r = (av.real >= 0).astype(av.real.dtype)
    pos_i = (av.imag >= 0).astype(av.real.dtype)
    br = ad.reshape(params["beta_r"], (1, -1, 1, 1))
    bi = ad.reshape(params["beta_i"], (1, -1, 1, 1))
    gate_r = ad.add(pos_r, ad.mul(1.0 - pos_r, br))
    gate_i = ad.add(pos_i, ad.mul(1.0 - pos_i, bi))
    return ad.as_complex(ad.mul(re, gate_r), ad.mul(im, gate_i))


def zrelu(a):
    """Pass elements whose phase lies in [0, pi/2] (first quadrant, boundary
    inclusive), zero elsewhere."""
    av = ad.value_of(a)
    mask = ((av.real >= 0) & (av.imag >= 0)).astype(av.real.dtype)
    return ad.mul(a, mask)


def cardioid(a):
    """Phase-gated scaling (1 + cos(angle)) / 2 * a: gain 1 on the positive real
    axis, 0 on the negative real axis, 1/2 on the imaginary axis."""
    gain = ad.mul(0.5, ad.add(1.0, ad.cos(ad.phase(a))))
    return ad.mul(a, gain)


def _ss_gain(theta_a, params, magnitude_weights):
    """Sum-of-sinusoids gain over input phases theta_a (B, C, H, W).

    gain = sum_p w_p (1 + cos(2^p (theta - theta_p))) / (2 sum_p |w_p| + eps);
    with magnitude_weights=True the numerator uses |w_p| as well, which bounds
    the gain in [0, 1] instead of [-1, 1].
    """
    num = None
    den = None
    for p in range(SS_TERMS):
        w_p = ad.reshape(ad.pick(params["weights"], (slice(None), p)), (1, -1, 1, 1))
        t_p = ad.reshape(ad.pick(params["offsets"], (slice(None), p)), (1, -1, 1, 1))
        osc = ad.add(1.0, ad.cos(ad.mul(float(2 ** p), ad.sub(theta_a, t_p))))
        w_num = ad.magnitude(w_p) if magnitude_weights else w_p
        term = ad.mul(w_num, osc)
        num = term if num is None else ad.add(num, term)
        aw = ad.magnitude(w_p)
        den = aw if den is None else ad.add(den, aw)
    return ad.div(num, ad.add(ad.mul(2.0, den), SS_EPS))


def pcss(a, params, variant="pcss"):
    """Trainable phase-dependent gain times the input, optionally rotated.

    variant "pcss": signed weights (gain in [-1, 1]) plus a per-channel output
    rotation e^(i phi). "ppss": magnitude weights and no rotation, so phase is
    preserved (gain in [0, 1]). "tipss": signed weights, no rotation, so the
    real/imag ratio is preserved even when the gain flips sign.
    """
    if variant not in ("pcss", "ppss", "tipss"):
        raise ValueError(f"unknown variant {variant!r}")
    theta = ad.phase(a)
    gain = _ss_gain(theta, params, magnitude_weights=(variant == "ppss"))
    out = ad.mul(a, gain)
    if variant == "pcss":
        phi = ad.reshape(params["rotation"], (1, -1, 1, 1))
        out = ad.mul(out, ad.as_complex(ad.cos(phi), ad.sin(phi)))
    return out


def init_ss_params(channels, rdtype=np.float32):
    """Start every sum-of-sinusoids variant at the cardioid profile:
    w = (1, 0, 0), offsets 0, rotation 0."""
    weights = np.zeros((channels, SS_TERMS), dtype=rdtype)
    weights[:, 0] = 1.0
    return {"weights": weights,
            "offsets": np.zeros((channels, SS_TERMS), dtype=rdtype),
            "rotation": np.zeros(channels, dtype=rdtype)}


def init_cprelu_params(channels, rdtype=np.float32):
    return {"beta_r": np.full(channels, 0.25, dtype=rdtype),
            "beta_i": np.full(channels, 0.25, dtype=rdtype)}


class Activation:
    """Named activation with per-channel trainable parameters (possibly none)."""

    def __init__(self, name, channels):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name
        self.channels = channels

    def init_params(self, rdtype=np.float32):
        if self.name == "cprelu":
            return init_cprelu_params(self.channels, rdtype)
        if self.name in ("pcss", "ppss", "tipss"):
            return init_ss_params(self.channels, rdtype)
        return {}

    def apply(self, params, x):
        if self.name == "crelu":
            return crelu(x)
        if self.name == "cprelu":
            return cprelu(x, params)
        if self.name == "zrelu":
            return zrelu(x)
        if self.name == "cardioid":
            return cardioid(x)
        return pcss(x, params, variant=self.name)


ACTIVATIONS = ("crelu", "cprelu", "zrelu", "cardioid", "pcss", "ppss", "tipss")
