"""Network layers: complex convolution, complex/real batch normalization,
leaky ReLU and the bounded tanh output stage.

Layers are lightweight stateless descriptors: `init_params` returns plain numpy
arrays keyed by short names, and `apply` consumes either those arrays (pure
evaluation) or autodiff Nodes (training). Batch-norm running statistics live in
a separate state dict that only the training loop mutates.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ContractError

CBN_EPS = 1e-5
BN_EPS = 1e-5


def glorot_rayleigh_kernel(rng, out_ch, in_ch, k, dtype=np.complex64):
    """Complex kernel init: Rayleigh magnitudes at glorot scale, uniform phases."""
    sigma = 1.0 / np.sqrt(in_ch * k * k + out_ch * k * k)
    mag = rng.rayleigh(scale=sigma, size=(out_ch, in_ch, k, k))
    ang = rng.uniform(-np.pi, np.pi, size=(out_ch, in_ch, k, k))
    return (mag * np.exp(1j * ang)).astype(dtype)


def glorot_uniform_kernel(rng, out_ch, in_ch, k, dtype=np.float32):
    limit = np.sqrt(6.0 / (in_ch * k * k + out_ch * k * k))
    return rng.uniform(-limit, limit, size=(out_ch, in_ch, k, k)).astype(dtype)


class ComplexConv2D:
    """Complex cross-correlation with "same" zero padding, stride 1 or 2.

    The complex product is carried out as the four real convolutions
    A_R = W_R*F_R - W_I*F_I, A_I = W_R*F_I + W_I*F_R via complex matmul.
    """

    def __init__(self, in_ch, out_ch, kernel=3, stride=1):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride

    def init_params(self, rng, dtype=np.complex64):
        return {
            "kernel": glorot_rayleigh_kernel(rng, self.out_ch, self.in_ch, self.kernel, dtype),
            "bias": np.zeros(self.out_ch, dtype=dtype),
        }

    def apply(self, p, x):
        return ad.conv2d(x, p["kernel"], p["bias"], stride=self.stride)


class RealConv2D:
    def __init__(self, in_ch, out_ch, kernel=3, stride=1):
        self.in_ch = in_ch
        self.out_ch = out_ch
        self.kernel = kernel
        self.stride = stride

    def init_params(self, rng, dtype=np.float32):
        return {
            "kernel": glorot_uniform_kernel(rng, self.out_ch, self.in_ch, self.kernel, dtype),
            "bias": np.zeros(self.out_ch, dtype=dtype),
        }

    def apply(self, p, x):
        return ad.conv2d(x, p["kernel"], p["bias"], stride=self.stride)


def _bcast_c(v):
    """(C,) channel vector -> (1, C, 1, 1) for broadcasting over (B, C, H, W)."""
    return ad.reshape(v, (1, -1, 1, 1))


class ComplexBatchNorm:
    """Joint whitening of real/imag parts with a per-channel 2x2 covariance.

    Train mode whitens with the analytic inverse square root of the batch
    covariance plus CBN_EPS on the diagonal, then applies the learnable 2x2
    gamma and complex beta. Inference mode uses running statistics
    (momentum 0.9). gamma starts at I/sqrt(2), beta at 0.
    """

    momentum = 0.9

    def __init__(self, channels):
        self.channels = channels

    def init_params(self, rng=None, dtype=np.complex64):
        rdt = np.float32 if dtype == np.complex64 else np.float64
        gamma = np.zeros((self.channels, 2, 2), dtype=rdt)
        gamma[:, 0, 0] = gamma[:, 1, 1] = 1.0 / np.sqrt(2.0)
        return {"gamma": gamma, "beta": np.zeros(self.channels, dtype=dtype)}

    def init_state(self, dtype=np.complex64):
        rdt = np.float32 if dtype == np.complex64 else np.float64
        cov = np.zeros((self.channels, 2, 2), dtype=rdt)
        cov[:, 0, 0] = cov[:, 1, 1] = 1.0 / np.sqrt(2.0)
        return {"mean": np.zeros(self.channels, dtype=dtype), "cov": cov}

    @staticmethod
    def _inv_sqrt_2x2(b_rr, b_ri, b_ii):
        """Entries of (B)^(-1/2) for SPD 2x2 [[b_rr, b_ri], [b_ri, b_ii]].

        With s = sqrt(det) and t = sqrt(trace + 2s):
        B^(-1/2) = [[b_ii + s, -b_ri], [-b_ri, b_rr + s]] / (s * t).
        """
        det = ad.sub(ad.mul(b_rr, b_ii), ad.mul(b_ri, b_ri))
        s = ad.sqrt(det)
        t = ad.sqrt(ad.add(ad.add(b_rr, b_ii), ad.mul(2.0, s)))
        denom = ad.mul(s, t)
        m_rr = ad.div(ad.add(b_ii, s), denom)
        m_ii = ad.div(ad.add(b_rr, s), denom)
        m_ri = ad.div(ad.neg(b_ri), denom)
        return m_rr, m_ri, m_ii

    def apply(self, p, state, x, train, update_state=False):
        xv = ad.value_of(x)
        if train:
            if xv.shape[0] < 2:
                raise ContractError("complex batch norm needs batch size >= 2 in train mode")
            xr, xi = ad.real(x), ad.imag(x)
            mu_r = ad.mean(xr, axis=(0, 2, 3))
            mu_i = ad.mean(xi, axis=(0, 2, 3))
            cr = ad.sub(xr, _bcast_c(mu_r))
            ci = ad.sub(xi, _bcast_c(mu_i))
            b_rr = ad.mean(ad.mul(cr, cr), axis=(0, 2, 3))
            b_ii = ad.mean(ad.mul(ci, ci), axis=(0, 2, 3))
            b_ri = ad.mean(ad.mul(cr, ci), axis=(0, 2, 3))
            if update_state:
                m = self.momentum
                batch_cov = np.stack([
                    np.stack([ad.value_of(b_rr), ad.value_of(b_ri)], axis=-1),
                    np.stack([ad.value_of(b_ri), ad.value_of(b_ii)], axis=-1),
                ], axis=-2)
                batch_mean = ad.value_of(mu_r) + 1j * ad.value_of(mu_i)
                state["mean"] = (m * state["mean"] + (1 - m) * batch_mean).astype(state["mean"].dtype)
                state["cov"] = (m * state["cov"] + (1 - m) * batch_cov).astype(state["cov"].dtype)
            b_rr = ad.add(b_rr, CBN_EPS)
            b_ii = ad.add(b_ii, CBN_EPS)
        else:
            mean = state["mean"]
            mu_r, mu_i = mean.real, mean.imag
            cr = ad.sub(ad.real(x), mu_r.reshape(1, -1, 1, 1))
            ci = ad.sub(ad.imag(x), mu_i.reshape(1, -1, 1, 1))
            b_rr = state["cov"][:, 0, 0] + CBN_EPS
            b_ri = state["cov"][:, 0, 1]
            b_ii = state["cov"][:, 1, 1] + CBN_EPS
        m_rr, m_ri, m_ii = self._inv_sqrt_2x2(b_rr, b_ri, b_ii)
        std_r = ad.add(ad.mul(_bcast_c(m_rr), cr), ad.mul(_bcast_c(m_ri), ci))
        std_i = ad.add(ad.mul(_bcast_c(m_ri), cr), ad.mul(_bcast_c(m_ii), ci))
        g_rr = ad.pick(p["gamma"], (slice(None), 0, 0))
        g_ri = ad.pick(p["gamma"], (slice(None), 0, 1))
        g_ir = ad.pick(p["gamma"], (slice(None), 1, 0))
        g_ii = ad.pick(p["gamma"], (slice(None), 1, 1))
        out_r = ad.add(ad.add(ad.mul(_bcast_c(g_rr), std_r), ad.mul(_bcast_c(g_ri), std_i)),
                       _bcast_c(ad.real(p["beta"])))
        out_i = ad.add(ad.add(ad.mul(_bcast_c(g_ir), std_r), ad.mul(_bcast_c(g_ii), std_i)),
                       _bcast_c(ad.imag(p["beta"])))
        return ad.as_complex(out_r, out_i)


class RealBatchNorm:
    momentum = 0.9

    def __init__(self, channels):
        self.channels = channels

    def init_params(self, rng=None, dtype=np.float32):
        return {"gamma": np.ones(self.channels, dtype=dtype),
                "beta": np.zeros(self.channels, dtype=dtype)}

    def init_state(self, dtype=np.float32):
        return {"mean": np.zeros(self.channels, dtype=dtype),
                "var": np.ones(self.channels, dtype=dtype)}

    def apply(self, p, state, x, train, update_state=False):
        xv = ad.value_of(x)
        if train:
            if xv.shape[0] < 2:
                raise ContractError("batch norm needs batch size >= 2 in train mode")
            mu = ad.mean(x, axis=(0, 2, 3))
            c = ad.sub(x, _bcast_c(mu))
            var = ad.mean(ad.mul(c, c), axis=(0, 2, 3))
            if update_state:
                m = self.momentum
                state["mean"] = (m * state["mean"] + (1 - m) * ad.value_of(mu)).astype(state["mean"].dtype)
                state["var"] = (m * state["var"] + (1 - m) * ad.value_of(var)).astype(state["var"].dtype)
        else:
            c = ad.sub(x, state["mean"].reshape(1, -1, 1, 1))
            var = state["var"]
        inv = ad.div(1.0, ad.sqrt(ad.add(var, BN_EPS)))
        return ad.add(ad.mul(ad.mul(c, _bcast_c(inv)), _bcast_c(p["gamma"])),
                      _bcast_c(p["beta"]))


def leaky_relu(x, slope=0.2):
    xv = ad.value_of(x)
    gate = np.where(xv > 0, 1.0, slope).astype(xv.dtype)
    return ad.mul(x, gate)


def tanh_out(x):
    """tanh applied independently to real and imaginary parts; both bounded by 1."""
    return ad.as_complex(ad.tanh(ad.real(x)), ad.tanh(ad.imag(x)))
