"""Haar wavelet packet transform and the Gaussian subband weighting.

One recursion level filters rows and columns with the averaging pair
(1/sqrt(2), 1/sqrt(2)) and the differencing pair (1/sqrt(2), -1/sqrt(2)),
downsampling by two, so each node yields four half-size children. A full
`levels`-deep recursion gives 4**levels equal-size subbands; the filter bank is
orthonormal, so energy is conserved and the transpose reconstructs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import ContractError, DimensionError

_filter_cache: dict[tuple, np.ndarray] = {}


def _haar_matrix(n: int, differencing: bool) -> np.ndarray:
    key = (n, differencing)
    m = _filter_cache.get(key)
    if m is None:
        m = np.zeros((n // 2, n))
        s = 1.0 / np.sqrt(2.0)
        for i in range(n // 2):
            m[i, 2 * i] = s
            m[i, 2 * i + 1] = -s if differencing else s
        _filter_cache[key] = m
    return m


def _split4(x):
    """One analysis level: children ordered (avg/avg, avg/diff, diff/avg, diff/diff),
    first letter rows, second columns."""
    n_r = ad.value_of(x).shape[-2]
    n_c = ad.value_of(x).shape[-1]
    mats_r = (_haar_matrix(n_r, False), _haar_matrix(n_r, True))
    mats_c = (_haar_matrix(n_c, False), _haar_matrix(n_c, True))
    return [ad.apply_rowcol(x, mats_r[br], mats_c[bc])
            for br in (0, 1) for bc in (0, 1)]


@dataclass
class WaveletPacket:
    """Full packet decomposition: 4**levels subbands in depth-first quad order."""
    levels: int
    subbands: list = field(default_factory=list)

    @property
    def count(self):
        return len(self.subbands)


def wpt(image, levels: int) -> WaveletPacket:
    """Decompose the last two axes of a real tensor (or autodiff Node)."""
    h, w = ad.value_of(image).shape[-2:]
    if h % (1 << levels) or w % (1 << levels):
        raise DimensionError(f"wpt: dims {(h, w)} not divisible by 2^{levels}")
    nodes = [image]
    for _ in range(levels):
        nodes = [child for n in nodes for child in _split4(n)]
    return WaveletPacket(levels=levels, subbands=nodes)


def iwpt(packet: WaveletPacket) -> np.ndarray:
    """Perfect reconstruction by the transposed (synthesis) filter bank."""
    nodes = [ad.value_of(s) for s in packet.subbands]
    for _ in range(packet.levels):
        merged = []
        for q in range(0, len(nodes), 4):
            aa, adf, da, dd = nodes[q:q + 4]
            n_r = aa.shape[-2] * 2
            n_c = aa.shape[-1] * 2
            avg_r, diff_r = _haar_matrix(n_r, False), _haar_matrix(n_r, True)
            avg_c, diff_c = _haar_matrix(n_c, False), _haar_matrix(n_c, True)
            x = (T.apply_rowcol(aa, avg_r.T, avg_c.T)
                 + T.apply_rowcol(adf, avg_r.T, diff_c.T)
                 + T.apply_rowcol(da, diff_r.T, avg_c.T)
                 + T.apply_rowcol(dd, diff_r.T, diff_c.T))
            merged.append(x)
        nodes = merged
    return nodes[0]


def sequency_linear_indices(levels: int) -> np.ndarray:
    """Frequency-ordered linear index for each depth-first subband position.

    A subband's per-axis branch string (0 = averaging, 1 = differencing, MSB
    first) is its Paley index p; spectral folding in the differencing branch
    makes the frequency index f = p XOR (p >> 1). The linear index is
    f_row * 2^levels + f_col.
    """
    count = 4 ** levels
    out = np.zeros(count, dtype=np.intp)
    for leaf in range(count):
        p_row = p_col = 0
        for level in range(levels):
            quad = (leaf >> (2 * (levels - 1 - level))) & 3
            p_row = (p_row << 1) | (quad >> 1)
            p_col = (p_col << 1) | (quad & 1)
        f_row = p_row ^ (p_row >> 1)
        f_col = p_col ^ (p_col >> 1)
        out[leaf] = f_row * (1 << levels) + f_col
    return out


@dataclass
class SubbandWeights:
    """Gaussian bump over frequency-ordered subband indices, normalized to 1."""
    values: np.ndarray
    variance: float

    @property
    def count(self):
        return self.values.size


def gaussian_weights(count: int, variance: float = 12.5) -> SubbandWeights:
    """Weights proportional to a Gaussian pdf with mean (count-1)/2, emphasizing
    band-pass subbands."""
    if variance <= 0:
        raise ContractError(f"gaussian_weights: variance must be positive, got {variance}")
    if count < 1:
        raise ContractError(f"gaussian_weights: count must be >= 1, got {count}")
    p = np.arange(count, dtype=np.float64)
    mid = (count - 1) / 2.0
    w = np.exp(-((p - mid) ** 2) / (2.0 * variance))
    return SubbandWeights(values=w / w.sum(), variance=variance)
