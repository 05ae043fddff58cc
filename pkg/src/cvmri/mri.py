"""Acquisition model for compressive-sensing MRI at desk scale: k-space
sampling masks (gaussian-density cartesian columns, radial, spiral), noisy
undersampled acquisition, zero-filled reconstruction, and a synthetic
complex-valued phantom generator.

Masks are stored in natural DFT order (DC at index [0, 0]) so acquisition and
zero-filling are plain elementwise products with fft2 output. Pattern
generation happens in centered coordinates and is mapped back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError

PATTERNS = ("gauss1d", "radial", "spiral")


@dataclass
class SamplingMask:
    grid: np.ndarray  # (K, K) float32 of 0/1, natural DFT order
    pattern: str
    ratio: float
    seed: int

    @property
    def achieved_ratio(self) -> float:
        return float(self.grid.sum()) / self.grid.size


@dataclass
class Phantom:
    image: np.ndarray  # (K, K) complex64, |image| in [0, 1]
    seed: int
    shapes: list = field(default_factory=list)


def _signed_freq(idx: np.ndarray, k: int) -> np.ndarray:
    """Natural index -> signed frequency in (-K/2, K/2]."""
    return np.where(idx <= k // 2, idx, idx - k)


def make_mask(pattern: str, ratio: float, size: int, seed: int = 0) -> SamplingMask:
    """Binary k-space selection grid hitting the requested ratio exactly
    (whole-column granularity for gauss1d, single bins for radial/spiral)."""
    if not 0.0 < ratio <= 1.0:
        raise ContractError(f"mask ratio must be in (0, 1], got {ratio}")
    if not T.is_power_of_two(size):
        raise ContractError(f"mask size must be a power of two, got {size}")
    if pattern == "gauss1d":
        grid = _gauss1d_grid(ratio, size, seed)
    elif pattern == "radial":
        grid = _radial_grid(ratio, size)
    elif pattern == "spiral":
        grid = _spiral_grid(ratio, size)
    else:
        raise ContractError(f"unknown mask pattern {pattern!r}; use one of {PATTERNS}")
    return SamplingMask(grid=grid.astype(np.float32), pattern=pattern,
                        ratio=ratio, seed=seed)


def _gauss1d_grid(ratio, k, seed):
    """Whole phase-encode columns drawn with Gaussian density about DC
    (sigma = K/6); the 4 lowest-frequency columns are always kept."""
    n_cols = max(1, round(ratio * k))
    center = (k - 1) / 2.0  # centered coordinates; DC column sits at k//2
    cols = np.arange(k)
    by_distance = cols[np.argsort(np.abs(cols - center), kind="stable")]
    if n_cols <= 4:
        chosen = by_distance[:n_cols]
    else:
        guaranteed = by_distance[:4]
        rest = np.setdiff1d(cols, guaranteed)
        weights = np.exp(-((rest - center) ** 2) / (2 * (k / 6.0) ** 2))
        rng = np.random.default_rng(seed)
        extra = rng.choice(rest, size=n_cols - 4, replace=False,
                           p=weights / weights.sum())
        chosen = np.concatenate([guaranteed, extra])
    grid = np.zeros((k, k))
    natural = (chosen - k // 2) % k
    grid[:, natural] = 1.0
    return grid


def _orbit(point, k):
    """Conjugate-symmetry orbit of a natural-order bin: {p, -p mod K}."""
    partner = ((-point[0]) % k, (-point[1]) % k)
    return (point,) if partner == point else tuple(sorted((point, partner)))


def _radius2(point, k):
    fu = point[0] if point[0] <= k // 2 else point[0] - k
    fv = point[1] if point[1] <= k // 2 else point[1] - k
    return fu * fu + fv * fv


def _adjust_exact(selected: set, target: int, k: int) -> set:
    """Flip symmetric orbits until popcount == target: removals take the
    highest-frequency selected points (DC stays pinned), additions the
    lowest-frequency unselected ones. The self-symmetric Nyquist bins resolve
    odd parity; when none fits, one orbit overshoots and the opposite phase
    finishes the job."""
    selected = set(selected)
    dc = (0, 0)
    for _ in range(8):
        diff = len(selected) - target
        if diff == 0:
            return selected
        if diff > 0:
            orbits = sorted({frozenset(_orbit(p, k)) for p in selected if p != dc},
                            key=lambda o: (-max(_radius2(p, k) for p in o), sorted(o)))
            for orbit in orbits:
                if diff == 0:
                    break
                if len(orbit) <= diff:
                    selected -= set(orbit)
                    diff -= len(orbit)
            if diff > 0 and orbits:  # only pairs fit no more: overshoot by one pair
                pair = next(o for o in orbits if len(o) == 2 and o <= selected)
                selected -= set(pair)
        else:
            universe = {(i, j) for i in range(k) for j in range(k)}
            orbits = sorted({frozenset(_orbit(p, k)) for p in universe - selected},
                            key=lambda o: (min(_radius2(p, k) for p in o), sorted(o)))
            for orbit in orbits:
                if diff == 0:
                    break
                if len(orbit) <= -diff:
                    selected |= set(orbit)
                    diff += len(orbit)
            if diff < 0 and orbits:
                pair = next(o for o in orbits if len(o) == 2 and not (o & selected))
                selected |= set(pair)
    raise RuntimeError("mask adjustment did not converge")


def _points_to_grid(points, k):
    grid = np.zeros((k, k))
    idx = np.array(sorted(points))
    grid[idx[:, 0], idx[:, 1]] = 1.0
    return grid


def _rasterize_ray(theta, k):
    pts = set()
    half = k // 2
    for r in np.arange(0.0, half * np.sqrt(2) + 0.5, 0.5):
        u = round(r * np.cos(theta))
        v = round(r * np.sin(theta))
        if not (-half <= u < half and -half <= v < half):
            break
        p = (u % k, v % k)
        pts.add(p)
        pts.add(((-u) % k, (-v) % k))
    return pts


def _radial_grid(ratio, k):
    """Uniform-angle rays through DC; the ray count closest to the target is
    refined to the exact popcount round(ratio * K^2)."""
    target = max(1, round(ratio * k * k))
    best, best_err = None, None
    for n_rays in range(1, 4 * k):
        pts = set()
        for j in range(n_rays):
            pts |= _rasterize_ray(np.pi * j / n_rays, k)
        err = abs(len(pts) - target)
        if best_err is None or err < best_err:
            best, best_err = pts, err
        if len(pts) >= target:
            break
    return _points_to_grid(_adjust_exact(best, target, k), k)


def _rasterize_spiral(turns, k):
    half = k // 2
    radius = half - 0.5
    growth = radius / (2 * np.pi * turns)
    pts = set()
    t = 0.0
    t_end = 2 * np.pi * turns
    while t <= t_end:
        r = growth * t
        u = round(r * np.cos(t))
        v = round(r * np.sin(t))
        if -half <= u < half and -half <= v < half:
            pts.add((u % k, v % k))
            pts.add(((-u) % k, (-v) % k))
        t += 0.5 / max(r, 0.5)
    return pts


def _spiral_grid(ratio, k):
    """Two-arm Archimedean spiral (point plus conjugate mirror); the turn count
    closest to the target is refined to the exact popcount."""
    target = max(1, round(ratio * k * k))
    best, best_err = None, None
    for turns in range(1, 6 * k):
        pts = _rasterize_spiral(turns, k)
        err = abs(len(pts) - target)
        if best_err is None or err < best_err:
            best, best_err = pts, err
        if len(pts) >= target:
            break
    return _points_to_grid(_adjust_exact(best, target, k), k)


# ---------------------------------------------------------------------------
# acquisition and zero-filled reconstruction


def acquire(x, mask: SamplingMask | np.ndarray, noise_pct: float = 0.0,
            seed: int = 0) -> np.ndarray:
    """Undersampled k-space observation: mask * fft2(x) plus complex Gaussian
    noise on the sampled bins (per-component std = noise_pct% of the mean
    spectral magnitude of this instance)."""
    grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask)
    rng = np.random.default_rng(seed)
    return degrade(x, grid, noise_pct, rng)


def degrade(x, grid, noise_pct, rng) -> np.ndarray:
    spectrum = T.fft2(np.asarray(x))
    y = grid * spectrum
    if noise_pct:
        scale = (noise_pct / 100.0) * np.abs(spectrum).mean()
        noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + grid * (scale * noise).astype(y.dtype)
    return y


def zfr(y, mask: SamplingMask | np.ndarray) -> np.ndarray:
    """Zero-filled reconstruction: inverse transform of the re-masked data."""
    grid = mask.grid if isinstance(mask, SamplingMask) else np.asarray(mask)
    return T.ifft2(grid * np.asarray(y))


# ---------------------------------------------------------------------------
# synthetic phantoms


def _shape_coverage(rng, size):
    """Soft-edged random ellipse or rectangle as a [0, 1] coverage map."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    kind = "ellipse" if rng.random() < 0.6 else "rect"
    cx, cy = rng.uniform(0.25, 0.75, 2)
    a, b = rng.uniform(0.10, 0.34, 2)
    angle = rng.uniform(0, np.pi)
    ca, sa = np.cos(angle), np.sin(angle)
    xr = (xx - cx) * ca + (yy - cy) * sa
    yr = -(xx - cx) * sa + (yy - cy) * ca
    edge = 1.0 / size
    if kind == "ellipse":
        q = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        dist = (q - 1.0) * min(a, b)
    else:
        dist = np.maximum(np.abs(xr) - a, np.abs(yr) - b)
    coverage = np.clip(0.5 - dist / edge, 0.0, 1.0)
    meta = {"kind": kind, "center": (cx, cy), "axes": (a, b), "angle": angle}
    return coverage, meta


def _smooth_phase(rng, size):
    """Low-order 2-D polynomial phase scaled into [-pi/2, pi/2]."""
    yy, xx = (np.mgrid[0:size, 0:size] / (size - 1)) * 2 - 1
    c = rng.normal(size=6)
    poly = (c[0] + c[1] * xx + c[2] * yy + c[3] * xx * xx
            + c[4] * xx * yy + c[5] * yy * yy)
    span = poly.max() - poly.min()
    if span < 1e-9:
        poly = 0.3 * xx  # degenerate draw; keep the phase nonconstant
        span = poly.max() - poly.min()
    return (poly - (poly.max() + poly.min()) / 2) / (span / 2) * (np.pi / 2)


def make_phantoms(count: int, size: int, seed: int = 0) -> list[Phantom]:
    """Deterministic synthetic complex images: piecewise-constant soft-edged
    magnitudes in [0, 1] with smooth nonconstant phase."""
    if not T.is_power_of_two(size):
        raise ContractError(f"phantom size must be a power of two, got {size}")
    phantoms = []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        mag = np.zeros((size, size))
        shapes = []
        for _ in range(int(rng.integers(3, 7))):
            coverage, meta = _shape_coverage(rng, size)
            level = rng.uniform(0.4, 1.0)
            meta["level"] = level
            mag = mag * (1 - coverage) + level * coverage
            shapes.append(meta)
        mag = np.clip(mag, 0.0, 1.0)
        image = (mag * np.exp(1j * _smooth_phase(rng, size))).astype(np.complex64)
        phantoms.append(Phantom(image=image, seed=seed, shapes=shapes))
    return phantoms
