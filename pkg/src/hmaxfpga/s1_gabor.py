"""S1: separable Gabor filter bank with valid-support l2-normalized responses.

Each of the 16 scales carries three 1-D components sampled at integer
offsets from the filter centre::

    e(x) = exp(-x^2 / 2s^2) cos(2 pi x / lam)      (even Gabor)
    g(x) = exp(-x^2 / 2s^2)                         (Gaussian, gamma = 1)
    o(x) = exp(-x^2 / 2s^2) sin(2 pi x / lam)      (odd Gabor)

and the four orientations are assembled from two 1-D passes::

    F0[y, x]   = g[y] e[x]
    F90[y, x]  = e[y] g[x]
    F45[y, x]  = e[y] e[x] + o[y] o[x]
    F135[y, x] = e[y] e[x] - o[y] o[x]

A rank-1 product cannot be made zero-mean, so the zero-mean filter
``F - mu`` is applied as ``conv(F, p) - mu * sum(p)`` using the window sum
that the normalizer already computes.

Arrays are indexed ``[row, col]`` i.e. ``[y, x]``; responses are
correlations over the window anchored at the top-left valid position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .imgcore import GrayImage

ORIENTATIONS = (0, 45, 90, 135)
N_SCALES = 16
N_BANDS = 8
OUTPUT_MAX = 2**16 - 1
COMPONENT_MAX = 2**15 - 1
INTERMEDIATE_BITS = 23

# (sigma, lambda) per scale index 1..16
SCALE_TABLE = (
    (1.3, 3.9), (1.7, 5.0),
    (2.1, 6.2), (2.5, 7.4),
    (2.9, 8.7), (3.3, 10.0),
    (3.8, 11.3), (4.2, 12.7),
    (4.7, 14.1), (5.2, 15.5),
    (5.7, 17.0), (6.2, 18.5),
    (6.7, 20.1), (7.2, 21.7),
    (7.8, 23.3), (8.3, 25.0),
)


def diameter(j: int) -> int:
    return 5 + 2 * j


def subsample_period(b: int) -> int:
    return 3 + b


@dataclass(frozen=True)
class S1Params:
    j: int
    sigma: float
    lam: float
    gamma: float = 1.0

    @property
    def diameter(self) -> int:
        return diameter(self.j)

    @classmethod
    def for_scale(cls, j: int) -> "S1Params":
        if not 1 <= j <= N_SCALES:
            raise InvalidArgumentError(f"scale index must be in 1..{N_SCALES}, got {j}")
        sigma, lam = SCALE_TABLE[j - 1]
        return cls(j, sigma, lam)


def band_params(b: int) -> tuple[int, tuple[S1Params, S1Params]]:
    """Subsample period and the two filter scales pooled by size band ``b``."""
    if not 1 <= b <= N_BANDS:
        raise InvalidArgumentError(f"band index must be in 1..{N_BANDS}, got {b}")
    return subsample_period(b), (S1Params.for_scale(2 * b - 1), S1Params.for_scale(2 * b))


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


# (horizontal component, vertical component, sign) terms for each orientation
_TERMS = {
    0: (("e", "g", 1),),
    90: (("g", "e", 1),),
    45: (("e", "e", 1), ("o", "o", 1)),
    135: (("e", "e", 1), ("o", "o", -1)),
}
_PARITY = {"e": 1, "g": 1, "o": -1}


@dataclass(frozen=True, eq=False)
class SeparableKernelSet:
    """1-D components of one scale plus per-orientation zero-mean metadata.

    ``kernel_sum[theta]`` is the sum of the composed 2-D kernel, so
    ``mean_correction[theta] = kernel_sum[theta] / diameter**2``.
    ``scale_factor[theta]`` maps the zero-mean kernel to l2 norm 65535.
    In quantized form ``e, g, o`` hold integers (int64) and
    ``norm_product[theta]`` is the exact integer
    ``D * (D * sum(F^2) - sum(F)^2)`` with ``D = diameter**2``.
    """

    params: S1Params
    e: np.ndarray
    g: np.ndarray
    o: np.ndarray
    quantized: bool
    component_scale: float
    kernel_sum: dict
    mean_correction: dict
    scale_factor: dict
    norm_product: dict = field(default_factory=dict)
    intermediate_shift: int = 0

    @property
    def j(self) -> int:
        return self.params.j

    @property
    def diameter(self) -> int:
        return self.params.diameter

    def component(self, name: str) -> np.ndarray:
        return {"e": self.e, "g": self.g, "o": self.o}[name]

    def composed(self, theta: int) -> np.ndarray:
        """Composite 2-D kernel before mean removal and scaling (float64)."""
        out = np.zeros((self.diameter, self.diameter))
        for h, v, sign in _TERMS[theta]:
            out += sign * np.outer(self.component(v).astype(np.float64), self.component(h).astype(np.float64))
        return out

    def effective(self, theta: int) -> np.ndarray:
        """Zero-mean, norm-65535 kernel actually applied by :func:`s1_apply`."""
        return self.scale_factor[theta] * (self.composed(theta) - self.mean_correction[theta])


def _sample_components(p: S1Params):
    half = (p.diameter - 1) // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    env = np.exp(-x**2 / (2 * p.sigma**2))
    e = env * np.cos(2 * np.pi * x / p.lam)
    g = np.exp(-(p.gamma**2) * x**2 / (2 * p.sigma**2))
    o = env * np.sin(2 * np.pi * x / p.lam)
    return e, g, o


def _composed_exact(comps, theta):
    # python ints: sums of squares exceed int64 for the larger filters
    out = None
    for h, v, sign in _TERMS[theta]:
        hv = [int(t) for t in comps[h]]
        vv = [int(t) for t in comps[v]]
        term = [[sign * a * b for b in hv] for a in vv]
        out = term if out is None else [[x + y for x, y in zip(r1, r2)] for r1, r2 in zip(out, term)]
    return out


def make_kernels(p: S1Params, quantize: bool = False) -> SeparableKernelSet:
    e, g, o = _sample_components(p)
    d = p.diameter
    area = d * d
    ks, mu, scale, nprod = {}, {}, {}, {}
    shift = 0
    if quantize:
        comp_scale = float(COMPONENT_MAX)
        e, g, o = (round_half_away(c * comp_scale).astype(np.int64) for c in (e, g, o))
        comps = {"e": e, "g": g, "o": o}
        for theta in ORIENTATIONS:
            rows = _composed_exact(comps, theta)
            s = sum(sum(r) for r in rows)
            s2 = sum(v * v for r in rows for v in r)
            nprod[theta] = area * (area * s2 - s * s)
            ks[theta] = s
            mu[theta] = s / area
            scale[theta] = OUTPUT_MAX * area / math.sqrt(nprod[theta])
        peak = 255 * max(int(np.abs(c).sum()) for c in (e, g, o))
        shift = max(0, peak.bit_length() - (INTERMEDIATE_BITS - 1))
    else:
        comp_scale = 1.0
        tmp = SeparableKernelSet(p, e, g, o, False, 1.0, {}, {}, {})
        for theta in ORIENTATIONS:
            f = tmp.composed(theta)
            ks[theta] = float(f.sum())
            mu[theta] = ks[theta] / area
            scale[theta] = OUTPUT_MAX / float(np.sqrt(((f - mu[theta]) ** 2).sum()))
    for arr in (e, g, o):
        arr.setflags(write=False)
    return SeparableKernelSet(p, e, g, o, quantize, comp_scale, ks, mu, scale, nprod, shift)


_BANK_CACHE: dict = {}


def kernel_bank(quantize: bool) -> tuple[SeparableKernelSet, ...]:
    """All 16 kernel sets, built once per mode."""
    key = bool(quantize)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = tuple(make_kernels(S1Params.for_scale(j), key) for j in range(1, N_SCALES + 1))
    return _BANK_CACHE[key]


def _box_sums(px: np.ndarray, d: int):
    """Exact window sums of p and p^2 by row-then-column accumulation."""
    h, w = px.shape
    if h < d or w < d:
        empty = np.zeros((max(0, h - d + 1), max(0, w - d + 1)), dtype=np.int64)
        return empty, empty.copy()
    p = px.astype(np.int64)
    out = []
    for a in (p, p * p):
        cs = np.cumsum(np.pad(a, ((0, 0), (1, 0))), axis=1)
        rows = cs[:, d:] - cs[:, :-d]
        cs = np.cumsum(np.pad(rows, ((1, 0), (0, 0))), axis=0)
        out.append(cs[d:, :] - cs[:-d, :])
    return out[0], out[1]


def support_sums(img: GrayImage, diam: int):
    """(l2 norm, pixel sum) of every full ``diam`` x ``diam`` support."""
    sums, sq = _box_sums(img.pixels, diam)
    return np.sqrt(sq.astype(np.float64)), sums


def _fold_pass(x: np.ndarray, k: np.ndarray, parity: int, axis: int) -> np.ndarray:
    """Valid 1-D correlation along ``axis`` with mirrored taps pre-summed."""
    d = k.shape[0]
    half = (d - 1) // 2
    n = x.shape[axis] - d + 1

    def tap(i):
        sl = [slice(None)] * x.ndim
        sl[axis] = slice(i, i + n)
        return x[tuple(sl)]

    centre = tap(half)
    acc = k[half] * centre if parity > 0 else np.zeros_like(centre, dtype=np.result_type(x, k))
    for t in range(1, half + 1):
        right, left = tap(half + t), tap(half - t)
        acc = acc + k[half + t] * ((right + left) if parity > 0 else (right - left))
    return acc


def _shift_round(x: np.ndarray, s: int) -> np.ndarray:
    if s == 0:
        return x
    mag = (np.abs(x) + (1 << (s - 1))) >> s
    return np.where(x < 0, -mag, mag)


@dataclass(frozen=True, eq=False)
class S1Maps:
    """Normalized magnitude responses of one scale, stacked by orientation."""

    j: int
    maps: np.ndarray  # (4, h, w); uint16 in fixed mode, float64 in float mode
    mode: str

    @property
    def shape(self) -> tuple[int, int]:
        return self.maps.shape[1], self.maps.shape[2]

    def orientation(self, theta: int) -> np.ndarray:
        return self.maps[ORIENTATIONS.index(theta)]


def _raw_conv(px, ks: SeparableKernelSet, fixed: bool):
    """Un-normalized responses conv(F_theta, p) for every orientation."""
    d = ks.diameter
    x = px.astype(np.int64 if fixed else np.float64)
    comps = {n: ks.component(n) for n in "ego"}
    horiz = {}
    for n in "ego":
        hpass = _fold_pass(x, comps[n], _PARITY[n], axis=1)
        if fixed:
            hpass = _shift_round(hpass, ks.intermediate_shift)
        horiz[n] = hpass
    a0 = _fold_pass(horiz["e"], comps["g"], 1, axis=0)
    a90 = _fold_pass(horiz["g"], comps["e"], 1, axis=0)
    ee = _fold_pass(horiz["e"], comps["e"], 1, axis=0)
    oo = _fold_pass(horiz["o"], comps["o"], -1, axis=0)
    raw = {0: a0, 90: a90, 45: ee + oo, 135: ee - oo}
    if fixed and ks.intermediate_shift:
        raw = {t: v << ks.intermediate_shift for t, v in raw.items()}
    assert all(v.shape == (px.shape[0] - d + 1, px.shape[1] - d + 1) for v in raw.values())
    return raw


def s1_apply(img: GrayImage, ks: SeparableKernelSet, mode: str = "fixed") -> S1Maps:
    """Normalized |response| of one scale at every full-support location."""
    if mode not in ("fixed", "float"):
        raise InvalidArgumentError(f"mode must be 'fixed' or 'float', got {mode!r}")
    fixed = mode == "fixed"
    if fixed != ks.quantized:
        raise InvalidArgumentError(f"{mode} mode needs {'quantized' if fixed else 'float'} kernels")
    d = ks.diameter
    if img.height < d or img.width < d:
        raise InvalidArgumentError(f"{img!r} is smaller than the {d}x{d} filter support")
    sums, sq = _box_sums(img.pixels, d)
    raw = _raw_conv(img.pixels, ks, fixed)
    out = np.empty((4,) + sums.shape, dtype=np.uint16 if fixed else np.float64)
    zero = sq == 0
    area = d * d
    if fixed:
        # a zero-mean unit kernel cannot exceed ||p - mean(p)|| / ||p||; clamping to
        # that exact bound removes intermediate rounding residue on flat supports
        centred = (area * sq - sums * sums).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = round_half_away(OUTPUT_MAX * np.sqrt(centred / (area * sq.astype(np.float64))))
        bound = np.where(zero, 0.0, bound)
        for i, theta in enumerate(ORIENTATIONS):
            corr = area * raw[theta] - ks.kernel_sum[theta] * sums
            denom = np.sqrt(float(ks.norm_product[theta]) * sq.astype(np.float64))
            with np.errstate(divide="ignore", invalid="ignore"):
                val = OUTPUT_MAX * np.abs(corr.astype(np.float64)) / denom
            val = np.where(zero, 0.0, val)
            out[i] = np.minimum(np.minimum(round_half_away(val), bound), OUTPUT_MAX).astype(np.uint16)
    else:
        norm = np.sqrt(sq.astype(np.float64))
        for i, theta in enumerate(ORIENTATIONS):
            corr = raw[theta] - ks.mean_correction[theta] * sums
            with np.errstate(divide="ignore", invalid="ignore"):
                val = ks.scale_factor[theta] * np.abs(corr) / norm
            out[i] = np.where(zero, 0.0, val)
    out.setflags(write=False)
    return S1Maps(ks.j, out, mode)


def dump_kernels(sets) -> str:
    """Plain-text listing of each (scale, orientation) kernel, one block apiece."""
    lines = []
    for ks in sets:
        fmt = (lambda v: str(int(v))) if ks.quantized else (lambda v: repr(float(v)))
        for theta in ORIENTATIONS:
            lines.append(f"kernel j={ks.j} theta={theta}")
            lines.append(f"diameter {ks.diameter}")
            lines.append(f"sigma {ks.params.sigma!r}")
            lines.append(f"lambda {ks.params.lam!r}")
            lines.append(f"quantized {int(ks.quantized)}")
            lines.append(f"scale_factor {ks.scale_factor[theta]!r}")
            lines.append(f"mean_correction {ks.mean_correction[theta]!r}")
            for name in "ego":
                lines.append(f"{name} " + " ".join(fmt(v) for v in ks.component(name)))
            lines.append("")
    return "\n".join(lines)
