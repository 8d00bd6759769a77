"""S2 template matching against an imprinted patch dictionary, and C2 minima.

Distances are squared Euclidean (no square root). In fixed mode every
quantity is an integer below 2**42, so the matrix products below are
carried out in float64 yet stay exact, and are returned as int64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .c1_pool import C1Maps
from .errors import FormatError, ImprintExhaustionError, InvalidArgumentError, TruncatedFileError
from .s1_gabor import OUTPUT_MAX, round_half_away

PATCH_SIZES = (1, 2, 3, 4)
DEFAULT_PER_SIZE = 320
C2_BITS = 42
C2_SATURATED = 2**C2_BITS - 1

DICT_MAGIC = b"HMXP"
DICT_VERSION = 1
_DICT_HEADER = struct.Struct("<4sIQI")
_PATCH_HEADER = struct.Struct("<BHBHH")


def patch_side(k: int) -> int:
    return 4 * k


def patch_area(k: int) -> int:
    """Coefficients per orientation plane, (4k)^2."""
    return (4 * k) ** 2


def max_distance(k: int) -> int:
    return 4 * patch_area(k) * OUTPUT_MAX**2


@dataclass(frozen=True, eq=False)
class Patch:
    k: int
    coeffs: np.ndarray  # (4, 4k, 4k) uint16
    image_id: int = 0
    band: int = 0
    row: int = 0
    col: int = 0

    def __post_init__(self):
        if self.k not in PATCH_SIZES:
            raise InvalidArgumentError(f"patch size index must be 1..4, got {self.k}")
        c = np.asarray(self.coeffs)
        s = patch_side(self.k)
        if c.shape != (4, s, s):
            raise InvalidArgumentError(f"patch k={self.k} needs coefficients of shape (4, {s}, {s}), got {c.shape}")
        c = np.array(c, dtype=np.uint16)
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def side(self) -> int:
        return patch_side(self.k)

    @property
    def provenance(self) -> tuple[int, int, int, int]:
        return self.image_id, self.band, self.row, self.col

    def __eq__(self, other):
        if not isinstance(other, Patch):
            return NotImplemented
        return (self.k, self.provenance) == (other.k, other.provenance) and np.array_equal(self.coeffs, other.coeffs)


class PatchDictionary:
    """Ordered, immutable list of S2 templates; feature i always means patch i."""

    def __init__(self, patches, seed: int = 0):
        self.patches = tuple(patches)
        self.seed = int(seed)
        if not self.patches:
            raise InvalidArgumentError("a patch dictionary needs at least one patch")

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    def __eq__(self, other):
        if not isinstance(other, PatchDictionary):
            return NotImplemented
        return self.seed == other.seed and self.patches == other.patches

    def __repr__(self):
        counts = {k: len(self.indices(k)) for k in PATCH_SIZES}
        return f"PatchDictionary(n={len(self)}, per_size={counts}, seed={self.seed})"

    @cached_property
    def sizes(self) -> np.ndarray:
        return np.array([p.k for p in self.patches], dtype=np.int64)

    def indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.sizes == k)

    @cached_property
    def _matrices(self) -> dict:
        out = {}
        for k in PATCH_SIZES:
            idx = self.indices(k)
            if idx.size:
                mat = np.stack([self.patches[i].coeffs.reshape(-1) for i in idx]).astype(np.float64)
                out[k] = (idx, mat, (mat * mat).sum(axis=1))
        return out

    def size_group(self, k: int):
        """(feature indices, flattened coefficients, squared norms) of size ``k``, or None."""
        return self._matrices.get(k)

    @cached_property
    def feature_scale(self) -> np.ndarray:
        """Divisor turning a raw C2 distance into mean squared mismatch per coefficient."""
        return np.array([float(max_distance(k)) for k in self.sizes])

    def counts(self) -> dict:
        return {k: int(self.indices(k).size) for k in PATCH_SIZES}


def to_u16(maps: np.ndarray) -> np.ndarray:
    if maps.dtype == np.uint16:
        return maps
    return np.clip(round_half_away(maps), 0, OUTPUT_MAX).astype(np.uint16)


def imprint(corpus, per_size: int = DEFAULT_PER_SIZE, seed: int = 0) -> PatchDictionary:
    """Draw ``per_size`` templates of each size from a corpus of C1 results.

    ``corpus[i]`` is the sequence of :class:`C1Maps` (one per band) of image
    ``i``. For each size the draw is uniform, with replacement, over every
    (image, band, anchor) where the patch lies fully inside the C1 grid.
    """
    corpus = [list(c1s) for c1s in corpus]
    if not corpus:
        raise InvalidArgumentError("imprinting corpus is empty")
    if per_size < 1:
        raise InvalidArgumentError(f"per_size must be >= 1, got {per_size}")
    rng = np.random.default_rng(seed)
    patches = []
    for k in PATCH_SIZES:
        s = patch_side(k)
        slots = []  # (image, c1 maps, anchors per row, anchor count)
        for img_id, c1s in enumerate(corpus):
            for c1 in c1s:
                h, w = c1.shape
                if h >= s and w >= s:
                    slots.append((img_id, c1, w - s + 1, (h - s + 1) * (w - s + 1)))
        if not slots:
            raise ImprintExhaustionError(k)
        bounds = np.cumsum([n for *_, n in slots])
        for draw in rng.integers(0, int(bounds[-1]), size=per_size):
            slot = int(np.searchsorted(bounds, draw, side="right"))
            img_id, c1, ncols, _ = slots[slot]
            offset = int(draw - (bounds[slot - 1] if slot else 0))
            r, c = divmod(offset, ncols)
            coeffs = to_u16(c1.maps[:, r:r + s, c:c + s])
            patches.append(Patch(k, coeffs, img_id, c1.b, r, c))
    return PatchDictionary(patches, seed)


def _windows(c1: C1Maps, s: int) -> np.ndarray:
    win = sliding_window_view(c1.maps, (s, s), axis=(1, 2))  # (4, h', w', s, s)
    return np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(win.shape[1] * win.shape[2], -1)


def distance_maps(c1: C1Maps, coeffs: np.ndarray, sq_norms: np.ndarray, s: int) -> np.ndarray:
    """(P, h', w') squared distances of P same-size patches at every anchor."""
    h, w = c1.shape
    fixed = c1.mode == "fixed"
    n = coeffs.shape[0]
    if h < s or w < s:
        return np.zeros((n, max(0, h - s + 1), max(0, w - s + 1)), dtype=np.int64 if fixed else np.float64)
    win = _windows(c1, s).astype(np.float64)
    dist = (win * win).sum(axis=1)[:, None] + sq_norms[None, :] - 2.0 * (win @ coeffs.T)
    dist = dist.T.reshape(n, h - s + 1, w - s + 1)
    if fixed:
        return dist.astype(np.int64)
    return np.maximum(dist, 0.0)


def s2_distance_map(c1: C1Maps, patch: Patch) -> np.ndarray:
    flat = patch.coeffs.reshape(1, -1).astype(np.float64)
    return distance_maps(c1, flat, (flat * flat).sum(axis=1), patch.side)[0]


@dataclass(frozen=True, eq=False)
class C2Vector:
    values: np.ndarray  # int64 (fixed) or float64 (float)
    sizes: np.ndarray
    saturated: np.ndarray
    mode: str
    image_id: int = 0

    def __len__(self):
        return self.values.shape[0]

    @property
    def any_saturated(self) -> bool:
        return bool(self.saturated.any())

    def scaled(self) -> np.ndarray:
        """Distances divided by 4 (4k)^2 65535^2 so every patch size is commensurate."""
        denom = np.array([float(max_distance(int(k))) for k in self.sizes])
        return self.values.astype(np.float64) / denom

    def __eq__(self, other):
        if not isinstance(other, C2Vector):
            return NotImplemented
        return (self.mode == other.mode and self.image_id == other.image_id
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.saturated, other.saturated))


class C2Accumulator:
    """Running per-patch minimum, fed one (band, size group) at a time."""

    def __init__(self, d: PatchDictionary, mode: str):
        self.mode = mode
        self.sizes = d.sizes
        n = len(d)
        if mode == "fixed":
            self.values = np.full(n, C2_SATURATED, dtype=np.int64)
        else:
            self.values = np.full(n, float(C2_SATURATED))
        self.seen = np.zeros(n, dtype=bool)

    def update(self, indices: np.ndarray, maps: np.ndarray) -> None:
        if maps.shape[1] == 0 or maps.shape[2] == 0:
            return
        mins = maps.reshape(maps.shape[0], -1).min(axis=1)
        self.values[indices] = np.minimum(self.values[indices], mins)
        self.seen[indices] = True

    def finish(self, image_id: int = 0) -> C2Vector:
        return C2Vector(self.values.copy(), self.sizes.copy(), ~self.seen, self.mode, image_id)


def c2_reduce(per_patch_maps, sizes=None, mode: str = "fixed", image_id: int = 0) -> C2Vector:
    """Global minimum of each patch's distance maps over all bands and anchors.

    A patch with no non-empty map gets the saturated value and its
    ``saturated`` flag set.
    """
    per_patch_maps = list(per_patch_maps)
    n = len(per_patch_maps)
    sizes = np.ones(n, dtype=np.int64) if sizes is None else np.asarray(sizes, dtype=np.int64)
    sat_value = C2_SATURATED if mode == "fixed" else float(C2_SATURATED)
    values = np.full(n, sat_value, dtype=np.int64 if mode == "fixed" else np.float64)
    saturated = np.ones(n, dtype=bool)
    for i, maps in enumerate(per_patch_maps):
        for m in maps:
            m = np.asarray(m)
            if m.size:
                values[i] = min(values[i], m.min())
                saturated[i] = False
    return C2Vector(values, sizes, saturated, mode, image_id)


def s2_c2(c1_bands, d: PatchDictionary, image_id: int = 0) -> C2Vector:
    """Sequential S2 + C2 over an image's bands: ascending band, small to large patch."""
    c1_bands = list(c1_bands)
    mode = c1_bands[0].mode if c1_bands else "fixed"
    acc = C2Accumulator(d, mode)
    for c1 in c1_bands:
        for k in PATCH_SIZES:
            group = d.size_group(k)
            if group is not None:
                idx, mat, norms = group
                acc.update(idx, distance_maps(c1, mat, norms, patch_side(k)))
    return acc.finish(image_id)


def save_dictionary(d: PatchDictionary, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_DICT_HEADER.pack(DICT_MAGIC, DICT_VERSION, d.seed, len(d)))
        for p in d.patches:
            fh.write(_PATCH_HEADER.pack(p.k, p.image_id, p.band, p.row, p.col))
            fh.write(p.coeffs.astype("<u2").tobytes())


def load_dictionary(path) -> PatchDictionary:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _DICT_HEADER.size:
        raise TruncatedFileError(f"{path}: dictionary header truncated")
    magic, version, seed, total = _DICT_HEADER.unpack_from(data)
    if magic != DICT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DICT_VERSION:
        raise FormatError(f"{path}: unsupported dictionary version {version}")
    pos = _DICT_HEADER.size
    patches = []
    for _ in range(total):
        if pos + _PATCH_HEADER.size > len(data):
            raise TruncatedFileError(f"{path}: declared {total} patches, found {len(patches)}")
        k, img_id, band, row, col = _PATCH_HEADER.unpack_from(data, pos)
        pos += _PATCH_HEADER.size
        if k not in PATCH_SIZES:
            raise FormatError(f"{path}: invalid patch size index {k}")
        n = 4 * patch_area(k)
        if pos + 2 * n > len(data):
            raise TruncatedFileError(f"{path}: patch {len(patches)} coefficients truncated")
        coeffs = np.frombuffer(data, dtype="<u2", count=n, offset=pos).reshape(4, patch_side(k), patch_side(k))
        pos += 2 * n
        patches.append(Patch(k, coeffs, img_id, band, row, col))
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after {total} patches")
    if not patches:
        raise FormatError(f"{path}: dictionary holds no patches")
    return PatchDictionary(patches, seed)
