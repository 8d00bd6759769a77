"""Closed-form memory and cycle model of the streaming hardware design.

All memory figures are in bits. Cycle counts assume the design's
parallelism: four S1 orientations at once, 320 same-size S2 patches and
two orientations per cycle, one classifier multiplier.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from fractions import Fraction

from .classifiers.svm import svm_memory_bits
from .errors import InvalidArgumentError
from .s1_gabor import N_BANDS, N_SCALES, diameter, subsample_period
from .s2_patches import C2_BITS, DEFAULT_PER_SIZE, PATCH_SIZES, patch_area

INPUT_QUEUE_IMAGES = 4
PIXEL_BITS = 8
INTERMEDIATE_BUFFERS = 5
INTERMEDIATE_BITS = 23
COEFF_BITS = 16
C1_BITS = 16
N_FEATURES = DEFAULT_PER_SIZE * len(PATCH_SIZES)
N_CLASSES = 102
AVAILABLE_BITS = 14976 * 1024  # 416 block RAMs of 36 kbit
ORIGINAL_PATCHES_PER_SIZE = 250


@dataclass(frozen=True)
class MacCounts:
    dense: int
    separable: int
    separable_folded: int
    s2_per_location: int


def mac_counts() -> MacCounts:
    """Per-location multiply-accumulates of the S1 bank and the original S2 dictionary."""
    dense = 4 * sum(diameter(j) ** 2 for j in range(1, N_SCALES + 1))
    separable = 4 * sum(2 * diameter(j) for j in range(1, N_SCALES + 1))
    s2 = ORIGINAL_PATCHES_PER_SIZE * 4 * sum(patch_area(k) for k in PATCH_SIZES)
    return MacCounts(dense, separable, separable // 2, s2)


def _side(n_pixels: int) -> int:
    if n_pixels < 1:
        raise InvalidArgumentError(f"pixel count must be positive, got {n_pixels}")
    side = math.isqrt(n_pixels)
    if side * side != n_pixels:
        raise InvalidArgumentError(f"pixel count {n_pixels} is not a perfect square")
    return side


def _valid_extent(side: int, b: int) -> int:
    return max(0, side - diameter(2 * b) + 1)


def s1_size(n_pixels: int, b: int) -> int:
    """Valid S1 results of band b over all four orientations."""
    return 4 * _valid_extent(_side(n_pixels), b) ** 2


def c1_size(n_pixels: int, b: int) -> Fraction:
    """C1 result count by the pooled-sample approximation S1_size / D^2."""
    return Fraction(s1_size(n_pixels, b), subsample_period(b) ** 2)


def c1_grid_side(n_pixels: int, b: int, convention: str = "exact"):
    """Side of the C1 grid S2 scans: exact pooling geometry, or sqrt(C1_size) literally."""
    if convention == "exact":
        return max(0, _valid_extent(_side(n_pixels), b) // subsample_period(b) - 1)
    if convention == "paper":
        # sqrt(4 m^2 / D^2) is the rational 2 m / D
        return Fraction(2 * _valid_extent(_side(n_pixels), b), subsample_period(b))
    raise InvalidArgumentError(f"unknown C1 side convention {convention!r}")


def s2_size(n_pixels: int, b: int, k: int, convention: str = "exact"):
    side = c1_grid_side(n_pixels, b, convention)
    s = 4 * k
    if side < s:
        return 0
    return (side - s + 1) ** 2


@dataclass(frozen=True)
class ResourceReport:
    n_pixels: int
    s1_input_bits: int
    s1_intermediate_bits: int
    s1_filter_bits: int
    c1_bits: float
    s2_bits: int
    c2_bits: int
    classifier_bits: int
    total_bits: float
    counter_bits: int
    available_bits: int = AVAILABLE_BITS

    @property
    def s1_bits(self) -> int:
        return self.s1_input_bits + self.s1_intermediate_bits + self.s1_filter_bits

    @property
    def fits(self) -> bool:
        return self.total_bits <= self.available_bits


def memory_report(n_pixels: int) -> ResourceReport:
    """On-chip RAM per stage. ``total_bits`` covers S1, C1, S2 and C2; the
    classifier's coefficients live off-chip and are reported separately."""
    side = _side(n_pixels)
    s1_input = INPUT_QUEUE_IMAGES * n_pixels * PIXEL_BITS
    s1_inter = INTERMEDIATE_BUFFERS * n_pixels * INTERMEDIATE_BITS
    s1_filters = sum(2 * (3 + j) * COEFF_BITS for j in range(1, N_SCALES + 1))
    c1 = sum(c1_size(n_pixels, b) for b in range(1, N_BANDS + 1)) * C1_BITS
    s2 = sum(DEFAULT_PER_SIZE * 4 * patch_area(k) * COEFF_BITS for k in PATCH_SIZES)
    c2 = N_FEATURES * C2_BITS
    classifier = svm_memory_bits(N_CLASSES, N_FEATURES)
    total = s1_input + s1_inter + s1_filters + c1 + s2 + c2
    counter = math.ceil(math.log2(side)) if side > 1 else 0
    return ResourceReport(n_pixels, s1_input, s1_inter, s1_filters, float(c1), s2, c2,
                          classifier, float(total), counter)


STAGES = ("input", "s1", "s2", "classifier")


@dataclass(frozen=True)
class TimingReport:
    n_pixels: int
    clock_hz: float
    c1_convention: str
    input_cycles: int
    s1_cycles: int
    s2_cycles: float
    classifier_cycles: int
    input_rate: int
    s1_rate: int
    s2_rate: int
    classifier_rate: int
    bottleneck: str
    bottleneck_cycles: float
    pipeline_rate: int

    def stage_rates(self) -> dict:
        return {s: getattr(self, f"{s}_rate") for s in STAGES}


def _rate(clock: Fraction, cycles) -> int:
    """Whole images per second; an idle stage is reported as unbounded (0 cycles -> clock)."""
    if cycles == 0:
        return int(clock)
    return math.floor(clock / Fraction(cycles))


def timing_report(n_pixels: int, clock_hz: float = 100e6, c1_convention: str = "exact") -> TimingReport:
    _side(n_pixels)
    if clock_hz <= 0:
        raise InvalidArgumentError(f"clock must be positive, got {clock_hz}")
    if c1_convention not in ("exact", "paper"):
        raise InvalidArgumentError(f"unknown C1 side convention {c1_convention!r}")
    clock = Fraction(clock_hz)
    input_cycles = n_pixels
    s1 = 2 * n_pixels * N_SCALES
    s2 = sum(s2_size(n_pixels, b, k, c1_convention) * patch_area(k) * 2
             for b in range(1, N_BANDS + 1) for k in PATCH_SIZES)
    classifier = N_FEATURES * N_CLASSES
    cycles = {"input": input_cycles, "s1": s1, "s2": s2, "classifier": classifier}
    bottleneck = max(STAGES, key=lambda s: cycles[s])
    s2_out = int(s2) if Fraction(s2).denominator == 1 else float(s2)
    b_cycles = cycles[bottleneck]
    return TimingReport(
        n_pixels, float(clock_hz), c1_convention,
        input_cycles, s1, s2_out, classifier,
        _rate(clock, input_cycles), _rate(clock, s1), _rate(clock, s2), _rate(clock, classifier),
        bottleneck, float(b_cycles) if isinstance(b_cycles, Fraction) else b_cycles,
        _rate(clock, b_cycles),
    )


def csv_columns() -> list[str]:
    res = [f.name for f in fields(ResourceReport)]
    tim = [f.name for f in fields(TimingReport) if f.name != "n_pixels"]
    return res + tim


def scalability_rows(n_range, clock_hz: float = 100e6, c1_convention: str = "exact") -> list[dict]:
    rows = []
    for n in n_range:
        row = asdict(memory_report(n))
        row.update({k: v for k, v in asdict(timing_report(n, clock_hz, c1_convention)).items() if k != "n_pixels"})
        rows.append(row)
    return rows


def scalability_csv(n_range, clock_hz: float, path, c1_convention: str = "exact") -> list[dict]:
    n_range = list(n_range)
    for n in n_range:
        _side(n)
    rows = scalability_rows(n_range, clock_hz, c1_convention)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=csv_columns())
        writer.writeheader()
        writer.writerows(rows)
    return rows
