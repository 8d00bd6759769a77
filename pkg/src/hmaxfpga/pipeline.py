"""End-to-end S1 -> C1 -> S2 -> C2 extraction, sequential or stage-parallel.

The parallel form mirrors the hardware schedule: a bounded input queue of
four images feeds an S1/C1 worker, which publishes each band's C1 maps
into a per-band buffer guarded by an ownership flag; an S2/C2 worker
consumes the bands in ascending order and clears each flag when done.
S1/C1 may therefore run up to an image ahead of S2. Results leave in
input order and are bit-identical to :func:`extract_c2`.
"""

from __future__ import annotations

import logging
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .c1_pool import C1Maps, c1_pool, cross_scale_max
from .classifiers import BoostModel, SvmModel
from .errors import HmaxError, InvalidArgumentError, UsageError
from .featio import FeatureCsvWriter, HmxcWriter, read_manifest
from .imgcore import NOMINAL_SIDE, GrayImage, load_pgm, resize_to
from .s1_gabor import N_BANDS, band_params, kernel_bank, s1_apply
from .s2_patches import PATCH_SIZES, C2Accumulator, C2Vector, PatchDictionary, distance_maps, patch_side

log = logging.getLogger(__name__)

INPUT_QUEUE_DEPTH = 4
_STOP = object()


def default_threads() -> int:
    env = os.environ.get("HMAX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"HMAX_THREADS must be an integer, got {env!r}") from None
    return min(4, os.cpu_count() or 1)


def _check_mode(mode: str) -> None:
    if mode not in ("fixed", "float"):
        raise InvalidArgumentError(f"mode must be 'fixed' or 'float', got {mode!r}")


def supported_bands(img: GrayImage) -> list[int]:
    side = min(img.width, img.height)
    return [b for b in range(1, N_BANDS + 1) if side >= band_params(b)[1][1].diameter]


def band_c1(img: GrayImage, b: int, mode: str = "fixed") -> C1Maps:
    delta, (small, large) = band_params(b)
    bank = kernel_bank(mode == "fixed")
    s_small = s1_apply(img, bank[small.j - 1], mode)
    s_large = s1_apply(img, bank[large.j - 1], mode)
    return c1_pool(cross_scale_max(s_small, s_large), delta, b)


def c1_bands(img: GrayImage, mode: str = "fixed") -> list[C1Maps]:
    """C1 maps of every band the image is large enough to support."""
    _check_mode(mode)
    return [band_c1(img, b, mode) for b in supported_bands(img)]


def _band_s2(c1: C1Maps, d: PatchDictionary, acc: C2Accumulator, pool=None) -> None:
    groups = [(k, d.size_group(k)) for k in PATCH_SIZES if d.size_group(k) is not None]

    def work(item):
        k, (idx, mat, norms) = item
        return idx, distance_maps(c1, mat, norms, patch_side(k))

    results = pool.map(work, groups) if pool is not None else map(work, groups)
    for idx, maps in results:  # merged in size order whatever the scheduling
        acc.update(idx, maps)


def extract_c2(img: GrayImage, d: PatchDictionary, mode: str = "fixed", image_id: int = 0) -> C2Vector:
    """Sequential reference: bands ascending, patch sizes small to large."""
    _check_mode(mode)
    acc = C2Accumulator(d, mode)
    for c1 in c1_bands(img, mode):
        _band_s2(c1, d, acc)
    return acc.finish(image_id)


@dataclass
class ExtractionJob:
    image_id: int
    image: GrayImage | str | Path
    dictionary: PatchDictionary | None = None


@dataclass
class ExtractionResult:
    image_id: int
    c2: C2Vector | None = None
    error: str | None = None
    label: int | None = None

    @property
    def ok(self) -> bool:
        return self.c2 is not None


class BandBuffer:
    """One band's C1 hand-off slot. Flag low: producer owns it. Flag high: consumer owns it."""

    def __init__(self, band: int):
        self.band = band
        self._cond = threading.Condition()
        self.flag = False
        self.payload: C1Maps | None = None
        self.seq: int | None = None
        self.max_outstanding = 0

    def publish(self, seq: int, payload: C1Maps, stop: threading.Event) -> bool:
        with self._cond:
            while self.flag:
                if stop.is_set():
                    return False
                self._cond.wait(0.05)
            assert self.payload is None
            self.payload, self.seq = payload, seq
            self.flag = True
            self.max_outstanding = max(self.max_outstanding, 1)
            self._cond.notify_all()
            return True

    def acquire(self, seq: int, stop: threading.Event) -> C1Maps | None:
        with self._cond:
            while not self.flag:
                if stop.is_set():
                    return None
                self._cond.wait(0.05)
            if self.seq != seq:
                raise RuntimeError(f"band {self.band}: expected image {seq}, buffer holds {self.seq}")
            return self.payload

    def release(self) -> None:
        with self._cond:
            self.payload, self.seq = None, None
            self.flag = False
            self._cond.notify_all()


@dataclass
class PipelineStats:
    max_input_depth: int = 0
    max_band_outstanding: dict = field(default_factory=dict)
    images: int = 0
    errors: int = 0


def _resolve_image(job: ExtractionJob) -> GrayImage:
    if isinstance(job.image, GrayImage):
        return job.image
    return load_pgm(job.image)


class FeaturePipeline:
    """Streaming extractor bound to one immutable dictionary.

    ``threads <= 1`` runs the sequential reference in the caller's thread.
    Otherwise two stage workers run concurrently and any threads beyond
    those two share S2 work by patch-size group. ``delay(stage)``, when
    given, is called at each hand-off point (used to perturb schedules).
    """

    def __init__(self, dictionary: PatchDictionary, mode: str = "fixed", threads: int | None = None,
                 delay: Callable[[str], None] | None = None):
        _check_mode(mode)
        self.dictionary = dictionary
        self.mode = mode
        self.threads = default_threads() if threads is None else max(1, int(threads))
        self.delay = delay or (lambda stage: None)
        self.stats = PipelineStats()

    def _prepare(self, job: ExtractionJob):
        if job.dictionary is not None and job.dictionary is not self.dictionary \
                and len(job.dictionary) != len(self.dictionary):
            raise InvalidArgumentError(f"job dictionary has {len(job.dictionary)} patches, "
                                       f"pipeline has {len(self.dictionary)}")
        img = _resolve_image(job)
        if (img.width, img.height) != (NOMINAL_SIDE, NOMINAL_SIDE):
            log.warning("image %s is %dx%d, not %dx%d", job.image_id, img.width, img.height,
                        NOMINAL_SIDE, NOMINAL_SIDE)
        bands = supported_bands(img)
        if not bands:
            raise InvalidArgumentError(f"image {img.width}x{img.height} supports no filter band")
        return img, bands

    def run(self, jobs: Iterable[ExtractionJob]) -> Iterator[ExtractionResult]:
        if self.threads <= 1:
            yield from self._run_sequential(jobs)
        else:
            yield from self._run_parallel(jobs)

    def _run_sequential(self, jobs):
        for job in jobs:
            try:
                img, _ = self._prepare(job)
                c2 = extract_c2(img, self.dictionary, self.mode, job.image_id)
            except (HmaxError, OSError) as exc:
                self.stats.errors += 1
                yield ExtractionResult(job.image_id, error=f"{type(exc).__name__}: {exc}")
                continue
            self.stats.images += 1
            yield ExtractionResult(job.image_id, c2)

    def _run_parallel(self, jobs):
        stop = threading.Event()
        inq: queue.Queue = queue.Queue(maxsize=INPUT_QUEUE_DEPTH)
        announce: queue.Queue = queue.Queue()
        outq: queue.Queue = queue.Queue()
        buffers = {b: BandBuffer(b) for b in range(1, N_BANDS + 1)}
        extra = self.threads - 2
        pool = ThreadPoolExecutor(extra, thread_name_prefix="hmax-s2") if extra > 0 else None
        failures: list[BaseException] = []

        def put(q, item):
            while not stop.is_set():
                try:
                    q.put(item, timeout=0.05)
                    return True
                except queue.Full:
                    continue
            return False

        def feeder():
            try:
                for seq, job in enumerate(jobs):
                    if not put(inq, (seq, job)):
                        return
                    self.stats.max_input_depth = max(self.stats.max_input_depth, inq.qsize())
            except BaseException as exc:  # a failing job iterator ends the stream
                failures.append(exc)
            put(inq, _STOP)

        def s1c1():
            try:
                while not stop.is_set():
                    try:
                        item = inq.get(timeout=0.05)
                    except queue.Empty:
                        continue
                    if item is _STOP:
                        announce.put(_STOP)
                        return
                    seq, job = item
                    self.delay("s1")
                    try:
                        img, bands = self._prepare(job)
                    except (HmaxError, OSError) as exc:
                        announce.put((seq, job, None, f"{type(exc).__name__}: {exc}"))
                        continue
                    announce.put((seq, job, bands, None))
                    for b in bands:
                        c1 = band_c1(img, b, self.mode)
                        self.delay("c1")
                        if not buffers[b].publish(seq, c1, stop):
                            return
            except BaseException as exc:
                failures.append(exc)
                stop.set()

        def s2c2():
            try:
                while not stop.is_set():
                    try:
                        item = announce.get(timeout=0.05)
                    except queue.Empty:
                        continue
                    if item is _STOP:
                        outq.put(_STOP)
                        return
                    seq, job, bands, err = item
                    if err is not None:
                        outq.put(ExtractionResult(job.image_id, error=err))
                        continue
                    acc = C2Accumulator(self.dictionary, self.mode)
                    for b in bands:
                        c1 = buffers[b].acquire(seq, stop)
                        if c1 is None:
                            return
                        self.delay("s2")
                        _band_s2(c1, self.dictionary, acc, pool)
                        buffers[b].release()
                    outq.put(ExtractionResult(job.image_id, acc.finish(job.image_id)))
            except BaseException as exc:
                failures.append(exc)
                stop.set()

        workers = [threading.Thread(target=f, name=f"hmax-{f.__name__}", daemon=True)
                   for f in (feeder, s1c1, s2c2)]
        for w in workers:
            w.start()
        try:
            while True:
                try:
                    res = outq.get(timeout=0.1)
                except queue.Empty:
                    if failures:
                        raise failures[0]
                    continue
                if res is _STOP:
                    break
                if res.ok:
                    self.stats.images += 1
                else:
                    self.stats.errors += 1
                yield res
            if failures:
                raise failures[0]
        finally:
            stop.set()
            for w in workers:
                w.join(timeout=5)
            if pool is not None:
                pool.shutdown(wait=True)
            self.stats.max_band_outstanding = {b: buf.max_outstanding for b, buf in buffers.items()}


def extract_features(jobs: Iterable[ExtractionJob], dictionary: PatchDictionary, mode: str = "fixed",
                     threads: int | None = None) -> Iterator[ExtractionResult]:
    return FeaturePipeline(dictionary, mode, threads).run(jobs)


@dataclass
class BatchReport:
    images: int
    errors: int
    seconds: float

    @property
    def images_per_sec(self) -> float:
        return self.images / self.seconds if self.seconds > 0 else float("inf")


def classifier_columns(model) -> tuple[str, ...]:
    if model is None:
        return ()
    return ("score", "prediction")


def classify(model, scaled: np.ndarray) -> tuple:
    if isinstance(model, BoostModel):
        score = float(model.decision_function(scaled))
        return format(score, ".9g"), 1 if score >= 0 else -1
    if isinstance(model, SvmModel):
        scores = model.decision_function(scaled)[0]
        cls = int(np.argmax(scores))
        return format(float(scores[cls]), ".9g"), cls
    raise InvalidArgumentError(f"unsupported model type {type(model).__name__}")


def run_batch(manifest, dictionary: PatchDictionary, out, model=None, mode: str = "fixed",
              threads: int | None = None, resize: int | None = NOMINAL_SIDE, fmt: str | None = None) -> BatchReport:
    """Extract (and optionally classify) every manifest image, writing rows as they finish.

    ``fmt`` is ``"csv"`` or ``"hmxc"``; by default it follows the output
    file extension. Unreadable images are logged and skipped.
    """
    entries = read_manifest(manifest)
    out = Path(out)
    fmt = fmt or ("hmxc" if out.suffix.lower() == ".hmxc" else "csv")
    if fmt == "hmxc" and (mode != "fixed" or model is not None):
        raise UsageError("HMXC output holds raw fixed-mode features only, without classifier columns")

    def jobs():
        for i, e in enumerate(entries):
            if resize is None:
                yield ExtractionJob(i, e.path)
                continue
            try:
                img = load_pgm(e.path)
            except (HmaxError, OSError) as exc:
                log.error("skipping %s: %s", e.path, exc)
                continue
            yield ExtractionJob(i, img if (img.width, img.height) == (resize, resize) else resize_to(img, resize))

    pipe = FeaturePipeline(dictionary, mode, threads)
    start = time.perf_counter()
    n_ok = n_err = 0
    with open(out, "wb" if fmt == "hmxc" else "w", newline=None if fmt == "hmxc" else "") as fh:
        writer = HmxcWriter(fh, len(dictionary)) if fmt == "hmxc" else \
            FeatureCsvWriter(fh, len(dictionary), classifier_columns(model))
        for res in pipe.run(jobs()):
            if not res.ok:
                n_err += 1
                log.error("image %d failed: %s", res.image_id, res.error)
                continue
            n_ok += 1
            if res.c2.any_saturated:
                log.warning("image %d: %d features had no valid location", res.image_id, int(res.c2.saturated.sum()))
            if fmt == "hmxc":
                writer.write(res.image_id, res.c2.values)
            else:
                scaled = res.c2.scaled()
                writer.write(res.image_id, scaled, classify(model, scaled) if model is not None else ())
        if fmt == "hmxc":
            writer.close()
    n_err += len(entries) - n_ok - n_err
    elapsed = time.perf_counter() - start
    report = BatchReport(n_ok, n_err, elapsed)
    log.info("processed %d images (%d errors) in %.3fs: %.2f images/sec",
             n_ok, n_err, elapsed, report.images_per_sec)
    return report
