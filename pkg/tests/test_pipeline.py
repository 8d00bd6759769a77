import random
import threading
import time

import numpy as np
import pytest

from hmaxfpga import synth
from hmaxfpga.classifiers import BoostModel
from hmaxfpga.errors import UsageError
from hmaxfpga.featio import ManifestEntry, read_feature_csv, read_hmxc, write_manifest
from hmaxfpga.imgcore import GrayImage, load_pgm, save_pgm
from hmaxfpga.pipeline import (INPUT_QUEUE_DEPTH, BandBuffer, ExtractionJob, FeaturePipeline,
                               default_threads, extract_c2, extract_features, run_batch, supported_bands)
from hmaxfpga.s1_gabor import band_params, kernel_bank, s1_apply
from hmaxfpga.s2_patches import C2_SATURATED


@pytest.fixture(scope="module")
def images():
    rng = np.random.default_rng(99)
    return [synth.pink_noise(rng) for _ in range(5)]


def run(d, imgs, threads, mode="fixed", delay=None):
    pipe = FeaturePipeline(d, mode, threads, delay)
    out = list(pipe.run(ExtractionJob(i, img) for i, img in enumerate(imgs)))
    return out, pipe.stats


@pytest.mark.parametrize("threads", [2, 3, 8])
def test_parallel_equals_sequential(small_dictionary, images, threads):
    ref = [extract_c2(img, small_dictionary, "fixed", i) for i, img in enumerate(images)]
    out, stats = run(small_dictionary, images, threads)
    assert [r.image_id for r in out] == list(range(len(images)))
    assert all(r.ok for r in out)
    assert [r.c2 for r in out] == ref
    assert stats.max_input_depth <= INPUT_QUEUE_DEPTH
    assert all(v <= 1 for v in stats.max_band_outstanding.values())


def test_float_mode_parallel_bit_exact(small_dictionary, images):
    ref = [extract_c2(img, small_dictionary, "float", i) for i, img in enumerate(images[:2])]
    out, _ = run(small_dictionary, images[:2], 6, "float")
    assert [r.c2 for r in out] == ref


def test_four_identical_images(small_dictionary, images):
    out, _ = run(small_dictionary, [images[0]] * 4, 3)
    vals = [r.c2.values for r in out]
    assert all(np.array_equal(vals[0], v) for v in vals[1:])


def test_randomized_delays_no_deadlock(small_dictionary, images):
    rng = random.Random(5)
    lock = threading.Lock()

    def delay(stage):
        with lock:
            t = rng.random() * 0.01
        time.sleep(t)

    ref = [extract_c2(img, small_dictionary, "fixed", i) for i, img in enumerate(images)]
    for threads in (2, 4):
        out, stats = run(small_dictionary, images, threads, delay=delay)
        assert [r.c2 for r in out] == ref
        assert stats.max_input_depth <= INPUT_QUEUE_DEPTH


def test_slow_consumer_bounds_queue(small_dictionary, images):
    # a stalled S2 stage must back up the input queue rather than grow it
    def delay(stage):
        if stage == "s2":
            time.sleep(0.02)

    jobs = [images[i % len(images)] for i in range(12)]
    out, stats = run(small_dictionary, jobs, 2, delay=delay)
    assert len(out) == 12
    assert stats.max_input_depth <= INPUT_QUEUE_DEPTH


def test_band_buffer_flag_protocol():
    buf = BandBuffer(3)
    stop = threading.Event()
    order = []

    def producer():
        for seq in range(5):
            buf.publish(seq, f"payload{seq}", stop)
            order.append(("pub", seq))

    t = threading.Thread(target=producer)
    t.start()
    for seq in range(5):
        payload = buf.acquire(seq, stop)
        assert payload == f"payload{seq}"
        # the producer cannot publish seq+1 while the flag is high
        time.sleep(0.01)
        assert buf.flag and buf.seq == seq
        order.append(("rel", seq))
        buf.release()
    t.join(timeout=5)
    assert not t.is_alive()
    pubs = [s for kind, s in order if kind == "pub"]
    assert pubs == list(range(5))
    assert buf.max_outstanding == 1


def test_band_buffer_stop_unblocks():
    buf = BandBuffer(1)
    stop = threading.Event()
    stop.set()
    assert buf.acquire(0, stop) is None
    assert buf.publish(0, "x", threading.Event())
    assert buf.publish(1, "y", stop) is False


def test_job_errors_do_not_stop_stream(small_dictionary, images, tmp_path):
    jobs = [ExtractionJob(0, images[0]), ExtractionJob(1, tmp_path / "missing.pgm"),
            ExtractionJob(2, GrayImage(np.zeros((5, 5), np.uint8))), ExtractionJob(3, images[1])]
    for threads in (1, 2):
        out = list(extract_features(jobs, small_dictionary, "fixed", threads))
        assert [r.image_id for r in out] == [0, 1, 2, 3]
        assert [r.ok for r in out] == [True, False, False, True]
        assert "missing.pgm" in out[1].error


def brute_pool(grid, delta):
    n = grid.shape[-1] // delta - 1
    out = np.zeros(grid.shape[:-2] + (max(n, 0), max(n, 0)), grid.dtype)
    for r in range(max(n, 0)):
        for c in range(max(n, 0)):
            out[..., r, c] = grid[..., r * delta:r * delta + 2 * delta, c * delta:c * delta + 2 * delta].max(axis=(-2, -1))
    return out


def test_64_pixel_image_all_bands(small_dictionary):
    img = synth.pink_noise(np.random.default_rng(4), side=64)
    assert supported_bands(img) == list(range(1, 9))
    c2 = extract_c2(img, small_dictionary, "fixed")
    # oracle: S1 per scale, explicit crop-and-max, window pooling, scalar distances
    bank = kernel_bank(True)
    grids = []
    for b in range(1, 9):
        delta, (p1, p2) = band_params(b)
        a = s1_apply(img, bank[p1.j - 1], "fixed").maps
        c = s1_apply(img, bank[p2.j - 1], "fixed").maps
        grids.append(brute_pool(np.maximum(a[:, 1:-1, 1:-1], c), delta))
    for i, p in enumerate(small_dictionary):
        best = C2_SATURATED
        s = p.side
        for g in grids:
            n = g.shape[-1]
            for r in range(n - s + 1):
                for q in range(n - s + 1):
                    diff = g[:, r:r + s, q:q + s].astype(np.int64) - p.coeffs.astype(np.int64)
                    best = min(best, int((diff * diff).sum()))
        assert c2.values[i] == best


def test_default_threads_env(monkeypatch):
    monkeypatch.setenv("HMAX_THREADS", "8")
    assert default_threads() == 8
    monkeypatch.setenv("HMAX_THREADS", "x")
    with pytest.raises(UsageError):
        default_threads()
    monkeypatch.delenv("HMAX_THREADS")
    assert 1 <= default_threads() <= 4


@pytest.fixture()
def manifest(tmp_path, images):
    paths = []
    for i in range(10):
        p = tmp_path / f"img{i}.pgm"
        save_pgm(images[i % len(images)], p)
        paths.append(ManifestEntry(p.name, i % 2))
    m = tmp_path / "list.txt"
    write_manifest(paths, m)
    return m


def test_run_batch_rows_in_order(manifest, small_dictionary, tmp_path):
    report = run_batch(manifest, small_dictionary, tmp_path / "f.csv", threads=2)
    assert report.images == 10 and report.errors == 0 and report.images_per_sec > 0
    ids, X, extra = read_feature_csv(tmp_path / "f.csv")
    assert ids.tolist() == list(range(10)) and X.shape == (10, len(small_dictionary))
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["image_id", "f0000", "f0001"]


def test_run_batch_with_boost_model(manifest, small_dictionary, tmp_path):
    n = len(small_dictionary)
    model = BoostModel(np.zeros((1, 7), np.int64), np.full((1, 7), 1e-3), np.linspace(-1, 1, 8)[None], n)
    run_batch(manifest, small_dictionary, tmp_path / "f.csv", model=model, threads=1)
    ids, X, extra = read_feature_csv(tmp_path / "f.csv")
    assert list(extra) == ["score", "prediction"]
    scores = model.decision_function(X)
    assert np.allclose(np.asarray(extra["score"], float), scores, rtol=1e-8)
    assert np.array_equal(np.asarray(extra["prediction"], int), np.where(scores >= 0, 1, -1))


def test_run_batch_byte_identical_reruns(manifest, small_dictionary, tmp_path):
    outs = []
    for i, threads in enumerate((1, 1, 8)):
        run_batch(manifest, small_dictionary, tmp_path / f"r{i}.csv", threads=threads)
        run_batch(manifest, small_dictionary, tmp_path / f"r{i}.hmxc", threads=threads)
        outs.append(((tmp_path / f"r{i}.csv").read_bytes(), (tmp_path / f"r{i}.hmxc").read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    ids, raw = read_hmxc(tmp_path / "r0.hmxc")
    ref = extract_c2(load_pgm(manifest.parent / "img3.pgm"), small_dictionary, "fixed")
    assert ids.tolist() == list(range(10)) and np.array_equal(raw[3], ref.values)


def test_run_batch_skips_missing(tmp_path, small_dictionary, images):
    save_pgm(images[0], tmp_path / "a.pgm")
    m = tmp_path / "m.txt"
    m.write_text("a.pgm\nnot_there.pgm 1\na.pgm\n")
    report = run_batch(m, small_dictionary, tmp_path / "o.csv", threads=2)
    assert (report.images, report.errors) == (2, 1)


def test_run_batch_empty_manifest(tmp_path, small_dictionary):
    (tmp_path / "e.txt").write_text("\n")
    with pytest.raises(UsageError):
        run_batch(tmp_path / "e.txt", small_dictionary, tmp_path / "o.csv")


def test_hmxc_needs_fixed_mode(manifest, small_dictionary, tmp_path):
    with pytest.raises(UsageError):
        run_batch(manifest, small_dictionary, tmp_path / "o.hmxc", mode="float")
