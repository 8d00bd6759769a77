import struct

import numpy as np
import pytest

from hmaxfpga.c1_pool import C1Maps
from hmaxfpga.errors import FormatError, ImprintExhaustionError
from hmaxfpga.s2_patches import (C2_SATURATED, PATCH_SIZES, C2Accumulator, Patch, PatchDictionary, c2_reduce,
                                 imprint, load_dictionary, max_distance, s2_c2, s2_distance_map,
                                 save_dictionary)


def c1(b, arr, mode="fixed"):
    return C1Maps(b, np.asarray(arr), mode)


def rand_c1(rng, side, b=1):
    return c1(b, rng.integers(0, 65536, (4, side, side)).astype(np.uint16))


def brute_distance(grid, coeffs):
    """Scalar squared distance at every anchor, in Python ints."""
    s = coeffs.shape[1]
    h, w = grid.shape[1:]
    out = np.zeros((h - s + 1, w - s + 1), dtype=object)
    for r in range(h - s + 1):
        for c in range(w - s + 1):
            out[r, c] = sum((int(grid[t, r + i, c + j]) - int(coeffs[t, i, j])) ** 2
                            for t in range(4) for i in range(s) for j in range(s))
    return out


def test_max_distance_fits_42_bits():
    assert max_distance(4) == 4 * 256 * 65535**2 < 2**42
    assert C2_SATURATED == 2**42 - 1


def test_imprint_draws_from_the_nine_anchors():
    rng = np.random.default_rng(0)
    # band 2 admits every size; band 1 (6x6) admits only k=1 at (6-4+1)^2 anchors
    corpus = [[rand_c1(rng, 6, b=1), rand_c1(rng, 16, b=2)]]
    d = imprint(corpus, per_size=3000, seed=3)
    band1 = {(p.row, p.col) for p in d if p.k == 1 and p.band == 1}
    assert band1 <= {(r, c) for r in range(3) for c in range(3)}
    assert len(band1) == 9
    assert not any(p.band == 1 for p in d if p.k > 1)
    for p in d:
        grid = corpus[0][p.band - 1].maps
        assert np.array_equal(p.coeffs, grid[:, p.row:p.row + p.side, p.col:p.col + p.side])


def test_imprint_deterministic(small_dictionary, noise_corpus):
    from hmaxfpga.pipeline import c1_bands
    again = imprint([c1_bands(img, "fixed") for img in noise_corpus], per_size=16, seed=7)
    assert again == small_dictionary
    assert small_dictionary.counts() == {1: 16, 2: 16, 3: 16, 4: 16}
    other = imprint([c1_bands(img, "fixed") for img in noise_corpus], per_size=16, seed=8)
    assert other != small_dictionary


def test_imprint_exhaustion_names_size():
    rng = np.random.default_rng(1)
    with pytest.raises(ImprintExhaustionError) as exc:
        imprint([[rand_c1(rng, 12)]], per_size=1)
    assert exc.value.size_index == 4


def test_self_match_zero():
    rng = np.random.default_rng(2)
    grid = rand_c1(rng, 10)
    p = Patch(2, grid.maps[:, 1:9, 2:10])
    dm = s2_distance_map(grid, p)
    assert dm.shape == (3, 3) and dm[1, 2] == 0
    assert np.all(np.delete(dm.ravel(), 1 * 3 + 2) > 0)


def test_all_zero():
    dm = s2_distance_map(c1(1, np.zeros((4, 9, 9), np.uint16)), Patch(1, np.zeros((4, 4, 4))))
    assert dm.shape == (6, 6) and np.all(dm == 0)


def test_random_8x8_brute_force():
    rng = np.random.default_rng(3)
    grid = rand_c1(rng, 8)
    coeffs = rng.integers(0, 65536, (4, 4, 4)).astype(np.uint16)
    dm = s2_distance_map(grid, Patch(1, coeffs))
    assert dm.dtype == np.int64
    assert dm.tolist() == brute_distance(grid.maps, coeffs).tolist()


def test_worst_case_distance_exact():
    grid = c1(1, np.full((4, 16, 16), 65535, np.uint16))
    dm = s2_distance_map(grid, Patch(4, np.zeros((4, 16, 16))))
    assert dm.tolist() == [[max_distance(4)]]


def test_undersized_band_gives_empty_map():
    dm = s2_distance_map(c1(8, np.zeros((4, 7, 7), np.uint16)), Patch(2, np.zeros((4, 8, 8))))
    assert dm.size == 0


def test_translation_consistency():
    rng = np.random.default_rng(4)
    big = rng.integers(0, 65536, (4, 14, 14)).astype(np.uint16)
    p = Patch(1, rng.integers(0, 65536, (4, 4, 4)))
    a = s2_distance_map(c1(1, big[:, :12, :12]), p)
    b = s2_distance_map(c1(1, big[:, 2:14, 2:14]), p)
    assert np.array_equal(a[2:, 2:], b[:-2, :-2])


def test_c2_reduce_examples():
    v = c2_reduce([[np.array([[17]])]])
    assert v.values.tolist() == [17] and not v.any_saturated
    maps = [[np.array([[5, 9], [7, 3]]), np.array([[4]])], [np.array([[8, 0]])]]
    v = c2_reduce(maps)
    assert v.values.tolist() == [3, 0]


def test_c2_reduce_saturates_missing():
    v = c2_reduce([[np.zeros((0, 0))], [np.array([[2]])]])
    assert v.values.tolist() == [C2_SATURATED, 2]
    assert v.saturated.tolist() == [True, False]


def test_c2_random_1280_flatten_oracle():
    rng = np.random.default_rng(5)
    maps = [[rng.integers(0, 2**41, (rng.integers(0, 6), rng.integers(1, 6))) for _ in range(8)]
            for _ in range(1280)]
    v = c2_reduce(maps)
    oracle = [min(int(x) for m in ms for x in m.ravel()) for ms in maps]
    assert v.values.tolist() == oracle
    # evaluation order never matters
    assert c2_reduce([ms[::-1] for ms in maps]).values.tolist() == oracle


def test_c2_monotone_under_more_bands():
    rng = np.random.default_rng(6)
    patches = [Patch(1, rng.integers(0, 65536, (4, 4, 4))) for _ in range(5)]
    d = PatchDictionary(patches)
    bands = [rand_c1(rng, 10, b=1), rand_c1(rng, 8, b=2), rand_c1(rng, 6, b=3)]
    few = s2_c2(bands[:1], d)
    more = s2_c2(bands, d)
    assert np.all(more.values <= few.values)
    acc = C2Accumulator(d, "fixed")
    for band in bands[::-1]:
        acc.update(np.arange(5), np.stack([s2_distance_map(band, p) for p in patches]))
    assert np.array_equal(acc.finish().values, more.values)


def test_s2_c2_matches_brute_force(small_dictionary, noise_corpus):
    from hmaxfpga.pipeline import c1_bands
    bands = c1_bands(noise_corpus[0], "fixed")
    v = s2_c2(bands, small_dictionary)
    for i in (0, 17, 40, 63):
        p = small_dictionary[i]
        oracle = min(min(brute_distance(b.maps, p.coeffs).ravel().tolist(), default=C2_SATURATED)
                     for b in bands if b.shape[0] >= p.side)
        assert v.values[i] == oracle


def test_scaled_feature_divisor():
    d = PatchDictionary([Patch(k, np.zeros((4, 4 * k, 4 * k))) for k in PATCH_SIZES])
    v = c2_reduce([[np.array([[max_distance(k)]])] for k in PATCH_SIZES], d.sizes)
    assert np.allclose(v.scaled(), 1.0)


def test_dictionary_round_trip(tmp_path, small_dictionary):
    save_dictionary(small_dictionary, tmp_path / "d.hmxp")
    back = load_dictionary(tmp_path / "d.hmxp")
    assert back == small_dictionary
    assert [p.provenance for p in back] == [p.provenance for p in small_dictionary]
    save_dictionary(back, tmp_path / "e.hmxp")
    assert (tmp_path / "d.hmxp").read_bytes() == (tmp_path / "e.hmxp").read_bytes()


def hand_built_file():
    """Two patches written field by field from the documented layout."""
    out = bytearray(b"HMXP")
    out += (1).to_bytes(4, "little") + (99).to_bytes(8, "little") + (2).to_bytes(4, "little")
    out += bytes([1]) + (5).to_bytes(2, "little") + bytes([3]) + (7).to_bytes(2, "little") + (8).to_bytes(2, "little")
    out += b"".join(v.to_bytes(2, "little") for v in range(64))
    out += bytes([2]) + (6).to_bytes(2, "little") + bytes([1]) + (0).to_bytes(2, "little") + (1).to_bytes(2, "little")
    out += b"".join((1000 + v).to_bytes(2, "little") for v in range(256))
    return bytes(out)


def test_hand_built_two_patch_file(tmp_path):
    (tmp_path / "h.hmxp").write_bytes(hand_built_file())
    d = load_dictionary(tmp_path / "h.hmxp")
    assert d.seed == 99 and len(d) == 2
    a, b = d
    assert (a.k, a.provenance) == (1, (5, 3, 7, 8))
    assert a.coeffs[0, 0].tolist() == [0, 1, 2, 3]
    assert a.coeffs[1, 0, 0] == 16 and a.coeffs[3, 3, 3] == 63
    assert (b.k, b.provenance) == (2, (6, 1, 0, 1))
    assert b.coeffs[0, 1, 0] == 1008 and b.coeffs[3, 7, 7] == 1255


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-1],
    lambda b: b[:16] + struct.pack("<I", 3) + b[20:],
    lambda b: b[:16] + struct.pack("<I", 1) + b[20:],
    lambda b: b[:10],
])
def test_corrupt_dictionary_files(tmp_path, mutate):
    (tmp_path / "bad.hmxp").write_bytes(mutate(hand_built_file()))
    with pytest.raises(FormatError):
        load_dictionary(tmp_path / "bad.hmxp")


def test_parallel_budget_matches_480000():
    # 250 patches per size, 4 orientations, sum of (4k)^2 coefficients
    assert 250 * 4 * sum((4 * k) ** 2 for k in PATCH_SIZES) == 480000
