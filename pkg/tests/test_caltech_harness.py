import numpy as np

from hmaxfpga import synth
from hmaxfpga.imgcore import save_pgm

from caltech_harness import BACKGROUND, airplanes_vs_background, multiclass_one_vs_all


def fake_tree(root, n=6):
    rng = np.random.default_rng(0)
    for name, make in (("airplanes", synth.grating), (BACKGROUND, synth.isotropic_noise)):
        (root / name).mkdir()
        for i in range(n):
            save_pgm(make(rng, 96), root / name / f"{i}.pgm")
    return root


def test_harness_runs_on_a_small_tree(tmp_path):
    root = fake_tree(tmp_path)
    acc = airplanes_vs_background(root, per_size=4, rounds=10)
    assert 0.0 <= acc <= 1.0
    acc = multiclass_one_vs_all(root, per_size=4, n_train=3, n_test=3)
    assert 0.0 <= acc <= 1.0
