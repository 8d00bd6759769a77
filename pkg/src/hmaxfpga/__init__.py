"""HMAX feature extraction (S1, C1, S2, C2) in float and fixed-point arithmetic,
with gentle boosting / linear SVM classifiers and an analytic hardware model."""

from .c1_pool import C1Maps, c1_pool, cross_scale_max
from .errors import HmaxError
from .imgcore import GrayImage, load_pgm, resize_to, save_pgm
from .pipeline import FeaturePipeline, c1_bands, extract_c2, extract_features, run_batch
from .s1_gabor import S1Maps, S1Params, band_params, make_kernels, s1_apply, support_sums
from .s2_patches import (C2Vector, Patch, PatchDictionary, c2_reduce, imprint, load_dictionary,
                         s2_distance_map, save_dictionary)

__version__ = "0.1.0"

__all__ = [
    "C1Maps", "C2Vector", "FeaturePipeline", "GrayImage", "HmaxError", "Patch", "PatchDictionary",
    "S1Maps", "S1Params", "band_params", "c1_bands", "c1_pool", "c2_reduce", "cross_scale_max",
    "extract_c2", "extract_features", "imprint", "load_dictionary", "load_pgm", "make_kernels",
    "resize_to", "run_batch", "s1_apply", "s2_distance_map", "save_dictionary", "save_pgm", "support_sums",
]
