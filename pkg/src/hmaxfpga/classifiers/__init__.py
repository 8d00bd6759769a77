from .boost import (BoostModel, boost_predict, exp_loss, load_boost, save_boost,
                    train_gentleboost)
from .roc import eer_accuracy, equal_error_rate, roc_sweep
from .svm import SvmModel, load_svm, save_svm, svm_memory_bits, train_linear_svm_ova


def load_model(path):
    """Load either model kind, dispatching on the file magic."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"HMXS":
        return load_svm(path)
    return load_boost(path)


def save_model(model, path):
    if isinstance(model, SvmModel):
        save_svm(model, path)
    else:
        save_boost(model, path)


__all__ = [
    "BoostModel", "SvmModel", "boost_predict", "eer_accuracy", "equal_error_rate", "exp_loss",
    "load_boost", "load_model", "load_svm", "roc_sweep", "save_boost", "save_model", "save_svm",
    "svm_memory_bits", "train_gentleboost", "train_linear_svm_ova",
]
