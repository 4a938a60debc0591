"""Classical-to-quantum knowledge distillation on a numpy statevector simulator."""
from . import cnn, data, distill, encode, qsim, reduce, stats, train
from .errors import QDistillError

__version__ = "0.1.0"

__all__ = ["cnn", "data", "distill", "encode", "qsim", "reduce", "stats", "train",
           "QDistillError", "__version__"]
