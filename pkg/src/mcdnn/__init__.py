"""Multi-column max-pooling CNNs for isolated character recognition."""
from .arch import ArchSpec, parse_arch, render_arch, infer_shapes, count_cost
from .imageprep import Order, PreprocessConfig, preprocess
from .nn import Column, init_column, forward_column, backward_column, grad_check
from .ensemble import EnsembleSpec, evaluate, average_scores, predict_topk

__version__ = "0.1.0"
