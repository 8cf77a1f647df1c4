"""Centralized feature pyramid neck in NumPy.

Forward passes, a reverse-mode tape, parameter/FLOP accounting and a
small binary tensor format. The submodules are the real API; the most
used names are re-exported here.
"""

from .analysis import (
    FLOP_CONSTANTS,
    CostReport,
    GradReport,
    LatencyStats,
    bench_latency,
    cost_report,
    count_flops,
    count_params,
    grad_check,
    gradcheck_suite,
)
from .estimator import CentralizedFeaturePyramid, ExplicitVisualCenter
from .evc import Codebook, EvcConfig, EvcParams, evc_forward, init_evc_params, lvc_encode, lvc_forward
from .gcr import CfpParams, GcrConfig, Pyramid, PyramidError, cfp_forward, gcr_regulate_level, init_cfp_params
from .io import RunConfig, load_params, read_tensor, save_params, write_tensor
from .tensor import ConvSpec, NonFiniteError, ShapeError, Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "FLOP_CONSTANTS",
    "CentralizedFeaturePyramid",
    "CfpParams",
    "Codebook",
    "ConvSpec",
    "CostReport",
    "EvcConfig",
    "EvcParams",
    "ExplicitVisualCenter",
    "GcrConfig",
    "GradReport",
    "LatencyStats",
    "NonFiniteError",
    "Pyramid",
    "PyramidError",
    "RunConfig",
    "ShapeError",
    "Tape",
    "Tensor",
    "bench_latency",
    "cfp_forward",
    "cost_report",
    "count_flops",
    "count_params",
    "evc_forward",
    "gcr_regulate_level",
    "grad_check",
    "gradcheck_suite",
    "init_cfp_params",
    "init_evc_params",
    "load_params",
    "lvc_encode",
    "lvc_forward",
    "read_tensor",
    "save_params",
    "write_tensor",
]
