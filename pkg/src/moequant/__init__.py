"""High-rate analysis of zero-compute, one-sparse mixture-of-experts regression.

Each input is routed to one region of a partition of [0, 1]^d and predicted by
that region's constant. The package designs partitions from segment
densities, evaluates exact and asymptotic test errors, and measures how
learning the constants from data trades approximation against estimation.
"""
from .density1d import (DensityFn, Segmentation1D, optimal_density_1d,
                        quantizer_density, segmentation_from_density,
                        uniform_segmentation)
from .model import (Dataset, InputDistribution, NoiseModel, TargetFunction,
                    make_input_dist, make_target, sample_dataset)
from .numerics import (MonotoneTable, QuadratureSpec, RngStream,
                       cumulative_table, integrate, invert_monotone)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "DensityFn", "InputDistribution", "MonotoneTable", "NoiseModel",
    "QuadratureSpec", "RngStream", "Segmentation1D", "TargetFunction",
    "cumulative_table", "integrate", "invert_monotone", "make_input_dist",
    "make_target", "optimal_density_1d", "quantizer_density", "sample_dataset",
    "segmentation_from_density", "uniform_segmentation",
]
