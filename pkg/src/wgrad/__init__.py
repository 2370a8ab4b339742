"""Transport-based aggregation of perturbed gradient attributions."""

__version__ = "0.1.0"

from .fields import (
    Field2D,
    GridSpec,
    RoiBox,
    SpatialMeasure,
    StateTensor,
    normalize_to_measure,
    read_raster,
    roi_mean,
    write_raster,
    zscore,
)
from .attribution import (
    AttributionRequest,
    AttributionResult,
    base_grad,
    integrated_grad,
    run_method,
    smooth_grad,
    var_grad,
    wasserstein_grad,
)
from .transport import (
    BarycenterConfig,
    CostSpec,
    SinkhornConfig,
    TransportPlan,
    conv_barycenter,
    exact_w2_small,
    mass_flux,
    sinkhorn_plan,
)
from .toymodel import SynthConfig, ToyForecaster, forward_step, rollout, synth_sequence

__all__ = [
    "Field2D",
    "GridSpec",
    "RoiBox",
    "SpatialMeasure",
    "StateTensor",
    "normalize_to_measure",
    "read_raster",
    "roi_mean",
    "write_raster",
    "zscore",
    "AttributionRequest",
    "AttributionResult",
    "base_grad",
    "integrated_grad",
    "run_method",
    "smooth_grad",
    "var_grad",
    "wasserstein_grad",
    "BarycenterConfig",
    "CostSpec",
    "SinkhornConfig",
    "TransportPlan",
    "conv_barycenter",
    "exact_w2_small",
    "mass_flux",
    "sinkhorn_plan",
    "SynthConfig",
    "ToyForecaster",
    "forward_step",
    "rollout",
    "synth_sequence",
]
