"""smokestyle: transport-based stylization of volumetric smoke.

The package optimizes a velocity field, expressed through curl-free and
divergence-free potentials, that advects a smoke density so its rendered
views pick up the texture statistics of a style exemplar.  Sub-modules:

- fields: cell-centered grids, discrete grad/curl/div, resampling, VF32 I/O
- transport: semi-Lagrangian and MacCormack advection with analytic adjoints
- render: orthographic absorption-only renderer with analytic adjoints
- features: small numpy CNN, Gram/content/style losses, NSTW weight files
- stylize: multiscale optimization loop and temporal blending
- estimator: scikit-learn style wrapper around the optimizer
- gradcheck: finite-difference verification of every adjoint
- cli: command-line entry points
"""

from smokestyle.estimator import SmokeStylizer
from smokestyle.features import (
    ContentParams,
    FeatureNetwork,
    StyleParams,
    init_random,
    load_activations,
    load_weights,
    save_activations,
    save_weights,
    style_params_from_image,
)
from smokestyle.fields import (
    ScalarField3,
    SoftMask,
    VectorField3,
    compose_velocity,
    curl,
    divergence,
    gradient,
    load_vf32,
    resample_to,
    sample_trilinear,
    save_vf32,
    soft_mask_from_density,
)
from smokestyle.render import (
    CameraPose,
    GrayImage,
    RenderConfig,
    load_pgm,
    render,
    save_pgm,
    view_align,
)
from smokestyle.stylize import (
    StylizeConfig,
    stylize_frame,
    stylize_sequence,
    temporal_flicker_metric,
)
from smokestyle.transport import (
    VelocitySequence,
    advect_maccormack,
    advect_sl,
)

__version__ = "0.1.0"

__all__ = [
    "CameraPose",
    "ContentParams",
    "FeatureNetwork",
    "GrayImage",
    "RenderConfig",
    "ScalarField3",
    "SmokeStylizer",
    "SoftMask",
    "StyleParams",
    "StylizeConfig",
    "VectorField3",
    "VelocitySequence",
    "advect_maccormack",
    "advect_sl",
    "compose_velocity",
    "curl",
    "divergence",
    "gradient",
    "init_random",
    "load_activations",
    "load_pgm",
    "load_vf32",
    "load_weights",
    "render",
    "resample_to",
    "sample_trilinear",
    "save_activations",
    "save_pgm",
    "save_vf32",
    "save_weights",
    "soft_mask_from_density",
    "style_params_from_image",
    "stylize_frame",
    "stylize_sequence",
    "temporal_flicker_metric",
    "view_align",
    "__version__",
]
