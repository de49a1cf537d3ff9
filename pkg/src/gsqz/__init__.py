"""gsqz: position quantization for Gaussian-splatting scenes under a
3DoF+ viewing volume, with the analysis tools to verify why it works."""

from .model_io import (CameraRig, Gaussian, GaussianModel, ModelParseError,
                       ModelValidationError, read_camera_rig, read_model,
                       write_camera_rig, write_model)
from .quantize import (OverheadMode, QuantizedModel, QuantScheme, RateReport, Region,
                       RigGeometry, classify, dequantize_model, dequantize_scalar,
                       derive_geometry, quantize_model, quantize_scalar, rate_report,
                       read_quantized, write_quantized)
from .scenes import GARDEN_DESK, SceneSpec, generate
from .spherical import (LocalFrame, ProjectionJacobian, SphericalCoord, check_jacobians,
                        direction, dp_dt, finite_diff_jacobian, from_spherical,
                        jacobian_exact, jacobian_leading, sphere_project, to_spherical)

__version__ = "0.1.0"

__all__ = [
    "CameraRig", "Gaussian", "GaussianModel", "ModelParseError", "ModelValidationError",
    "read_camera_rig", "read_model", "write_camera_rig", "write_model",
    "OverheadMode", "QuantizedModel", "QuantScheme", "RateReport", "Region",
    "RigGeometry", "classify", "dequantize_model", "dequantize_scalar",
    "derive_geometry", "quantize_model", "quantize_scalar", "rate_report",
    "read_quantized", "write_quantized",
    "GARDEN_DESK", "SceneSpec", "generate",
    "LocalFrame", "ProjectionJacobian", "SphericalCoord", "check_jacobians",
    "direction", "dp_dt", "finite_diff_jacobian", "from_spherical",
    "jacobian_exact", "jacobian_leading", "sphere_project", "to_spherical",
    "__version__",
]
