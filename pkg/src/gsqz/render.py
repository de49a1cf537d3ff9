"""Minimal CPU splatting renderer.

Gaussians are projected to 2D (EWA-style: pinhole Jacobian at the
center), depth-sorted front to back and alpha-composited per pixel.
Good enough to measure PSNR differences between quantization schemes;
pixel parity with the reference GPU rasterizer is a non-goal, so PSNR
comparisons must always render both models with this same renderer.

Fixed conventions (the upstream pipeline's, recorded here because the
math does not force them): 0.3 px^2 added to the projected covariance
diagonal, per-pixel alpha clamped to 0.99 and skipped below 1/255,
compositing stops once transmittance drops under 1e-4, near plane at
z = 0.01. Depth ties are broken by original gaussian index so the
output is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .model_io import CameraRig, GaussianModel

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NEAR_PLANE = 0.01
COV2D_REGULARIZATION = 0.3
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TRANSMITTANCE_STOP = 1e-4
FRUSTUM_MARGIN = 1.3  # cull centers projecting outside this multiple of the view
_Q_CUTOFF = 18.0  # exp(-9) ~ 1.2e-4: alpha is below ALPHA_SKIP past this

SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
          -1.0925484305920792, 0.5462742152960396)
_SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
          0.3731763325901154, -0.4570457994644658, 1.445305721320277,
          -0.5900435899266435)


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: world center, world-to-camera rotation, intrinsics."""

    center: NDArray[np.float64]
    rotation: NDArray[np.float64]  # (3, 3) orthonormal, rows = camera axes
    focal_px: float
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, np.float64))
        R = np.asarray(self.rotation, np.float64)
        object.__setattr__(self, "rotation", R)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise RenderError("camera rotation is not orthonormal")
        if not self.focal_px > 0:
            raise RenderError(f"focal_px must be positive, got {self.focal_px}")

    @property
    def principal_point(self) -> tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0


def look_at(center, direction, focal_px: float, width: int, height: int) -> Camera:
    """Camera at ``center`` looking along ``direction`` (world z-up hint)."""
    z = np.asarray(direction, np.float64)
    n = np.linalg.norm(z)
    if n == 0:
        raise RenderError("view direction must be non-zero")
    z = z / n
    up = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.999 else np.array([0.0, 1.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Camera(center=np.asarray(center, np.float64), rotation=np.stack([x, y, z]),
                  focal_px=focal_px, width=width, height=height)


def fibonacci_directions(n: int) -> NDArray[np.float64]:
    """n roughly-even unit directions (deterministic)."""
    i = np.arange(n, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def rig_cameras(rig: CameraRig) -> list[Camera]:
    """One outward-looking camera per rig center.

    The rig file stores centers only (orientation is free in the 3DoF+
    setting); views get deterministic Fibonacci-sphere directions so
    that renders of the same rig are reproducible.
    """
    dirs = fibonacci_directions(rig.n_cameras)
    w, h = rig.image_size
    return [look_at(c, d, rig.focal_px, w, h) for c, d in zip(rig.centers, dirs)]


@dataclass(frozen=True)
class Splat2D:
    """A gaussian after projection to the image plane."""

    mean_px: NDArray[np.float64]
    cov2d: NDArray[np.float64]  # (2, 2), regularized
    depth: float
    color: NDArray[np.float64]
    alpha_max: float


def quaternion_to_rotation(q: NDArray) -> NDArray[np.float64]:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def covariance_3d(log_scale, rotation) -> NDArray[np.float64]:
    """Sigma = R S S^T R^T with S = diag(exp(log_scale))."""
    R = quaternion_to_rotation(rotation)
    S = np.exp(np.asarray(log_scale, np.float64))
    L = R * S[None, :]
    return L @ L.T


def _batch_covariances(log_scales, rotations) -> NDArray[np.float64]:
    q = np.asarray(rotations, np.float64)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    L = R * np.exp(log_scales)[:, None, :]
    return L @ np.transpose(L, (0, 2, 1))


def eval_sh(sh: NDArray, dirs: NDArray, degree: int) -> NDArray[np.float64]:
    """Evaluate per-gaussian SH color along unit view directions.

    ``sh`` is (N, 3, n_coeffs); returns (N, 3) colors clamped at 0 after
    the +0.5 offset the splatting pipeline uses.
    """
    out = SH_C0 * sh[:, :, 0]
    if degree >= 1:
        x, y, z = dirs[:, 0:1], dirs[:, 1:2], dirs[:, 2:3]
        out = out - _SH_C1 * y * sh[:, :, 1] + _SH_C1 * z * sh[:, :, 2] - _SH_C1 * x * sh[:, :, 3]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out = (out
               + _SH_C2[0] * xy * sh[:, :, 4]
               + _SH_C2[1] * yz * sh[:, :, 5]
               + _SH_C2[2] * (2.0 * zz - xx - yy) * sh[:, :, 6]
               + _SH_C2[3] * xz * sh[:, :, 7]
               + _SH_C2[4] * (xx - yy) * sh[:, :, 8])
    if degree >= 3:
        out = (out
               + _SH_C3[0] * y * (3 * xx - yy) * sh[:, :, 9]
               + _SH_C3[1] * xy * z * sh[:, :, 10]
               + _SH_C3[2] * y * (4 * zz - xx - yy) * sh[:, :, 11]
               + _SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy) * sh[:, :, 12]
               + _SH_C3[4] * x * (4 * zz - xx - yy) * sh[:, :, 13]
               + _SH_C3[5] * z * (xx - yy) * sh[:, :, 14]
               + _SH_C3[6] * x * (xx - 3 * yy) * sh[:, :, 15])
    return np.maximum(out + 0.5, 0.0)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _project_batch(model: GaussianModel, cam: Camera, sh_mode: str):
    """Project all gaussians; returns arrays for the visible ones in depth order."""
    pos = model.positions
    p_cam = (pos - cam.center) @ cam.rotation.T
    depth = p_cam[:, 2]
    keep = depth > NEAR_PLANE

    f = cam.focal_px
    cx, cy = cam.principal_point
    z = np.where(keep, depth, 1.0)
    mean_px = np.stack([f * p_cam[:, 0] / z + cx, f * p_cam[:, 1] / z + cy], axis=1)

    # Frustum-margin cull before the EWA linearization: for points far
    # outside the view (z -> 0 sideways) the Jacobian footprint diverges
    # and would blanket the image.
    keep &= np.abs(mean_px[:, 0] - cx) <= FRUSTUM_MARGIN * cam.width / 2
    keep &= np.abs(mean_px[:, 1] - cy) <= FRUSTUM_MARGIN * cam.height / 2

    cov3d = _batch_covariances(model.log_scales, model.rotations)
    cov_cam = cam.rotation @ cov3d @ cam.rotation.T
    x_c, y_c = p_cam[:, 0], p_cam[:, 1]
    # pinhole Jacobian rows: [f/z, 0, -f x/z^2], [0, f/z, -f y/z^2]
    J = np.zeros((pos.shape[0], 2, 3))
    J[:, 0, 0] = f / z
    J[:, 0, 2] = -f * x_c / (z * z)
    J[:, 1, 1] = f / z
    J[:, 1, 2] = -f * y_c / (z * z)
    cov2d = J @ cov_cam @ np.transpose(J, (0, 2, 1))
    cov2d[:, 0, 0] += COV2D_REGULARIZATION
    cov2d[:, 1, 1] += COV2D_REGULARIZATION

    # 3-sigma ellipse bound from the largest eigenvalue
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(0.0, mid * mid - (a * c - b * b)))
    radius = 3.0 * np.sqrt(lam_max)
    keep &= (mean_px[:, 0] + radius >= 0) & (mean_px[:, 0] - radius <= cam.width - 1)
    keep &= (mean_px[:, 1] + radius >= 0) & (mean_px[:, 1] - radius <= cam.height - 1)

    alpha_max = _sigmoid(model.opacity_logits)
    keep &= alpha_max >= ALPHA_SKIP

    if sh_mode == "dc_only":
        color = np.maximum(SH_C0 * model.sh_dc + 0.5, 0.0)
    elif sh_mode == "full":
        degree = model.sh_degree
        n_coeffs = (degree + 1) ** 2
        sh = np.zeros((pos.shape[0], 3, n_coeffs))
        sh[:, :, 0] = model.sh_dc
        rest = model.sh_rest
        if rest is not None:
            sh[:, :, 1:] = rest.reshape(pos.shape[0], 3, n_coeffs - 1)
        view = pos - cam.center
        view /= np.maximum(np.linalg.norm(view, axis=1, keepdims=True), 1e-12)
        color = eval_sh(sh, view, degree)
    else:
        raise RenderError(f"unknown sh_mode {sh_mode!r}")
    color = np.clip(color, 0.0, 1.0)

    idx = np.flatnonzero(keep)
    order = idx[np.argsort(depth[idx], kind="stable")]  # ties keep original index order
    det = (a * c - b * b)[order]
    inv = np.stack([c[order] / det, -b[order] / det, a[order] / det], axis=1)
    return (mean_px[order], inv, radius[order], alpha_max[order], color[order])


def project_splat(gaussian, cam: Camera, sh_mode: str = "dc_only") -> Splat2D | None:
    """Project a single gaussian; None when culled (behind the near plane,
    3-sigma ellipse off screen, or effectively transparent)."""
    model = GaussianModel.from_arrays(
        positions=gaussian.position[None], log_scales=gaussian.log_scale[None],
        rotations=gaussian.rotation[None], opacity_logits=[gaussian.opacity_logit],
        sh_dc=gaussian.sh_dc[None],
        sh_rest=None if gaussian.sh_rest is None else gaussian.sh_rest[None])
    mean_px, inv, radius, alpha_max, color = _project_batch(model, cam, sh_mode)
    if mean_px.shape[0] == 0:
        return None
    a, b, c = inv[0]
    det = a * c - b * b
    cov2d = np.array([[c, -b], [-b, a]]) / det
    depth = float((model.positions[0] - cam.center) @ cam.rotation[2])
    return Splat2D(mean_px=mean_px[0], cov2d=cov2d, depth=depth,
                   color=color[0], alpha_max=float(alpha_max[0]))


def _composite_rows_py(mean_px, inv_cov, radius, alpha_max, color, height, width):
    """Pure-numpy fallback: per-splat patch updates, front to back."""
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    for i in range(mean_px.shape[0]):
        mx, my = mean_px[i]
        r = radius[i]
        x0, x1 = max(0, int(np.floor(mx - r))), min(width - 1, int(np.ceil(mx + r)))
        y0, y1 = max(0, int(np.floor(my - r))), min(height - 1, int(np.ceil(my + r)))
        if x0 > x1 or y0 > y1:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64) - mx
        ys = np.arange(y0, y1 + 1, dtype=np.float64) - my
        dx = xs[None, :]
        dy = ys[:, None]
        a, b, c = inv_cov[i]
        q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
        patch_t = trans[y0:y1 + 1, x0:x1 + 1]
        alpha = np.where(q <= _Q_CUTOFF, alpha_max[i] * np.exp(-0.5 * q), 0.0)
        alpha = np.minimum(alpha, ALPHA_CLAMP)
        active = (alpha >= ALPHA_SKIP) & (patch_t >= TRANSMITTANCE_STOP)
        alpha = np.where(active, alpha, 0.0)
        contrib = patch_t * alpha
        img[y0:y1 + 1, x0:x1 + 1] += contrib[:, :, None] * color[i][None, None, :]
        patch_t *= 1.0 - alpha
    return img, trans


if HAVE_NUMBA:

    @numba.njit(parallel=True, cache=True)
    def _composite_rows_jit(mean_px, inv_cov, radius, alpha_max, color, height, width):
        img = np.zeros((height, width, 3))
        trans = np.ones((height, width))
        n = mean_px.shape[0]
        y0s = np.empty(n, np.int64)
        y1s = np.empty(n, np.int64)
        x0s = np.empty(n, np.int64)
        x1s = np.empty(n, np.int64)
        for i in range(n):
            y0s[i] = max(0, int(np.floor(mean_px[i, 1] - radius[i])))
            y1s[i] = min(height - 1, int(np.ceil(mean_px[i, 1] + radius[i])))
            x0s[i] = max(0, int(np.floor(mean_px[i, 0] - radius[i])))
            x1s[i] = min(width - 1, int(np.ceil(mean_px[i, 0] + radius[i])))
        for y in numba.prange(height):
            for i in range(n):
                if y < y0s[i] or y > y1s[i] or x0s[i] > x1s[i]:
                    continue
                a, b, c = inv_cov[i, 0], inv_cov[i, 1], inv_cov[i, 2]
                dy = y - mean_px[i, 1]
                for x in range(x0s[i], x1s[i] + 1):
                    t = trans[y, x]
                    if t < TRANSMITTANCE_STOP:
                        continue
                    dx = x - mean_px[i, 0]
                    q = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy
                    if q > _Q_CUTOFF:
                        continue
                    alpha = alpha_max[i] * np.exp(-0.5 * q)
                    if alpha < ALPHA_SKIP:
                        continue
                    if alpha > ALPHA_CLAMP:
                        alpha = ALPHA_CLAMP
                    w = t * alpha
                    img[y, x, 0] += w * color[i, 0]
                    img[y, x, 1] += w * color[i, 1]
                    img[y, x, 2] += w * color[i, 2]
                    trans[y, x] = t * (1.0 - alpha)
        return img, trans


def render_float(model: GaussianModel, cam: Camera, sh_mode: str = "dc_only",
                 use_numba: bool | None = None):
    """Render to a float image in [0, 1]; also returns the per-pixel
    transmittance left after compositing (1 - total blend weight)."""
    mean_px, inv, radius, alpha_max, color = _project_batch(model, cam, sh_mode)
    args = (np.ascontiguousarray(mean_px), np.ascontiguousarray(inv),
            np.ascontiguousarray(radius), np.ascontiguousarray(alpha_max),
            np.ascontiguousarray(color), cam.height, cam.width)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        img, trans = _composite_rows_jit(*args)
    else:
        img, trans = _composite_rows_py(*args)
    return img, trans


def render(model: GaussianModel, cam: Camera, sh_mode: str = "dc_only") -> NDArray[np.uint8]:
    """Render an 8-bit RGB image (black background)."""
    img, _ = render_float(model, cam, sh_mode)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


# -- portable pixmap I/O ---------------------------------------------------

def write_ppm(image: NDArray[np.uint8], path) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise RenderError(f"expected (H, W, 3) uint8 image, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    with open(Path(path), "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_ppm(path) -> NDArray[np.uint8]:
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        tokens.append(blob[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise RenderError(f"{path}: not an 8-bit P6 pixmap")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(blob[pos:pos + w * h * 3], dtype=np.uint8)
    if data.size != w * h * 3:
        raise RenderError(f"{path}: truncated pixel data")
    return data.reshape(h, w, 3).copy()
