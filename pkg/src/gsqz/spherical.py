"""Spherical parameterization of point positions and the 360-degree
sphere projection, with exact and leading-order derivatives.

All math is in float64 regardless of the 32-bit model file format: the
derivative checks need the headroom.

Conventions
-----------
theta is the polar angle in [0, pi] measured from +z, phi the azimuth in
[-pi, pi). At the poles (sin(theta) == 0) phi is fixed to 0 so that
round trips are deterministic. The projection sphere has radius ``f``
(the focal length); a point P in the camera-centered frame projects to
``f * P / |P|``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

Vec3 = NDArray[np.float64]

_TWO_PI = 2.0 * np.pi


class DegenerateInputError(ValueError):
    """Raised when a point coincides with the projection center."""


def _wrap_angles(theta: float, phi: float) -> tuple[float, float]:
    """Fold (theta, phi) into theta in [0, pi], phi in [-pi, pi)."""
    theta = theta % _TWO_PI
    if theta > np.pi:
        theta = _TWO_PI - theta
        phi = phi + np.pi
    phi = (phi + np.pi) % _TWO_PI - np.pi
    if theta == 0.0 or theta == np.pi:
        phi = 0.0
    return float(theta), float(phi)


@dataclass(frozen=True)
class SphericalCoord:
    """Position relative to an origin: radius rho > 0 and direction angles."""

    rho: float
    theta: float
    phi: float

    def __post_init__(self):
        if not self.rho > 0.0:
            raise DegenerateInputError(f"rho must be positive, got {self.rho}")
        theta, phi = _wrap_angles(self.theta, self.phi)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class LocalFrame:
    """Camera-centered frame with world orientation.

    ``p0`` is the position of the reference origin (the rig center used
    for the spherical parameterization) as seen from the camera, and
    ``f`` the radius of the projection sphere in pixels.
    """

    p0: Vec3
    f: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=np.float64))
        if not self.f > 0.0:
            raise ValueError(f"projection radius f must be positive, got {self.f}")

    @classmethod
    def from_camera(cls, camera_center, origin, f: float = 1.0) -> "LocalFrame":
        return cls(np.asarray(origin, np.float64) - np.asarray(camera_center, np.float64), f)


@dataclass(frozen=True)
class ProjectionJacobian:
    """Columns of d(projection)/d(theta, phi, rho) and the size ratio epsilon = |P0|/|P|."""

    dp_dtheta: Vec3
    dp_dphi: Vec3
    dp_drho: Vec3
    epsilon: float


def direction(theta: float, phi: float) -> Vec3:
    """Unit direction (sin(theta)cos(phi), sin(theta)sin(phi), cos(theta))."""
    st = np.sin(theta)
    return np.array([st * np.cos(phi), st * np.sin(phi), np.cos(theta)])


def direction_dtheta(theta: float, phi: float) -> Vec3:
    ct = np.cos(theta)
    return np.array([ct * np.cos(phi), ct * np.sin(phi), -np.sin(theta)])


def direction_dphi(theta: float, phi: float) -> Vec3:
    st = np.sin(theta)
    return np.array([-st * np.sin(phi), st * np.cos(phi), 0.0])


def to_spherical(p, origin=(0.0, 0.0, 0.0)) -> SphericalCoord:
    """Spherical coordinates of point ``p`` about ``origin``.

    Raises DegenerateInputError when p coincides with the origin.
    """
    rel = np.asarray(p, np.float64) - np.asarray(origin, np.float64)
    rho = float(np.linalg.norm(rel))
    if rho == 0.0:
        raise DegenerateInputError("point coincides with the origin")
    rxy = float(np.hypot(rel[0], rel[1]))
    theta = float(np.arctan2(rxy, rel[2]))
    phi = 0.0 if rxy == 0.0 else float(np.arctan2(rel[1], rel[0]))
    if phi >= np.pi:  # arctan2 returns +pi for (-x, +0); keep phi in [-pi, pi)
        phi = -np.pi
    return SphericalCoord(rho, theta, phi)


def from_spherical(s: SphericalCoord, origin=(0.0, 0.0, 0.0)) -> Vec3:
    """Inverse of :func:`to_spherical`."""
    return np.asarray(origin, np.float64) + s.rho * direction(s.theta, s.phi)


def spherical_from_points(points: NDArray, origin) -> tuple[NDArray, NDArray, NDArray]:
    """Vectorized (rho, theta, phi) for an (N, 3) array of points."""
    rel = np.asarray(points, np.float64) - np.asarray(origin, np.float64)
    rho = np.linalg.norm(rel, axis=1)
    rxy = np.hypot(rel[:, 0], rel[:, 1])
    theta = np.arctan2(rxy, rel[:, 2])
    phi = np.where(rxy == 0.0, 0.0, np.arctan2(rel[:, 1], rel[:, 0]))
    phi = np.where(phi >= np.pi, -np.pi, phi)
    return rho, theta, phi


def points_from_spherical(rho: NDArray, theta: NDArray, phi: NDArray, origin) -> NDArray:
    st = np.sin(theta)
    d = np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)
    return np.asarray(origin, np.float64) + rho[:, None] * d


def sphere_project(P, f: float) -> Vec3:
    """Projection of P onto the sphere of radius f around the frame center."""
    P = np.asarray(P, np.float64)
    n = float(np.linalg.norm(P))
    if n == 0.0:
        raise DegenerateInputError("cannot project the zero vector")
    return f * P / n


def project_point(frame: LocalFrame, s: SphericalCoord) -> Vec3:
    """Full projection map: rig-relative spherical coords -> point on the f-sphere."""
    return sphere_project(frame.p0 + s.rho * direction(s.theta, s.phi), frame.f)


def _projection_kernel(frame: LocalFrame, s: SphericalCoord):
    d = direction(s.theta, s.phi)
    P = frame.p0 + s.rho * d
    n = float(np.linalg.norm(P))
    if n == 0.0:
        raise DegenerateInputError("point projects from the frame center")
    return d, P, n


def jacobian_exact(frame: LocalFrame, s: SphericalCoord) -> ProjectionJacobian:
    """Untruncated chain-rule derivatives of the f-sphere projection.

    Uses d(P/|P|)/dP = I/|P| - P P^T/|P|^3 composed with dP/dtheta = rho
    d_theta, dP/dphi = rho d_phi, dP/drho = d. Keeping the full expression
    (rather than the leading-order forms) makes the truncation error of
    the latter measurable.
    """
    d, P, n = _projection_kernel(frame, s)
    M = np.eye(3) / n - np.outer(P, P) / n**3
    f = frame.f
    return ProjectionJacobian(
        dp_dtheta=f * s.rho * (M @ direction_dtheta(s.theta, s.phi)),
        dp_dphi=f * s.rho * (M @ direction_dphi(s.theta, s.phi)),
        dp_drho=f * (M @ d),
        epsilon=float(np.linalg.norm(frame.p0)) / n,
    )


def jacobian_leading(frame: LocalFrame, s: SphericalCoord) -> ProjectionJacobian:
    """Leading-order derivatives, valid when epsilon = |P0|/|P| is small.

    The radial column is f/rho^2 * ((P0.d) d - P0). Its sign follows the
    full chain-rule derivation (and the finite-difference oracle); the
    compact summary form elsewhere carries the opposite sign, which is
    why the tests compare magnitude and direction only.
    """
    d, P, n = _projection_kernel(frame, s)
    f = frame.f
    c = float(frame.p0 @ d)
    return ProjectionJacobian(
        dp_dtheta=f * s.rho / n * direction_dtheta(s.theta, s.phi),
        dp_dphi=f * s.rho / n * direction_dphi(s.theta, s.phi),
        dp_drho=f / s.rho**2 * (c * d - frame.p0),
        epsilon=float(np.linalg.norm(frame.p0)) / n,
    )


def dp_dt(frame: LocalFrame, s: SphericalCoord) -> Vec3:
    """Leading-order sensitivity to t = 1/rho: f * ((P0.d) d - P0).

    Independent of rho, which is what makes t the right variable for a
    uniform quantizer. Magnitude and direction match the exact chain
    rule dp_drho * (drho/dt = -rho^2) up to O(epsilon) terms.
    """
    d = direction(s.theta, s.phi)
    return frame.f * (float(frame.p0 @ d) * d - frame.p0)


def finite_diff_jacobian(frame: LocalFrame, s: SphericalCoord, step: float = 1e-5) -> ProjectionJacobian:
    """Central-difference oracle for :func:`jacobian_exact`.

    Angles use ``step`` directly; rho uses ``step * max(1, rho)`` so the
    relative perturbation stays balanced against float64 rounding.
    """
    if not step > 0.0:
        raise ValueError("step must be positive")
    h_ang = step
    h_rho = step * max(1.0, s.rho)

    def p(theta, phi, rho):
        return sphere_project(frame.p0 + rho * direction(theta, phi), frame.f)

    th, ph, rho = s.theta, s.phi, s.rho
    return ProjectionJacobian(
        dp_dtheta=(p(th + h_ang, ph, rho) - p(th - h_ang, ph, rho)) / (2 * h_ang),
        dp_dphi=(p(th, ph + h_ang, rho) - p(th, ph - h_ang, rho)) / (2 * h_ang),
        dp_drho=(p(th, ph, rho + h_rho) - p(th, ph, rho - h_rho)) / (2 * h_rho),
        epsilon=float(np.linalg.norm(frame.p0)) / float(np.linalg.norm(frame.p0 + rho * direction(th, ph))),
    )


def jacobian_max_relative_error(a: ProjectionJacobian, b: ProjectionJacobian) -> float:
    """Worst per-column relative disagreement between two Jacobians."""
    worst = 0.0
    for col_a, col_b in zip((a.dp_dtheta, a.dp_dphi, a.dp_drho),
                            (b.dp_dtheta, b.dp_dphi, b.dp_drho)):
        scale = max(float(np.linalg.norm(col_a)), float(np.linalg.norm(col_b)))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.linalg.norm(col_a - col_b)) / scale)
    return worst


@dataclass(frozen=True)
class JacobianCheckReport:
    """Result of the seeded analytic-vs-finite-difference comparison."""

    n_samples: int
    seed: int
    step: float
    max_rel_error: float
    tolerance: float
    radial_slope: float
    slope_tolerance: float = 0.01

    @property
    def passed(self) -> bool:
        return (self.max_rel_error < self.tolerance
                and abs(self.radial_slope + 2.0) < self.slope_tolerance)

    def summary(self) -> str:
        lines = [
            f"jacobian oracle check: {self.n_samples} samples, seed {self.seed}, fd step {self.step:g}",
            f"  max relative error analytic vs central differences: {self.max_rel_error:.3e}"
            f" (tolerance {self.tolerance:g})",
            f"  log-log slope of |dp/drho| vs rho: {self.radial_slope:+.5f}"
            f" (target -2 +/- {self.slope_tolerance:g})",
            f"  result: {'PASS' if self.passed else 'FAIL'}",
        ]
        return "\n".join(lines)


def sample_check_frames(n_samples: int, seed: int):
    """Seeded (frame, coord) pairs with epsilon < 0.5.

    |P0| is drawn in [0.1, 1], rho/|P0| log-uniform in [3.1, 100] (which
    bounds epsilon below 1/2.1), and the point direction keeps an angle
    of at least 0.1 rad from the ray through the camera, where the radial
    derivative vanishes identically and a relative comparison loses
    meaning.
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_samples:
        n0 = rng.uniform(0.1, 1.0)
        u = rng.normal(size=3)
        p0 = n0 * u / np.linalg.norm(u)
        v = rng.normal(size=3)
        d = v / np.linalg.norm(v)
        ang = np.arccos(np.clip(d @ (p0 / n0), -1.0, 1.0))
        if not 0.1 < ang < np.pi - 0.1:
            continue
        rho = n0 * np.exp(rng.uniform(np.log(3.1), np.log(100.0)))
        f = rng.uniform(0.5, 2.0)
        s = to_spherical(rho * d)
        out.append((LocalFrame(p0, f), s))
    return out


def check_jacobians(n_samples: int = 1000, seed: int = 7, step: float = 1e-5,
                    tolerance: float = 1e-6) -> JacobianCheckReport:
    """Run the full analytic-derivative verification used by the CLI."""
    worst = 0.0
    for frame, s in sample_check_frames(n_samples, seed):
        rel = jacobian_max_relative_error(jacobian_exact(frame, s), finite_diff_jacobian(frame, s, step))
        worst = max(worst, rel)
    slope = radial_falloff_slope()
    return JacobianCheckReport(n_samples=n_samples, seed=seed, step=step,
                               max_rel_error=worst, tolerance=tolerance,
                               radial_slope=slope)


def radial_falloff_slope(p0=(0.0, 0.0, 1.0), d=(1.0, 0.0, 0.0), n_points: int = 64) -> float:
    """Fitted log-log slope of |dp/drho| over rho in [10|P0|, 1000|P0|]."""
    p0 = np.asarray(p0, np.float64)
    frame = LocalFrame(p0)
    n0 = float(np.linalg.norm(p0))
    s0 = to_spherical(np.asarray(d, np.float64))
    rhos = np.geomspace(10 * n0, 1000 * n0, n_points)
    mags = [float(np.linalg.norm(jacobian_exact(frame, SphericalCoord(r, s0.theta, s0.phi)).dp_drho))
            for r in rhos]
    return float(np.polyfit(np.log(rhos), np.log(mags), 1)[0])
