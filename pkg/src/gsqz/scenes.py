"""Deterministic synthetic benchmark scenes.

A scene is a ball of cameras (the 3DoF+ viewing zone) surrounded by
gaussians from just inside the rig out to a far periphery. Splat world
size grows linearly with distance so that far content still covers a
few pixels and PSNR keeps discriminating between schemes; the real
captured scenes this mimics have that property naturally.

Three independent, seed-derived RNG streams feed cameras, gaussians
and held-out cameras, so the held-out rig never shifts when the scene
content changes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_io import CameraRig, GaussianModel


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a generated benchmark scene."""

    seed: int = 42
    n_gaussians: int = 20_000
    n_cameras: int = 16
    r_rig: float = 1.0
    rho_range: tuple[float, float] = (0.5, 300.0)
    distance_law: str = "log_uniform"  # or "uniform"
    scale_per_rho: float = 0.008  # splat world sigma = scale_per_rho * rho
    focal_px: float = 300.0
    image_size: tuple[int, int] = (400, 300)

    def __post_init__(self):
        lo, hi = self.rho_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"need 0 < rho_lo <= rho_hi, got {self.rho_range}")
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")
        if self.distance_law not in ("log_uniform", "uniform"):
            raise ValueError(f"unknown distance law {self.distance_law!r}")


#: The benchmark every acceptance number refers to.
GARDEN_DESK = SceneSpec()


def _unit_vectors(rng: np.random.Generator, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ball_points(rng: np.random.Generator, n: int, radius: float) -> np.ndarray:
    return _unit_vectors(rng, n) * radius * rng.uniform(0, 1, size=(n, 1)) ** (1 / 3)


def _camera_rig(rng: np.random.Generator, spec: SceneSpec) -> CameraRig:
    centers = _ball_points(rng, spec.n_cameras, spec.r_rig)
    # Recenter on the empirical centroid and rescale into the rig ball, so the
    # derived geometry satisfies r_inner <= r_rig exactly.
    centers -= centers.mean(axis=0)
    max_norm = np.linalg.norm(centers, axis=1).max()
    if max_norm > spec.r_rig:
        centers *= spec.r_rig / max_norm
    return CameraRig(centers=centers, focal_px=spec.focal_px, image_size=spec.image_size)


#: Minimum gaussian-to-camera distance (world units). Cameras never sit
#: inside scene content; without this a splat at the near plane blankets a
#: whole view and its popping swamps every measurement.
CAMERA_CLEARANCE = 0.15


def _enforce_camera_clearance(rng: np.random.Generator, positions: np.ndarray,
                              rho: np.ndarray, camera_centers: np.ndarray) -> np.ndarray:
    """Redraw the direction of any gaussian that lands too close to a camera."""
    for _ in range(64):
        dist = np.linalg.norm(positions[:, None, :] - camera_centers[None], axis=2).min(axis=1)
        bad = np.flatnonzero(dist < CAMERA_CLEARANCE)
        if bad.size == 0:
            return positions
        positions[bad] = _unit_vectors(rng, bad.size) * rho[bad, None]
    raise RuntimeError("could not place gaussians clear of the cameras")


def _coherent_colors(rng: np.random.Generator, positions: np.ndarray,
                     rho: np.ndarray) -> np.ndarray:
    """Colors that vary smoothly over the scene, with mild per-splat jitter.

    Neighboring splats overlap heavily, and with independent random
    colors any quantization-induced flip of their draw order swamps the
    image difference. Captured scenes have locally coherent color, so the
    benchmark gets the same property: a low-frequency field over viewing
    direction and log-distance.
    """
    d = positions / rho[:, None]
    freqs = rng.uniform(1.5, 3.0, size=(3, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    radial_phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    colors = np.empty_like(positions)
    for ch in range(3):
        angular = np.sin(d @ freqs[ch] + phases[ch])
        radial = np.sin(1.3 * np.log(rho) + radial_phase[ch])
        colors[:, ch] = 0.5 + 0.28 * angular + 0.12 * radial
    colors += rng.uniform(-0.05, 0.05, size=colors.shape)
    return np.clip(colors, 0.02, 0.98)


def generate(spec: SceneSpec) -> tuple[GaussianModel, CameraRig, CameraRig]:
    """Build (model, training rig, held-out rig) for a scene spec."""
    rng_cams = np.random.default_rng([spec.seed, 0])
    rng_gauss = np.random.default_rng([spec.seed, 1])
    rng_held = np.random.default_rng([spec.seed, 2])

    rig = _camera_rig(rng_cams, spec)
    held_spec = SceneSpec(seed=spec.seed, n_gaussians=1,
                          n_cameras=max(1, spec.n_cameras // 4), r_rig=spec.r_rig,
                          rho_range=spec.rho_range, focal_px=spec.focal_px,
                          image_size=spec.image_size)
    held_out = _camera_rig(rng_held, held_spec)

    n = spec.n_gaussians
    lo, hi = spec.rho_range
    if spec.distance_law == "log_uniform":
        rho = np.exp(rng_gauss.uniform(np.log(lo), np.log(hi), size=n))
    else:
        rho = rng_gauss.uniform(lo, hi, size=n)
    positions = _unit_vectors(rng_gauss, n) * rho[:, None]
    positions = _enforce_camera_clearance(rng_gauss, positions, rho,
                                          np.vstack([rig.centers, held_out.centers]))

    sigma_world = spec.scale_per_rho * rho * rng_gauss.uniform(0.6, 1.6, size=n)
    log_scales = np.log(sigma_world)[:, None] + rng_gauss.uniform(-0.3, 0.3, size=(n, 3))

    rotations = rng_gauss.normal(size=(n, 4))
    rotations /= np.linalg.norm(rotations, axis=1, keepdims=True)

    opacity_logits = rng_gauss.uniform(1.0, 3.0, size=n)
    from .render import SH_C0  # color -> DC coefficient convention

    colors = _coherent_colors(rng_gauss, positions, rho)
    sh_dc = (colors - 0.5) / SH_C0

    model = GaussianModel.from_arrays(
        positions=positions, log_scales=log_scales, rotations=rotations,
        opacity_logits=opacity_logits, sh_dc=sh_dc)
    return model, rig, held_out
