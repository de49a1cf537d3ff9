"""Distortion measurement: screen-space displacement of gaussian centers,
image PSNR and rate-distortion sweeps.

Displacement is measured per (camera, gaussian) pair between the
original and reconstructed center positions, either through a pinhole
projection (world-axis-aligned, points behind the camera are excluded
but counted) or on the 360-degree sphere, where the displacement is the
geodesic arc scaled by the focal length so both projections report
pixels. Results are binned by the distance rho to the rig origin on a
logarithmic axis, which is what the slope checks fit against.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .model_io import CameraRig, GaussianModel
from .quantize import (OverheadMode, RigGeometry, dequantize_model,
                       quantize_model, rate_report)

N_DISTANCE_BINS = 16

RD_CSV_COLUMNS = ("scheme", "bits_per_coord", "overhead_bits",
                  "total_bits_per_coord", "mean_px", "max_px", "psnr_db")


class MetricsError(ValueError):
    pass


class BehindCameraError(ValueError):
    """Pinhole projection of a point at or behind the camera plane."""


def pinhole_project(p_cam, f: float) -> tuple[float, float]:
    """(u, v) = (f x/z, f y/z) for a camera-frame point with z > 0."""
    x, y, z = np.asarray(p_cam, np.float64)
    if z <= 0:
        raise BehindCameraError(f"point has non-positive depth z={z}")
    return float(f * x / z), float(f * y / z)


@dataclass(frozen=True)
class DistanceBin:
    rho_lo: float
    rho_hi: float
    mean_px: float
    count: int


@dataclass(frozen=True)
class ProjectionErrorStats:
    """Aggregated center-displacement statistics in pixels."""

    mean_px: float
    max_px: float
    per_distance_bins: tuple[DistanceBin, ...]
    n_points: int
    n_behind: int = 0

    def loglog_slope(self, rho_min: float = 0.0, rho_max: float = math.inf) -> float:
        """Fitted slope of log(mean displacement) vs log(rho) over the
        populated bins whose center falls inside [rho_min, rho_max]."""
        xs, ys = [], []
        for b in self.per_distance_bins:
            center = math.sqrt(b.rho_lo * b.rho_hi)
            if b.count > 0 and b.mean_px > 0 and rho_min <= center <= rho_max:
                xs.append(math.log(center))
                ys.append(math.log(b.mean_px))
        if len(xs) < 2:
            raise MetricsError("not enough populated bins for a slope fit")
        return float(np.polyfit(xs, ys, 1)[0])


def _spherical_displacement(orig, recon, center, f):
    a = orig - center
    b = recon - center
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    valid = (na > 0) & (nb > 0)
    cross = np.linalg.norm(np.cross(a, b), axis=1)
    dot = np.einsum("ij,ij->i", a, b)
    angle = np.arctan2(cross, dot)
    return np.where(valid, f * angle, 0.0), np.ones_like(na, dtype=bool)


def _pinhole_displacement(orig, recon, center, f):
    a = orig - center
    b = recon - center
    valid = (a[:, 2] > 0) & (b[:, 2] > 0)
    za = np.where(valid, a[:, 2], 1.0)
    zb = np.where(valid, b[:, 2], 1.0)
    du = f * (b[:, 0] / zb - a[:, 0] / za)
    dv = f * (b[:, 1] / zb - a[:, 1] / za)
    return np.hypot(du, dv), valid


def center_displacement(original: GaussianModel, reconstructed: GaussianModel,
                        rig: CameraRig, projection: str = "spherical") -> ProjectionErrorStats:
    """Per-(camera, gaussian) screen displacement between two aligned models.

    ``projection`` is "pinhole" (world-axis-aligned cameras, behind-camera
    pairs excluded but counted) or "spherical" (geodesic arc times focal
    length; the 360-degree model has no behind).
    """
    if len(original) != len(reconstructed):
        raise MetricsError(
            f"model lengths differ: {len(original)} vs {len(reconstructed)}")
    if projection not in ("pinhole", "spherical"):
        raise MetricsError(f"unknown projection {projection!r}")
    measure = _pinhole_displacement if projection == "pinhole" else _spherical_displacement

    orig = original.positions
    recon = reconstructed.positions
    origin = rig.centers.mean(axis=0)
    rho = np.linalg.norm(orig - origin, axis=1)

    disp_sum = np.zeros(len(original))
    disp_count = np.zeros(len(original), dtype=np.int64)
    max_px = 0.0
    n_behind = 0
    for center in rig.centers:
        d, valid = measure(orig, recon, center, rig.focal_px)
        disp_sum += np.where(valid, d, 0.0)
        disp_count += valid
        n_behind += int((~valid).sum())
        if valid.any():
            max_px = max(max_px, float(d[valid].max()))

    n_points = int(disp_count.sum())
    mean_px = float(disp_sum.sum() / n_points) if n_points else 0.0

    rho_lo, rho_hi = float(rho.min()), float(rho.max())
    if rho_lo <= 0 or rho_lo == rho_hi:
        edges = np.array([rho_lo, rho_hi + np.finfo(float).eps])
    else:
        edges = np.geomspace(rho_lo, rho_hi, N_DISTANCE_BINS + 1)
    edges[-1] = np.nextafter(edges[-1], np.inf)  # include the outermost point
    which = np.clip(np.searchsorted(edges, rho, side="right") - 1, 0, len(edges) - 2)
    bins = []
    for k in range(len(edges) - 1):
        in_bin = which == k
        cnt = int(disp_count[in_bin].sum())
        mean = float(disp_sum[in_bin].sum() / cnt) if cnt else 0.0
        bins.append(DistanceBin(float(edges[k]), float(edges[k + 1]), mean, cnt))
    return ProjectionErrorStats(mean_px=mean_px, max_px=max_px,
                                per_distance_bins=tuple(bins),
                                n_points=n_points, n_behind=n_behind)


def psnr(img_a: NDArray, img_b: NDArray) -> float:
    """Peak signal-to-noise ratio in dB for 8-bit images.

    Identical images return math.inf.
    """
    a = np.asarray(img_a)
    b = np.asarray(img_b)
    if a.shape != b.shape:
        raise MetricsError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(255.0 ** 2 / mse))


@dataclass(frozen=True)
class RDPoint:
    """One rate-distortion measurement."""

    scheme: str
    bits_per_coord: int
    overhead_bits: float
    total_bits_per_coord: float
    mean_px: float
    max_px: float
    psnr_db: float | None = None


def render_psnr(original: GaussianModel, reconstructed: GaussianModel,
                cameras) -> float:
    """PSNR between renders of two models over a camera list.

    Aggregates one global MSE over all views' pixels, so a single
    number covers the whole rig deterministically.
    """
    from .render import render

    err = 0.0
    n_px = 0
    for cam in cameras:
        a = render(original, cam).astype(np.float64)
        b = render(reconstructed, cam).astype(np.float64)
        err += float(((a - b) ** 2).sum())
        n_px += a.size
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(255.0 ** 2 / (err / n_px)))


def rd_sweep(model: GaussianModel, rig: CameraRig, geometry: RigGeometry,
             schemes, bits_list, *, render_views: bool = False,
             overhead_mode: OverheadMode = OverheadMode.SPLIT_INDEX,
             projection: str = "spherical", cameras=None) -> list[RDPoint]:
    """Quantize the model under every (scheme, bits) pair and measure.

    With ``render_views`` the model is also rendered against the rig's
    deterministic cameras for PSNR; otherwise psnr_db stays None and the
    sweep reports pixel displacement only.
    """
    points = []
    if render_views and cameras is None:
        from .render import rig_cameras

        cameras = rig_cameras(rig)
    for scheme in schemes:
        for bits in bits_list:
            q = quantize_model(model, geometry, scheme, bits, overhead_mode)
            recon = dequantize_model(q)
            rate = rate_report(q)
            stats = center_displacement(model, recon, rig, projection)
            psnr_db = render_psnr(model, recon, cameras) if render_views else None
            points.append(RDPoint(
                scheme=scheme.value, bits_per_coord=bits,
                overhead_bits=rate.overhead_bits_per_coord,
                total_bits_per_coord=rate.total_bits_per_coord,
                mean_px=stats.mean_px, max_px=stats.max_px, psnr_db=psnr_db))
    return points


def rd_csv(points) -> str:
    """Render RD points as CSV with the fixed column order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RD_CSV_COLUMNS)
    for p in points:
        writer.writerow([
            p.scheme, p.bits_per_coord, f"{p.overhead_bits:.6g}",
            f"{p.total_bits_per_coord:.6g}", f"{p.mean_px:.6g}", f"{p.max_px:.6g}",
            "" if p.psnr_db is None else ("inf" if math.isinf(p.psnr_db) else f"{p.psnr_db:.4f}"),
        ])
    return buf.getvalue()


def write_rd_csv(points, path) -> None:
    Path(path).write_text(rd_csv(points), encoding="utf-8")
