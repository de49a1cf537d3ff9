"""Position codec: rig geometry, center/periphery split, the four
quantization schemes and the packed container format.

Scheme summary (all channels get the same bit depth):

* ``uniform``          x, y, z over the scene's axis-aligned bounds.
* ``ours``             center gaussians (rho < R) as x, y, z relative to
                       the rig origin over [-R, R]; periphery as theta,
                       phi, t = 1/rho with t over [1/rho_max, 1/R].
* ``no-split``         theta, phi, t for every gaussian, t over
                       [1/rho_max, 1/rho_min].
* ``cartesian-split``  center as in ``ours``; periphery as absolute
                       x, y, z over the scene bounds.

Reconstruction is at bin centers, so re-encoding a decoded model with
the same header bounds reproduces the codes exactly. To keep that true
at the center/periphery boundary, a center candidate whose bin-center
reconstruction would land outside the R-ball is coded as periphery
instead; within the half-step error bound this is free, and it removes
the one way a decoded model could re-classify differently.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .model_io import POSITION_ATTRIBUTES, CameraRig, GaussianModel
from .spherical import points_from_spherical, spherical_from_points


class GeometryError(ValueError):
    """Rig too degenerate to derive the center radius from."""


class ContainerDecodeError(ValueError):
    """Corrupted or truncated quantized-model container."""


class QuantScheme(Enum):
    """Position coding schemes; values match the CLI labels."""

    UNIFORM_XYZ = "uniform"
    SPHERICAL_SPLIT = "ours"
    SPHERICAL_NO_SPLIT = "no-split"
    CARTESIAN_SPLIT = "cartesian-split"


class OverheadMode(Enum):
    SPLIT_INDEX = "split-index"
    PER_GAUSSIAN_FLAG = "flag"


class Region(Enum):
    CENTER = "center"
    PERIPHERY = "periphery"


#: Schemes that transmit a center/periphery partition.
SPLIT_SCHEMES = (QuantScheme.SPHERICAL_SPLIT, QuantScheme.CARTESIAN_SPLIT)

MIN_BITS, MAX_BITS = 2, 24
DEFAULT_R_MULTIPLIER = 1.5
#: Relative floor on rho_min for the no-split scheme, so t = 1/rho stays bounded.
RHO_MIN_FLOOR = 1e-6


@dataclass(frozen=True)
class RigGeometry:
    """Derived rig geometry: origin, camera-ball radius R_i, center radius R."""

    origin: NDArray[np.float64]
    r_inner: float
    r_center: float
    multiplier: float = DEFAULT_R_MULTIPLIER

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, np.float64))
        if self.r_inner < 0 or self.r_center < self.r_inner:
            raise GeometryError(
                f"need 0 <= r_inner <= r_center, got {self.r_inner}, {self.r_center}")


def derive_geometry(rig: CameraRig, multiplier: float = DEFAULT_R_MULTIPLIER,
                    r_center: float | None = None) -> RigGeometry:
    """Rig origin (camera centroid) and radii R_i, R = multiplier * R_i.

    A single camera or identical centers give R_i = 0, which would make
    the center region empty; that is an error unless an explicit
    ``r_center`` override is supplied.
    """
    if multiplier < 1.0:
        raise GeometryError(f"multiplier must be >= 1, got {multiplier}")
    origin = rig.centers.mean(axis=0)
    r_inner = float(np.linalg.norm(rig.centers - origin, axis=1).max())
    if r_center is not None:
        if not r_center > 0:
            raise GeometryError(f"r_center override must be positive, got {r_center}")
        return RigGeometry(origin, r_inner, float(r_center), multiplier)
    if r_inner == 0.0:
        raise GeometryError(
            "degenerate rig (single camera or identical centers): the center"
            " radius cannot be derived; pass an explicit --r-center override")
    return RigGeometry(origin, r_inner, multiplier * r_inner, multiplier)


def classify(position, geometry: RigGeometry) -> Region:
    """Center iff |position - origin| < r_center; the boundary is periphery."""
    rho = float(np.linalg.norm(np.asarray(position, np.float64) - geometry.origin))
    return Region.CENTER if rho < geometry.r_center else Region.PERIPHERY


# -- scalar quantizer ---------------------------------------------------

def quantize_scalar(x, lo: float, hi: float, bits: int):
    """Uniform scalar quantizer: code = floor((clip(x) - lo) / step).

    ``x`` may be a scalar or array; out-of-range inputs are clamped into
    [lo, hi] and the top code is 2**bits - 1.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    n_levels = 1 << bits
    step = (hi - lo) / n_levels
    x = np.clip(np.asarray(x, np.float64), lo, hi)
    codes = np.floor((x - lo) / step).astype(np.int64)
    codes = np.clip(codes, 0, n_levels - 1)
    if codes.ndim == 0:
        return int(codes)
    return codes.astype(np.uint32)


def dequantize_scalar(code, lo: float, hi: float, bits: int):
    """Bin-center reconstruction: lo + (code + 0.5) * step."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    step = (hi - lo) / (1 << bits)
    out = lo + (np.asarray(code, np.float64) + 0.5) * step
    if out.ndim == 0:
        return float(out)
    return out


def _safe_span(lo: float, hi: float) -> tuple[float, float]:
    """Widen a collapsed channel range so the quantizer stays defined."""
    if hi > lo:
        return lo, hi
    pad = max(abs(lo), 1.0) * 1e-12
    return lo, lo + pad


# -- bit packing ---------------------------------------------------------

def pack_codes(codes: NDArray, bits: int) -> bytes:
    """Pack an (N, 3) code array LSB-first, gaussian-major."""
    flat = np.ascontiguousarray(codes, dtype=np.uint64).reshape(-1)
    shifts = np.arange(bits, dtype=np.uint64)
    bitmat = ((flat[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bitmat.reshape(-1), bitorder="little").tobytes()


def unpack_codes(buf: bytes, bits: int, n_gaussians: int) -> NDArray[np.uint32]:
    n_values = n_gaussians * 3
    n_bits = n_values * bits
    raw = np.frombuffer(buf, dtype=np.uint8)
    if raw.size * 8 < n_bits:
        raise ContainerDecodeError(
            f"code block too short: need {n_bits} bits, have {raw.size * 8}")
    bitarr = np.unpackbits(raw, count=n_bits, bitorder="little")
    shifts = np.arange(bits, dtype=np.uint64)
    vals = (bitarr.reshape(n_values, bits).astype(np.uint64) << shifts).sum(axis=1)
    return vals.reshape(n_gaussians, 3).astype(np.uint32)


def packed_code_size(n_gaussians: int, bits: int) -> int:
    return (3 * bits * n_gaussians + 7) // 8


# -- quantized model ------------------------------------------------------

@dataclass
class QuantizedModel:
    """Quantized positions plus everything needed to restore the model."""

    scheme: QuantScheme
    bits: int
    overhead_mode: OverheadMode
    origin: NDArray[np.float64]
    r_center: float
    rho_max: float
    scene_bounds: NDArray[np.float64]  # (2, 3): [mins; maxs]
    n_total: int
    n_center: int
    codes: NDArray[np.uint32]  # (n_total, 3), center rows first
    passthrough: np.ndarray  # structured array of non-position attributes, stored order
    permutation: NDArray[np.uint32]  # stored index -> original index
    attribute_layout: tuple[tuple[str, str], ...]  # full original (name, dtype) order
    rho_min: float | None = None  # no-split only: lower rho cutoff of the t range

    def t_range(self) -> tuple[float, float]:
        """Quantizer range of the t = 1/rho channel for periphery rows."""
        if self.scheme is QuantScheme.SPHERICAL_NO_SPLIT:
            return _safe_span(1.0 / self.rho_max, 1.0 / self.rho_min)
        return _safe_span(1.0 / self.rho_max, 1.0 / self.r_center)


def _angular_ranges() -> tuple[tuple[float, float], tuple[float, float]]:
    return (0.0, float(np.pi)), (float(-np.pi), float(np.pi))


def _quantize_xyz(pos: NDArray, lo: NDArray, hi: NDArray, bits: int) -> NDArray:
    cols = []
    for k in range(3):
        lo_k, hi_k = _safe_span(float(lo[k]), float(hi[k]))
        cols.append(quantize_scalar(pos[:, k], lo_k, hi_k, bits))
    return np.stack(cols, axis=1)


def _dequantize_xyz(codes: NDArray, lo: NDArray, hi: NDArray, bits: int) -> NDArray:
    cols = []
    for k in range(3):
        lo_k, hi_k = _safe_span(float(lo[k]), float(hi[k]))
        cols.append(dequantize_scalar(codes[:, k], lo_k, hi_k, bits))
    return np.stack(cols, axis=1)


def _quantize_spherical(points: NDArray, origin: NDArray, bits: int,
                        t_lo: float, t_hi: float) -> NDArray:
    rho, theta, phi = spherical_from_points(points, origin)
    (th_lo, th_hi), (ph_lo, ph_hi) = _angular_ranges()
    with np.errstate(divide="ignore"):
        t = np.where(rho > 0.0, 1.0 / np.maximum(rho, np.finfo(np.float64).tiny), np.inf)
    return np.stack([
        quantize_scalar(theta, th_lo, th_hi, bits),
        quantize_scalar(phi, ph_lo, ph_hi, bits),
        quantize_scalar(t, t_lo, t_hi, bits),
    ], axis=1)


def _dequantize_spherical(codes: NDArray, origin: NDArray, bits: int,
                          t_lo: float, t_hi: float) -> NDArray:
    (th_lo, th_hi), (ph_lo, ph_hi) = _angular_ranges()
    theta = dequantize_scalar(codes[:, 0], th_lo, th_hi, bits)
    phi = dequantize_scalar(codes[:, 1], ph_lo, ph_hi, bits)
    t = dequantize_scalar(codes[:, 2], t_lo, t_hi, bits)
    return points_from_spherical(1.0 / t, theta, phi, origin)


def _coding_center_mask(rel: NDArray, rho: NDArray, r_center: float,
                        rho_max: float, bits: int) -> NDArray[np.bool_]:
    """Final center mask used for coding (see module docstring)."""
    n = rel.shape[0]
    if rho_max <= r_center:
        return np.ones(n, dtype=bool)  # no periphery exists; degrade to all-center
    mask = rho < r_center
    idx = np.flatnonzero(mask)
    if idx.size:
        box = np.array([r_center] * 3)
        codes = _quantize_xyz(rel[idx], -box, box, bits)
        recon = _dequantize_xyz(codes, -box, box, bits)
        unstable = np.linalg.norm(recon, axis=1) >= r_center
        mask[idx[unstable]] = False
    return mask


def _passthrough_dtype(layout) -> np.dtype:
    return np.dtype([(name, dt) for name, dt in layout if name not in POSITION_ATTRIBUTES])


def quantize_model(model: GaussianModel, geometry: RigGeometry, scheme: QuantScheme,
                   bits: int, overhead_mode: OverheadMode = OverheadMode.SPLIT_INDEX, *,
                   scene_bounds=None, rho_max: float | None = None,
                   rho_min: float | None = None) -> QuantizedModel:
    """Quantize the model's positions under ``scheme`` at ``bits`` per coordinate.

    ``scene_bounds``, ``rho_max`` and ``rho_min`` default to values
    derived from the model; passing the values from an existing header
    re-encodes against that header (which is what makes
    quantize -> dequantize -> quantize reproduce identical codes).
    Non-position attributes pass through untouched.
    """
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ValueError(f"bits per coordinate must be in [{MIN_BITS}, {MAX_BITS}], got {bits}")
    pos = model.positions
    n = pos.shape[0]
    rel = pos - geometry.origin
    rho = np.linalg.norm(rel, axis=1)

    if scene_bounds is None:
        scene_bounds = np.stack([pos.min(axis=0), pos.max(axis=0)])
    else:
        scene_bounds = np.asarray(scene_bounds, np.float64).reshape(2, 3)
    rho_max = float(rho.max()) if rho_max is None else float(rho_max)

    r_center = geometry.r_center
    box = np.array([r_center] * 3)
    codes = np.empty((n, 3), dtype=np.uint32)
    n_center = n
    perm = np.arange(n, dtype=np.uint32)

    if scheme is QuantScheme.UNIFORM_XYZ:
        codes = _quantize_xyz(pos, scene_bounds[0], scene_bounds[1], bits)
    elif scheme is QuantScheme.SPHERICAL_NO_SPLIT:
        if rho_min is None:
            rho_min = float(max(rho.min(), RHO_MIN_FLOOR * rho_max))
        t_lo, t_hi = _safe_span(1.0 / rho_max, 1.0 / rho_min)
        codes = _quantize_spherical(pos, geometry.origin, bits, t_lo, t_hi)
        n_center = 0
        r_center = rho_min  # the container r_center slot carries rho_min here
    else:
        center = _coding_center_mask(rel, rho, r_center, rho_max, bits)
        order = np.concatenate([np.flatnonzero(center), np.flatnonzero(~center)])
        perm = order.astype(np.uint32)
        n_center = int(center.sum())
        if n_center:
            codes[:n_center] = _quantize_xyz(rel[order[:n_center]], -box, box, bits)
        if n_center < n:
            periph = pos[order[n_center:]]
            if scheme is QuantScheme.SPHERICAL_SPLIT:
                t_lo, t_hi = _safe_span(1.0 / rho_max, 1.0 / r_center)
                codes[n_center:] = _quantize_spherical(periph, geometry.origin, bits, t_lo, t_hi)
            else:
                codes[n_center:] = _quantize_xyz(periph, scene_bounds[0], scene_bounds[1], bits)

    layout = tuple((name, model.data.dtype[name].str) for name in model.attribute_names)
    pass_dtype = _passthrough_dtype(layout)
    passthrough = np.empty(n, dtype=pass_dtype)
    permuted = model.data[perm]
    for name in pass_dtype.names:
        passthrough[name] = permuted[name]

    return QuantizedModel(
        scheme=scheme, bits=bits, overhead_mode=overhead_mode,
        origin=geometry.origin.copy(), r_center=r_center, rho_max=rho_max,
        scene_bounds=scene_bounds, n_total=n, n_center=n_center,
        codes=codes, passthrough=passthrough, permutation=perm,
        attribute_layout=layout, rho_min=rho_min,
    )


def dequantize_model(q: QuantizedModel) -> GaussianModel:
    """Reconstruct a model at bin centers, restoring original order and
    non-position attributes bit-exactly."""
    if q.n_center > q.n_total or q.codes.shape != (q.n_total, 3):
        raise ContainerDecodeError(
            f"inconsistent header: n_center {q.n_center}, n_total {q.n_total},"
            f" codes shape {q.codes.shape}")
    box = np.array([q.r_center] * 3)
    recon = np.empty((q.n_total, 3), dtype=np.float64)

    if q.scheme is QuantScheme.UNIFORM_XYZ:
        recon = _dequantize_xyz(q.codes, q.scene_bounds[0], q.scene_bounds[1], q.bits)
    elif q.scheme is QuantScheme.SPHERICAL_NO_SPLIT:
        t_lo, t_hi = q.t_range()
        recon = _dequantize_spherical(q.codes, q.origin, q.bits, t_lo, t_hi)
    else:
        nc = q.n_center
        if nc:
            recon[:nc] = q.origin + _dequantize_xyz(q.codes[:nc], -box, box, q.bits)
        if nc < q.n_total:
            if q.scheme is QuantScheme.SPHERICAL_SPLIT:
                t_lo, t_hi = q.t_range()
                recon[nc:] = _dequantize_spherical(q.codes[nc:], q.origin, q.bits, t_lo, t_hi)
            else:
                recon[nc:] = _dequantize_xyz(q.codes[nc:], q.scene_bounds[0],
                                             q.scene_bounds[1], q.bits)

    dtype = np.dtype([(name, dt) for name, dt in q.attribute_layout])
    data = np.zeros(q.n_total, dtype=dtype)
    for name in q.passthrough.dtype.names:
        data[name][q.permutation] = q.passthrough[name]
    positions = np.empty((q.n_total, 3), np.float64)
    positions[q.permutation] = recon
    for k, name in enumerate(POSITION_ATTRIBUTES):
        data[name] = positions[:, k].astype(dtype[name])
    return GaussianModel(data)


@dataclass(frozen=True)
class RateReport:
    """Bits per coordinate: payload plus split-signaling overhead."""

    bits_per_coord_payload: float
    overhead_bits_per_coord: float
    overhead_mode: OverheadMode

    @property
    def total_bits_per_coord(self) -> float:
        return self.bits_per_coord_payload + self.overhead_bits_per_coord


def rate_report(q: QuantizedModel, overhead_mode: OverheadMode | None = None) -> RateReport:
    """Rate accounting for one quantized model.

    Schemes without a split carry no overhead. With a split, the
    per-gaussian flag costs one bit per gaussian (1/3 bit per
    coordinate); signaling only the index of the first periphery
    gaussian costs ceil(log2(n + 1)) bits total.
    """
    mode = overhead_mode or q.overhead_mode
    if q.scheme not in SPLIT_SCHEMES:
        overhead = 0.0
    elif mode is OverheadMode.PER_GAUSSIAN_FLAG:
        overhead = 1.0 / 3.0
    else:
        overhead = float(np.ceil(np.log2(q.n_total + 1))) / (3.0 * q.n_total)
    return RateReport(bits_per_coord_payload=float(q.bits),
                      overhead_bits_per_coord=overhead, overhead_mode=mode)


# -- container format ------------------------------------------------------

MAGIC = b"GSQZ"
CONTAINER_VERSION = 1
_SCHEME_IDS = {s: i for i, s in enumerate(QuantScheme)}
_MODE_IDS = {m: i for i, m in enumerate(OverheadMode)}
_FIXED_HEADER = struct.Struct("<4s4B11d2Q")


def write_quantized(q: QuantizedModel, path) -> None:
    """Serialize to the GSQZ container (all integers little-endian).

    Layout: magic, version u8, scheme u8, bits u8, overhead_mode u8,
    origin 3xf64, r_center f64, rho_max f64, scene bounds 6xf64,
    n_total u64, n_center u64, packed codes (LSB-first within byte,
    gaussian-major, channel order (x,y,z) / (theta,phi,t)), passthrough
    attribute block, permutation table (u32 per gaussian). For the
    no-split scheme the r_center slot carries the lower rho cutoff of
    the t range (the scheme has no center region).
    """
    r_center_slot = q.rho_min if q.scheme is QuantScheme.SPHERICAL_NO_SPLIT else q.r_center
    header = _FIXED_HEADER.pack(
        MAGIC, CONTAINER_VERSION, _SCHEME_IDS[q.scheme], q.bits, _MODE_IDS[q.overhead_mode],
        *q.origin.tolist(), float(r_center_slot), q.rho_max,
        *q.scene_bounds.reshape(-1).tolist(), q.n_total, q.n_center)
    descriptor = json.dumps({"attributes": [list(pair) for pair in q.attribute_layout]}).encode()
    with open(Path(path), "wb") as fh:
        fh.write(header)
        fh.write(pack_codes(q.codes, q.bits))
        fh.write(struct.pack("<I", len(descriptor)))
        fh.write(descriptor)
        fh.write(q.passthrough.tobytes())
        fh.write(q.permutation.astype("<u4").tobytes())


def read_quantized(path) -> QuantizedModel:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _FIXED_HEADER.size:
        raise ContainerDecodeError(f"{path}: file shorter than the fixed header")
    fields = _FIXED_HEADER.unpack_from(blob, 0)
    magic, version, scheme_id, bits, mode_id = fields[:5]
    if magic != MAGIC:
        raise ContainerDecodeError(f"{path}: bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise ContainerDecodeError(f"{path}: unsupported container version {version}")
    try:
        scheme = list(QuantScheme)[scheme_id]
        mode = list(OverheadMode)[mode_id]
    except IndexError:
        raise ContainerDecodeError(f"{path}: unknown scheme/mode id") from None
    origin = np.array(fields[5:8], np.float64)
    r_center_slot, rho_max = fields[8], fields[9]
    scene_bounds = np.array(fields[10:16], np.float64).reshape(2, 3)
    n_total, n_center = fields[16], fields[17]
    if not MIN_BITS <= bits <= MAX_BITS:
        raise ContainerDecodeError(f"{path}: bits {bits} out of range")
    if n_center > n_total:
        raise ContainerDecodeError(f"{path}: n_center {n_center} exceeds n_total {n_total}")

    offset = _FIXED_HEADER.size
    code_size = packed_code_size(n_total, bits)
    if len(blob) < offset + code_size + 4:
        raise ContainerDecodeError(f"{path}: truncated code block")
    codes = unpack_codes(blob[offset:offset + code_size], bits, n_total)
    offset += code_size
    (desc_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    try:
        descriptor = json.loads(blob[offset:offset + desc_len].decode())
        layout = tuple((str(n), str(d)) for n, d in descriptor["attributes"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise ContainerDecodeError(f"{path}: bad attribute descriptor: {exc}") from None
    offset += desc_len
    pass_dtype = _passthrough_dtype(layout)
    pass_size = pass_dtype.itemsize * n_total
    perm_size = 4 * n_total
    if len(blob) < offset + pass_size + perm_size:
        raise ContainerDecodeError(f"{path}: truncated passthrough/permutation block")
    passthrough = np.frombuffer(blob[offset:offset + pass_size], dtype=pass_dtype).copy()
    offset += pass_size
    permutation = np.frombuffer(blob[offset:offset + perm_size], dtype="<u4").copy()
    if n_total and permutation.max() >= n_total:
        raise ContainerDecodeError(f"{path}: permutation index out of range")

    rho_min = r_center_slot if scheme is QuantScheme.SPHERICAL_NO_SPLIT else None
    return QuantizedModel(
        scheme=scheme, bits=bits, overhead_mode=mode, origin=origin,
        r_center=r_center_slot, rho_max=rho_max, scene_bounds=scene_bounds,
        n_total=n_total, n_center=n_center, codes=codes,
        passthrough=passthrough, permutation=permutation,
        attribute_layout=layout, rho_min=rho_min,
    )
