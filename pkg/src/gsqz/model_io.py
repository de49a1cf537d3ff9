"""Reading and writing Gaussian-splatting scene models.

The on-disk model format is the de-facto standard binary little-endian
point cloud ("ply") with one ``vertex`` element carrying
``x, y, z, nx, ny, nz, f_dc_0..2, [f_rest_0..44,] opacity, scale_0..2,
rot_0..3`` as 32-bit floats. Unknown extra attributes are carried
opaquely so the codec stays composable with tools that add their own
columns. The raw element buffer is kept verbatim: reading a well-formed
file and writing the unmodified model back is byte-identical, even when
quaternions needed re-normalization for the accessors.

The camera rig is a sidecar JSON file:
``{"cameras": [{"center": [x, y, z]}, ...], "focal_px": f,
"width": w, "height": h}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray


class ModelParseError(ValueError):
    """Structurally invalid model or rig file."""

    def __init__(self, message: str, *, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class ModelValidationError(ValueError):
    """File parsed but the content violates a model invariant."""


# PLY scalar types we can carry through opaquely.
_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_PLY_NAMES = {v: k for k, v in _PLY_DTYPES.items()
              if k in ("char", "uchar", "short", "ushort", "int", "uint", "float", "double")}

POSITION_ATTRIBUTES = ("x", "y", "z")
_F_REST_COUNT_BY_DEGREE = {0: 0, 1: 9, 2: 24, 3: 45}


def standard_attribute_order(sh_degree: int) -> tuple[str, ...]:
    """Reference 3DGS export attribute layout for a given SH degree."""
    n_rest = _F_REST_COUNT_BY_DEGREE[sh_degree]
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    return tuple(names)


@dataclass(frozen=True)
class Gaussian:
    """One splat, as exposed by :meth:`GaussianModel.gaussian`."""

    position: NDArray[np.float64]
    log_scale: NDArray[np.float64]
    rotation: NDArray[np.float64]  # unit quaternion (w, x, y, z)
    opacity_logit: float
    sh_dc: NDArray[np.float64]
    sh_rest: NDArray[np.float64] | None


class GaussianModel:
    """Array-backed scene model.

    ``data`` is the raw structured element buffer from the file (or a
    synthesized one); accessors expose float64 views with quaternions
    normalized. Keeping the raw buffer is what makes read -> write
    byte-identical.
    """

    def __init__(self, data: np.ndarray):
        if data.shape[0] == 0:
            raise ModelValidationError("model must contain at least one gaussian")
        names = data.dtype.names or ()
        missing = [a for a in POSITION_ATTRIBUTES if a not in names]
        if missing:
            raise ModelValidationError(f"model is missing position attributes {missing}")
        self.data = data
        self._validate()

    def _validate(self):
        for name in self.data.dtype.names:
            col = self.data[name]
            if np.issubdtype(col.dtype, np.floating):
                bad = np.flatnonzero(~np.isfinite(col))
                if bad.size:
                    raise ModelValidationError(
                        f"non-finite value in attribute '{name}' at element {bad[0]}")
        if self.has_rotation:
            raw = self._columns(["rot_0", "rot_1", "rot_2", "rot_3"])
            norms = np.linalg.norm(raw, axis=1)
            bad = np.flatnonzero(norms < 1e-6)
            if bad.size:
                raise ModelValidationError(
                    f"zero-norm rotation quaternion at element {bad[0]}")

    # -- layout --------------------------------------------------------
    @property
    def attribute_names(self) -> tuple[str, ...]:
        return tuple(self.data.dtype.names)

    @property
    def has_rotation(self) -> bool:
        return "rot_0" in self.data.dtype.names

    @property
    def sh_degree(self) -> int:
        n_rest = sum(1 for n in self.data.dtype.names if n.startswith("f_rest_"))
        n_coeffs = n_rest // 3 + 1
        degree = int(round(np.sqrt(n_coeffs))) - 1
        if (degree + 1) ** 2 != n_coeffs or n_rest % 3:
            raise ModelValidationError(f"f_rest count {n_rest} is not a valid SH layout")
        return degree

    def __len__(self) -> int:
        return self.data.shape[0]

    def _columns(self, names) -> NDArray[np.float64]:
        return np.stack([self.data[n].astype(np.float64) for n in names], axis=1)

    # -- accessors (float64, normalized) -------------------------------
    @property
    def positions(self) -> NDArray[np.float64]:
        return self._columns(POSITION_ATTRIBUTES)

    @property
    def log_scales(self) -> NDArray[np.float64]:
        return self._columns(["scale_0", "scale_1", "scale_2"])

    @property
    def rotations(self) -> NDArray[np.float64]:
        raw = self._columns(["rot_0", "rot_1", "rot_2", "rot_3"])
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)

    @property
    def opacity_logits(self) -> NDArray[np.float64]:
        return self.data["opacity"].astype(np.float64)

    @property
    def sh_dc(self) -> NDArray[np.float64]:
        return self._columns(["f_dc_0", "f_dc_1", "f_dc_2"])

    @property
    def sh_rest(self) -> NDArray[np.float64] | None:
        names = sorted((n for n in self.data.dtype.names if n.startswith("f_rest_")),
                       key=lambda n: int(n.rsplit("_", 1)[1]))
        if not names:
            return None
        return self._columns(names)

    def gaussian(self, i: int) -> Gaussian:
        sh_rest = self.sh_rest
        return Gaussian(
            position=self.positions[i],
            log_scale=self.log_scales[i],
            rotation=self.rotations[i],
            opacity_logit=float(self.data["opacity"][i]),
            sh_dc=self.sh_dc[i],
            sh_rest=None if sh_rest is None else sh_rest[i],
        )

    def with_positions(self, positions: NDArray) -> "GaussianModel":
        """Copy of the model with x, y, z replaced (cast to float32)."""
        positions = np.asarray(positions, np.float64)
        if positions.shape != (len(self), 3):
            raise ModelValidationError(
                f"positions shape {positions.shape} does not match model of length {len(self)}")
        data = self.data.copy()
        for k, name in enumerate(POSITION_ATTRIBUTES):
            data[name] = positions[:, k].astype(data.dtype[name])
        return GaussianModel(data)

    @classmethod
    def from_arrays(cls, positions, log_scales, rotations, opacity_logits,
                    sh_dc, sh_rest=None) -> "GaussianModel":
        """Build a model in the reference attribute layout (normals zeroed)."""
        positions = np.asarray(positions, np.float64)
        n = positions.shape[0]
        if sh_rest is None:
            degree = 0
        else:
            sh_rest = np.asarray(sh_rest, np.float64)
            degree = {9: 1, 24: 2, 45: 3}[sh_rest.shape[1]]
        names = standard_attribute_order(degree)
        data = np.zeros(n, dtype=[(name, "<f4") for name in names])
        for k, name in enumerate(POSITION_ATTRIBUTES):
            data[name] = positions[:, k]
        for k in range(3):
            data[f"f_dc_{k}"] = np.asarray(sh_dc, np.float64)[:, k]
        if sh_rest is not None:
            for k in range(sh_rest.shape[1]):
                data[f"f_rest_{k}"] = sh_rest[:, k]
        data["opacity"] = np.asarray(opacity_logits, np.float64)
        for k in range(3):
            data[f"scale_{k}"] = np.asarray(log_scales, np.float64)[:, k]
        for k in range(4):
            data[f"rot_{k}"] = np.asarray(rotations, np.float64)[:, k]
        return cls(data)


def _parse_header(blob: bytes, path) -> tuple[int, list[tuple[str, str]], int]:
    """Returns (n_elements, [(name, dtype)], payload_offset)."""
    end_marker = b"end_header\n"
    end = blob.find(end_marker)
    if not blob.startswith(b"ply\n"):
        raise ModelParseError(f"{path}: not a ply file (bad magic)", byte_offset=0)
    if end < 0:
        raise ModelParseError(f"{path}: unterminated header", byte_offset=len(blob))
    header = blob[:end].decode("ascii", errors="replace")
    payload_offset = end + len(end_marker)

    n_elements = None
    properties: list[tuple[str, str]] = []
    offset = 0
    for line in header.split("\n"):
        stripped = line.strip()
        fields = stripped.split()
        if not fields or fields[0] in ("ply", "comment", "obj_info"):
            pass
        elif fields[0] == "format":
            if fields[1:] != ["binary_little_endian", "1.0"]:
                raise ModelParseError(
                    f"{path}: unsupported format {stripped!r}", byte_offset=offset)
        elif fields[0] == "element":
            if n_elements is not None:
                raise ModelParseError(
                    f"{path}: multiple elements are not supported", byte_offset=offset)
            if len(fields) != 3 or fields[1] != "vertex":
                raise ModelParseError(
                    f"{path}: expected 'element vertex N', got {stripped!r}", byte_offset=offset)
            try:
                n_elements = int(fields[2])
            except ValueError:
                n_elements = -1
            if n_elements < 0:
                raise ModelParseError(
                    f"{path}: bad element count {fields[2]!r}", byte_offset=offset)
        elif fields[0] == "property":
            if len(fields) != 3 or fields[1] == "list":
                raise ModelParseError(
                    f"{path}: unsupported property {stripped!r}", byte_offset=offset)
            ply_type, name = fields[1], fields[2]
            if ply_type not in _PLY_DTYPES:
                raise ModelParseError(
                    f"{path}: unknown property type {ply_type!r}", byte_offset=offset)
            properties.append((name, "<" + _PLY_DTYPES[ply_type]))
        else:
            raise ModelParseError(
                f"{path}: unrecognized header line {stripped!r}", byte_offset=offset)
        offset += len(line) + 1
    if n_elements is None:
        raise ModelParseError(f"{path}: header has no element declaration", byte_offset=end)
    if not properties:
        raise ModelParseError(f"{path}: header declares no properties", byte_offset=end)
    return n_elements, properties, payload_offset


def read_model(path) -> GaussianModel:
    """Parse a binary model file.

    Raises ModelParseError (with a byte offset) for structural problems
    and ModelValidationError for non-finite values, zero quaternions or
    an empty element list.
    """
    path = Path(path)
    blob = path.read_bytes()
    n, properties, payload_offset = _parse_header(blob, path)
    dtype = np.dtype(properties)
    payload = blob[payload_offset:]
    if len(payload) < n * dtype.itemsize:
        n_complete = len(payload) // dtype.itemsize
        raise ModelParseError(
            f"{path}: truncated payload, header claims {n} elements but data"
            f" ends at element {n_complete + 1}",
            byte_offset=payload_offset + len(payload))
    if n == 0:
        raise ModelValidationError(f"{path}: model must contain at least one gaussian")
    data = np.frombuffer(payload[:n * dtype.itemsize], dtype=dtype).copy()
    try:
        return GaussianModel(data)
    except ModelValidationError as exc:
        raise ModelValidationError(f"{path}: {exc}") from None


def write_model(model: GaussianModel, path) -> None:
    """Write the model back out in its recorded attribute order."""
    path = Path(path)
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(model)}"]
    for name in model.attribute_names:
        code = model.data.dtype[name].str.lstrip("<>=|")
        lines.append(f"property {_PLY_NAMES[code]} {name}")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(model.data.tobytes())
    except OSError as exc:
        raise OSError(f"failed to write model to {path}: {exc}") from exc


@dataclass(frozen=True)
class CameraRig:
    """Camera centers (world units) plus shared intrinsics."""

    centers: NDArray[np.float64]  # (N, 3)
    focal_px: float
    image_size: tuple[int, int]  # (width, height)

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, np.float64))
        object.__setattr__(self, "centers", centers)
        if centers.shape[0] < 1 or centers.shape[1] != 3:
            raise ModelValidationError(f"rig needs at least one 3-vector center, got shape {centers.shape}")
        if not self.focal_px > 0:
            raise ModelValidationError(f"focal_px must be positive, got {self.focal_px}")

    @property
    def n_cameras(self) -> int:
        return self.centers.shape[0]


def read_camera_rig(path) -> CameraRig:
    """Load the JSON rig sidecar; missing fields raise a ModelParseError naming them."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ModelParseError(f"{path}: rig file must hold one JSON object")
    for key in ("cameras", "focal_px", "width", "height"):
        if key not in doc:
            raise ModelParseError(f"{path}: missing field '{key}'")
    cams = doc["cameras"]
    if not cams:
        raise ModelParseError(f"{path}: rig must list at least one camera")
    try:
        centers = []
        for i, cam in enumerate(cams):
            if "center" not in cam:
                raise ModelParseError(f"{path}: camera {i} is missing field 'center'")
            center = cam["center"]
            if len(center) != 3:
                raise ModelParseError(f"{path}: camera {i} center must have 3 components")
            centers.append([float(v) for v in center])
        return CameraRig(centers=np.array(centers, np.float64),
                         focal_px=float(doc["focal_px"]),
                         image_size=(int(doc["width"]), int(doc["height"])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (ModelParseError, ModelValidationError)):
            raise
        raise ModelParseError(f"{path}: malformed rig value: {exc}") from None


def write_camera_rig(rig: CameraRig, path) -> None:
    doc = {
        "cameras": [{"center": [float(v) for v in c]} for c in rig.centers],
        "focal_px": rig.focal_px,
        "width": rig.image_size[0],
        "height": rig.image_size[1],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
