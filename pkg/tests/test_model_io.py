import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from gsqz.model_io import (CameraRig, GaussianModel, ModelParseError,
                           ModelValidationError, read_camera_rig, read_model,
                           standard_attribute_order, write_camera_rig, write_model)


def make_header(n, names, types=None):
    lines = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    types = types or {}
    for name in names:
        lines.append(f"property {types.get(name, 'float')} {name}")
    lines.append("end_header")
    return ("\n".join(lines) + "\n").encode()


def make_model_bytes(rows, sh_degree=0, extra=()):
    """rows: list of dicts keyed by attribute name (float32 values)."""
    names = list(standard_attribute_order(sh_degree)) + list(extra)
    blob = make_header(len(rows), names)
    for row in rows:
        blob += struct.pack(f"<{len(names)}f", *[row.get(n, 0.0) for n in names])
    return blob


def default_row(**overrides):
    row = {"rot_0": 1.0}
    row.update(overrides)
    return row


def test_read_single_gaussian_at_origin(tmp_path):
    path = tmp_path / "one.ply"
    path.write_bytes(make_model_bytes([default_row(x=0.0, y=0.0, z=0.0)]))
    model = read_model(path)
    assert len(model) == 1
    assert_array_equal(model.positions, [[0.0, 0.0, 0.0]])


def test_rotation_normalized_on_access(tmp_path):
    path = tmp_path / "rot.ply"
    path.write_bytes(make_model_bytes([default_row(rot_0=2.0)]))
    model = read_model(path)
    assert_allclose(model.rotations, [[1.0, 0.0, 0.0, 0.0]])
    # the raw buffer keeps the file's value, so write-back stays byte-exact
    assert model.data["rot_0"][0] == 2.0


def test_truncated_payload(tmp_path):
    rows = [default_row(x=float(i)) for i in range(10)]
    blob = make_model_bytes(rows)
    path = tmp_path / "trunc.ply"
    path.write_bytes(blob[:-30])  # drop most of element 10
    with pytest.raises(ModelParseError, match="element 10"):
        read_model(path)


def test_malformed_header_reports_offset(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nend_header\n")
    with pytest.raises(ModelParseError, match="byte offset") as err:
        read_model(path)
    assert err.value.byte_offset == 4


def test_not_a_ply(tmp_path):
    path = tmp_path / "noise.ply"
    path.write_bytes(b"\x00\x01\x02hello")
    with pytest.raises(ModelParseError, match="magic"):
        read_model(path)


def test_non_finite_value_names_element(tmp_path):
    rows = [default_row(), default_row(x=float("nan")), default_row()]
    path = tmp_path / "nan.ply"
    path.write_bytes(make_model_bytes(rows))
    with pytest.raises(ModelValidationError, match="element 1"):
        read_model(path)


def test_zero_quaternion_rejected(tmp_path):
    path = tmp_path / "zq.ply"
    path.write_bytes(make_model_bytes([default_row(rot_0=0.0)]))
    with pytest.raises(ModelValidationError, match="rotation"):
        read_model(path)


def test_empty_model_rejected(tmp_path):
    path = tmp_path / "empty.ply"
    path.write_bytes(make_model_bytes([]))
    with pytest.raises(ModelValidationError):
        read_model(path)


def test_unknown_attributes_preserved(tmp_path):
    rows = [default_row(my_custom=7.5), default_row(my_custom=-1.25)]
    blob = make_model_bytes(rows, extra=("my_custom",))
    path = tmp_path / "extra.ply"
    path.write_bytes(blob)
    model = read_model(path)
    assert "my_custom" in model.attribute_names
    assert_array_equal(model.data["my_custom"], [7.5, -1.25])
    out = tmp_path / "extra_out.ply"
    write_model(model, out)
    assert out.read_bytes() == blob


def test_mixed_dtype_attribute_preserved(tmp_path):
    names = list(standard_attribute_order(0)) + ["tag"]
    blob = make_header(1, names, types={"tag": "uchar"})
    blob += struct.pack(f"<{len(names) - 1}fB", *([0.0] * 3 + [0.0] * 3 + [0.0] * 3 +
                                                  [0.0] + [0.0] * 3 + [1.0, 0, 0, 0] + [200]))
    path = tmp_path / "mixed.ply"
    path.write_bytes(blob)
    model = read_model(path)
    assert model.data["tag"][0] == 200
    out = tmp_path / "mixed_out.ply"
    write_model(model, out)
    assert out.read_bytes() == blob


def test_sh_degree_layouts(tmp_path):
    row3 = default_row()
    path = tmp_path / "deg3.ply"
    path.write_bytes(make_model_bytes([row3], sh_degree=3))
    model = read_model(path)
    assert model.sh_degree == 3
    assert model.sh_rest.shape == (1, 45)

    path0 = tmp_path / "deg0.ply"
    path0.write_bytes(make_model_bytes([row3], sh_degree=0))
    model0 = read_model(path0)
    assert model0.sh_degree == 0
    assert model0.sh_rest is None
    assert not any(n.startswith("f_rest_") for n in model0.attribute_names)


def test_round_trip_byte_identity_corpus(tmp_path):
    corpus = [
        make_model_bytes([default_row(x=1.5, y=-2.0, z=3.25, opacity=0.7)]),
        make_model_bytes([default_row(x=float(i), f_rest_7=0.125 * i) for i in range(5)],
                         sh_degree=3),
        make_model_bytes([default_row(rot_0=2.0, scale_1=-4.5), default_row(z=9.0)],
                         extra=("pad0", "pad1")),
    ]
    for i, blob in enumerate(corpus):
        src = tmp_path / f"c{i}.ply"
        dst = tmp_path / f"c{i}_out.ply"
        src.write_bytes(blob)
        write_model(read_model(src), dst)
        assert dst.read_bytes() == blob, f"corpus file {i} not byte-identical"


@st.composite
def model_arrays(draw):
    n = draw(st.integers(1, 40))
    seed = draw(st.integers(0, 2**32 - 1))
    degree = draw(st.sampled_from([0, 1, 2, 3]))
    rng = np.random.default_rng(seed)
    rest_cols = {0: None, 1: 9, 2: 24, 3: 45}[degree]
    return dict(
        positions=rng.uniform(-100, 100, (n, 3)),
        log_scales=rng.uniform(-6, 2, (n, 3)),
        rotations=rng.normal(size=(n, 4)) + 1e-3,
        opacity_logits=rng.uniform(-5, 5, n),
        sh_dc=rng.uniform(-2, 2, (n, 3)),
        sh_rest=None if rest_cols is None else rng.uniform(-1, 1, (n, rest_cols)),
    )


@given(model_arrays())
@settings(max_examples=40, deadline=None)
def test_round_trip_property(tmp_path_factory, arrays):
    tmp = tmp_path_factory.mktemp("rt")
    model = GaussianModel.from_arrays(**arrays)
    p1, p2 = tmp / "a.ply", tmp / "b.ply"
    write_model(model, p1)
    write_model(read_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_write_rejects_empty_model():
    with pytest.raises(ModelValidationError):
        GaussianModel(np.zeros(0, dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4")]))


@given(st.binary(max_size=400))
@settings(max_examples=150, deadline=None)
def test_parsing_is_total(tmp_path_factory, blob):
    # every input yields a model or a structured error, never a crash
    path = tmp_path_factory.mktemp("fuzz") / "f.ply"
    path.write_bytes(blob)
    try:
        model = read_model(path)
    except (ModelParseError, ModelValidationError):
        return
    assert len(model) > 0


@given(st.binary(max_size=400))
@settings(max_examples=100, deadline=None)
def test_parsing_is_total_with_plausible_header(tmp_path_factory, payload):
    path = tmp_path_factory.mktemp("fuzz") / "f.ply"
    path.write_bytes(make_header(3, ["x", "y", "z"]) + payload)
    try:
        model = read_model(path)
    except (ModelParseError, ModelValidationError):
        return
    assert len(model) == 3


def test_with_positions_round_trip(small_scene):
    model, _, _ = small_scene
    moved = model.with_positions(model.positions + 1.0)
    assert_allclose(moved.positions, model.positions + 1.0, rtol=1e-6)
    assert_array_equal(moved.data["opacity"], model.data["opacity"])
    with pytest.raises(ModelValidationError):
        model.with_positions(np.zeros((3, 3)))


def test_gaussian_accessor(small_scene):
    model, _, _ = small_scene
    g = model.gaussian(5)
    assert_allclose(g.position, model.positions[5])
    assert np.linalg.norm(g.rotation) == pytest.approx(1.0)
    assert g.sh_rest is None


# -- camera rig -------------------------------------------------------------

def test_rig_single_camera(tmp_path):
    path = tmp_path / "rig.json"
    path.write_text('{"cameras": [{"center": [0, 0, 0]}], "focal_px": 500,'
                    ' "width": 800, "height": 600}')
    rig = read_camera_rig(path)
    assert rig.n_cameras == 1
    assert_array_equal(rig.centers, [[0, 0, 0]])
    assert rig.focal_px == 500
    assert rig.image_size == (800, 600)


def test_rig_two_cameras(tmp_path):
    path = tmp_path / "rig.json"
    path.write_text('{"cameras": [{"center": [1, 0, 0]}, {"center": [-1, 0, 0]}],'
                    ' "focal_px": 300, "width": 400, "height": 300}')
    assert read_camera_rig(path).n_cameras == 2


def test_rig_zero_cameras(tmp_path):
    path = tmp_path / "rig.json"
    path.write_text('{"cameras": [], "focal_px": 300, "width": 400, "height": 300}')
    with pytest.raises(ModelParseError):
        read_camera_rig(path)


def test_rig_missing_field_named(tmp_path):
    path = tmp_path / "rig.json"
    path.write_text('{"cameras": [{"center": [0, 0, 0]}], "width": 4, "height": 3}')
    with pytest.raises(ModelParseError, match="focal_px"):
        read_camera_rig(path)
    path.write_text('{"cameras": [{"position": [0, 0, 0]}], "focal_px": 1,'
                    ' "width": 4, "height": 3}')
    with pytest.raises(ModelParseError, match="center"):
        read_camera_rig(path)


def test_rig_write_read_round_trip(tmp_path, small_scene):
    _, rig, _ = small_scene
    path = tmp_path / "rig.json"
    write_camera_rig(rig, path)
    back = read_camera_rig(path)
    assert_allclose(back.centers, rig.centers)
    assert back.focal_px == rig.focal_px
    assert back.image_size == rig.image_size


def test_rig_validation():
    with pytest.raises(ModelValidationError):
        CameraRig(centers=np.zeros((1, 3)), focal_px=0.0, image_size=(4, 3))
