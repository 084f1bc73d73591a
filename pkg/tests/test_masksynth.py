import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hsstlab import masksynth as ms
from hsstlab.errors import FormatError, InputError, ValidationError


def gray(h, w, value):
    return np.full((h, w, 3), value, dtype=np.float64)


def checkerboard(h, w, cell=3):
    u, v = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    on = ((u // cell + v // cell) % 2).astype(float)
    return np.stack([on, 0.25 + 0.5 * on, 1.0 - on], axis=-1)


def template_from(region, color):
    region = np.asarray(region, dtype=bool)
    return ms.MaskTemplate(np.asarray(color, float) * region[..., None], region)


# -- composite ---------------------------------------------------------------

def test_empty_mask_is_identity():
    tex = np.random.default_rng(0).uniform(size=(6, 5, 3))
    out = ms.composite(tex, template_from(np.zeros((6, 5)), [0.3, 0.3, 0.3]))
    np.testing.assert_array_equal(out, tex)


def test_full_mask_replaces():
    tex = np.random.default_rng(1).uniform(size=(4, 4, 3))
    tpl = template_from(np.ones((4, 4)), [0.9, 0.1, 0.4])
    np.testing.assert_array_equal(ms.composite(tex, tpl), tpl.texture)


def test_two_by_two_example():
    region = np.array([[0, 0], [1, 1]])
    out = ms.composite(gray(2, 2, 0.5), template_from(region, [0.9, 0.9, 0.9]))
    np.testing.assert_array_equal(out[0], 0.5)
    np.testing.assert_array_equal(out[1], 0.9)


def test_template_leak_and_size_mismatch():
    region = np.zeros((3, 3), bool)
    leaky = ms.MaskTemplate(gray(3, 3, 0.2), region)
    with pytest.raises(ValidationError):
        ms.composite(gray(3, 3, 0.5), leaky)
    with pytest.raises(InputError):
        ms.composite(gray(4, 3, 0.5), template_from(region, [1, 1, 1]))


unit_floats = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(tex=arrays(np.float64, (5, 7, 3), elements=unit_floats),
       region=arrays(np.bool_, (5, 7)),
       color=st.tuples(unit_floats, unit_floats, unit_floats))
def test_locality_and_idempotence(tex, region, color):
    tpl = template_from(region, color)
    once = ms.composite(tex, tpl)
    # outside the region the texels are bit-identical
    assert np.array_equal(once[~region], tex[~region])
    assert np.array_equal(once[region], tpl.texture[region])
    assert np.array_equal(ms.composite(once, tpl), once)


# -- render -------------------------------------------------------------------

def test_identity_position_map_round_trip():
    tex = np.random.default_rng(2).uniform(size=(9, 11, 3))
    pos = ms.identity_position_map(9, 11)
    out = ms.render(tex, pos, np.ones((9, 11), bool), (9, 11))
    np.testing.assert_array_equal(out, tex)


def test_checkerboard_golden():
    tex = checkerboard(12, 12)
    out = ms.render(tex, ms.identity_position_map(12, 12), np.ones((12, 12), bool), (12, 12))
    assert np.array_equal(out, tex)
    assert np.array_equal(out[0, :4, 0], [0.0, 0.0, 0.0, 1.0])


def _two_texels(z_first, z_second):
    tex = np.array([[[0.1, 0.1, 0.1], [0.8, 0.8, 0.8]]])
    pos = np.array([[[1.0, 0.0, z_first], [1.2, 0.3, z_second]]])
    return ms.render(tex, pos, np.ones((1, 2), bool), (2, 3), background=(0.5, 0.5, 0.5))


def test_zbuffer_nearest_wins_in_either_order():
    assert _two_texels(0.2, 0.7)[0, 1, 0] == 0.8
    assert _two_texels(0.7, 0.2)[0, 1, 0] == 0.1
    out = _two_texels(0.2, 0.7)
    assert out[1, 2, 0] == 0.5 and out[0, 0, 0] == 0.5


def test_zbuffer_tie_keeps_first_texel():
    assert _two_texels(0.4, 0.4)[0, 1, 0] == 0.1


def test_invalid_texels_are_not_drawn():
    tex = gray(2, 2, 1.0)
    valid = np.array([[1, 0], [0, 0]], bool)
    pos = ms.identity_position_map(2, 2)
    pos[1, 1] = [99.0, 99.0, 0.0]  # out of range but invalid, so ignored
    out = ms.render(tex, pos, valid, (2, 2), background=(0.0, 0.2, 0.0))
    np.testing.assert_array_equal(out[0, 0], 1.0)
    np.testing.assert_array_equal(out[1, 1], [0.0, 0.2, 0.0])


def test_out_of_range_valid_coordinates_rejected():
    pos = ms.identity_position_map(2, 2)
    pos[0, 0, 0] = -1.0
    with pytest.raises(ValidationError):
        ms.render(gray(2, 2, 0.5), pos, np.ones((2, 2), bool), (2, 2))


def test_rounding_half_away_from_zero():
    np.testing.assert_array_equal(ms.round_half_away(np.array([0.5, 1.5, 2.5, -0.5, 0.49])),
                                  [1.0, 2.0, 3.0, -1.0, 0.0])


def test_render_is_deterministic_with_collisions():
    rng = np.random.default_rng(4)
    tex = rng.uniform(size=(20, 20, 3))
    pos = np.concatenate([rng.uniform(0, 9.9, (20, 20, 2)), rng.integers(0, 3, (20, 20, 1))], axis=2)
    a = ms.render(tex, pos, np.ones((20, 20), bool), (10, 10))
    b = ms.render(tex.copy(), pos.copy(), np.ones((20, 20), bool), (10, 10))
    assert np.array_equal(a, b)


# -- synthesize_masked -----------------------------------------------------------

def _assets(size=48, dx=0, dy=0):
    rng = np.random.default_rng(9)
    tex = rng.uniform(0.2, 0.8, (size, size, 3))
    pos = ms.identity_position_map(size, size, dx, dy)
    valid = np.ones((size, size), bool)
    if dx or dy:
        valid &= (pos[..., 0] >= 0) & (pos[..., 0] < size) & (pos[..., 1] >= 0) & (pos[..., 1] < size)
    return ms.UVAssets(tex, pos, valid)


def test_empty_template_renders_original():
    a = _assets()
    out = ms.synthesize_masked(a, template_from(np.zeros((48, 48)), [1, 1, 1]), (48, 48))
    np.testing.assert_array_equal(out, ms.render(a.texture, a.position, a.validity, (48, 48)))


def test_full_template_paints_every_face_pixel():
    a = _assets()
    out = ms.synthesize_masked(a, template_from(np.ones((48, 48)), [0.2, 0.4, 0.6]), (48, 48))
    assert np.all(out == np.array([0.2, 0.4, 0.6]))


def test_lower_half_template_through_shifted_position_map():
    dx, dy = 2, -3
    a = _assets(dx=dx, dy=dy)
    region = np.zeros((48, 48), bool)
    region[24:] = True
    tpl = template_from(region, [0.0, 0.5, 1.0])
    plain = ms.render(a.texture, a.position, a.validity, (48, 48))
    out = ms.synthesize_masked(a, tpl, (48, 48))
    # project the UV region through the position map
    projected = np.zeros((48, 48), bool)
    uu, vv = np.nonzero(region & a.validity)
    projected[uu + dy, vv + dx] = True
    assert np.all(out[projected] == [0.0, 0.5, 1.0])
    assert np.array_equal(out[~projected], plain[~projected])


def test_uvassets_validation():
    with pytest.raises(ValidationError):
        ms.UVAssets(gray(2, 2, 1.5), ms.identity_position_map(2, 2), np.ones((2, 2)))
    with pytest.raises(InputError):
        ms.UVAssets(gray(2, 2, 0.5), ms.identity_position_map(3, 2), np.ones((2, 2)))


# -- procedural templates ------------------------------------------------------------

def test_template_library():
    lib = ms.template_library(48)
    assert len(lib) >= 3
    coverages = set()
    for tpl in lib:
        tpl.validate()
        tpl.to_luminance().validate()
        rows = np.nonzero(tpl.region)[0]
        assert rows.mean() > 48 * ms.FACE_CENTER[1]  # lower face
        coverages.add(int(tpl.region.sum()))
    assert len(coverages) == len(lib)
    with pytest.raises(InputError):
        ms.procedural_template("bandana")


def test_luminance_template_is_gray():
    tpl = ms.procedural_template("surgical").to_luminance()
    assert np.array_equal(tpl.texture[..., 0], tpl.texture[..., 1])
    assert np.array_equal(tpl.texture[..., 1], tpl.texture[..., 2])


# -- file formats ------------------------------------------------------------------

def test_uva_round_trip(tmp_path):
    a = np.random.default_rng(3).normal(size=(5, 4, 3)).astype(np.float32)
    ms.write_uva(tmp_path / "a.uva", a)
    raw = (tmp_path / "a.uva").read_bytes()
    assert raw[:8] == b"HSSTUVA1"
    assert int.from_bytes(raw[8:12], "little") == 5 and int.from_bytes(raw[16:20], "little") == 3
    np.testing.assert_array_equal(ms.read_uva(tmp_path / "a.uva"), a)


def test_uva_rejects_corruption(tmp_path):
    p = tmp_path / "bad.uva"
    p.write_bytes(b"NOTMAGIC" + bytes(12))
    with pytest.raises(FormatError):
        ms.read_uva(p)
    ms.write_uva(p, np.zeros((2, 2, 1)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError):
        ms.read_uva(p)


def test_position_map_and_template_files(tmp_path):
    pos = ms.identity_position_map(6, 6, 1, 0)
    valid = pos[..., 0] < 6
    ms.write_position_map(tmp_path / "p.uva", pos, valid)
    pos2, valid2 = ms.read_position_map(tmp_path / "p.uva")
    np.testing.assert_array_equal(pos2, pos)
    np.testing.assert_array_equal(valid2, valid)
    ms.write_position_map(tmp_path / "q.uva", pos)
    assert ms.read_position_map(tmp_path / "q.uva")[1].all()

    tpl = ms.procedural_template("n95", 16)
    ms.write_template(tmp_path / "t.uva", tpl)
    back = ms.read_template(tmp_path / "t.uva")
    np.testing.assert_array_equal(back.region, tpl.region)
    np.testing.assert_allclose(back.texture, tpl.texture, atol=1e-7)


def test_png_round_trip(tmp_path):
    img = np.random.default_rng(5).integers(0, 256, (7, 9, 3)) / 255.0
    ms.write_png(tmp_path / "x.png", img)
    np.testing.assert_array_equal(ms.read_png(tmp_path / "x.png"), img)
