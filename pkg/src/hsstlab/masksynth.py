"""Mask compositing in UV texture space and splat rendering back to 2D.

A UV texture holds the colour of each surface point; the matching position
map holds, per UV texel, the image coordinates (x, y) and depth z of that
point.  Masking a face is then a pure texture edit (:func:`composite`)
followed by re-projection (:func:`render`).

File formats
------------
* Textures and images: 8-bit RGB PNG, values mapped to [0, 1].
* Position maps, validity maps, templates: ``HSSTUVA1`` container, i.e. the
  8-byte magic, three little-endian uint32 (rows, cols, channels) and the
  float32 data in row-major (rows, cols, channels) order.  A position map
  stored with 4 channels carries validity in the last channel; a template is
  stored as 4 channels (RGB colour + binary region).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError, InputError, ValidationError

UVA_MAGIC = b"HSSTUVA1"
_UVA_HEADER = struct.Struct("<8sIII")

# Face ellipse in normalized (x, y) UV coordinates; shared with the data generator.
FACE_CENTER = (0.5, 0.52)
FACE_RADII = (0.36, 0.44)


@dataclass
class UVAssets:
    texture: np.ndarray
    position: np.ndarray
    validity: np.ndarray

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        self.validity = np.asarray(self.validity).astype(bool)
        hu, wu = self.texture.shape[:2]
        if self.texture.shape != (hu, wu, 3):
            raise InputError(f"texture must be Hu x Wu x 3, got {self.texture.shape}")
        if self.position.shape != (hu, wu, 3):
            raise InputError(f"position map must be {(hu, wu, 3)}, got {self.position.shape}")
        if self.validity.shape != (hu, wu):
            raise InputError(f"validity must be {(hu, wu)}, got {self.validity.shape}")
        if self.texture.min(initial=0.0) < 0.0 or self.texture.max(initial=0.0) > 1.0:
            raise ValidationError("texture values must lie in [0, 1]")


@dataclass
class MaskTemplate:
    """Template colour ``texture`` with binary support ``region``."""

    texture: np.ndarray
    region: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        self.texture = np.asarray(self.texture, dtype=np.float64)
        self.region = np.asarray(self.region).astype(bool)
        if self.texture.ndim != 3 or self.texture.shape[:2] != self.region.shape:
            raise InputError(
                f"template texture {self.texture.shape} and region {self.region.shape} disagree"
            )

    def validate(self):
        if np.any(self.texture[~self.region] != 0.0):
            raise ValidationError(f"template {self.name!r} has colour outside its region")

    def to_luminance(self) -> "MaskTemplate":
        lum = luminance(self.texture)
        tex = np.repeat(lum[..., None], 3, axis=2) * self.region[..., None]
        return MaskTemplate(tex, self.region.copy(), self.name + "-lum")


def luminance(rgb: np.ndarray) -> np.ndarray:
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def composite(texture, template: MaskTemplate) -> np.ndarray:
    """Masked texture: template colour inside the region, original texture elsewhere.

    Computed literally as ``T_M + T_I * (1 - M)``; with the template's colour
    confined to M this leaves every texel outside M bit-identical.
    """
    tex = np.asarray(texture, dtype=np.float64)
    if tex.shape != template.texture.shape:
        raise InputError(f"texture {tex.shape} and template {template.texture.shape} differ in size")
    template.validate()
    keep = (~template.region).astype(np.float64)[..., None]
    return template.texture + tex * keep


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def render(texture, position, validity, out_dims, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Splat every valid texel to its rounded (x, y) image pixel.

    When several texels land on one pixel the one with the largest z wins;
    equal z keeps the texel that comes first in row-major UV order.  Pixels
    nobody writes take ``background``.
    """
    tex = np.asarray(texture, dtype=np.float64)
    pos = np.asarray(position, dtype=np.float64)
    valid = np.asarray(validity).astype(bool)
    h, w = int(out_dims[0]), int(out_dims[1])
    if pos.shape[:2] != tex.shape[:2] or valid.shape != tex.shape[:2]:
        raise InputError("texture, position map and validity must share UV dimensions")
    channels = tex.shape[2]
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (channels,))
    out = np.empty((h, w, channels))
    out[...] = bg

    flat_valid = valid.ravel()
    xs = pos[..., 0].ravel()[flat_valid]
    ys = pos[..., 1].ravel()[flat_valid]
    zs = pos[..., 2].ravel()[flat_valid]
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys)) and np.all(np.isfinite(zs))):
        raise ValidationError("position map has non-finite coordinates at valid texels")
    if xs.size and (xs.min() < 0 or xs.max() >= w or ys.min() < 0 or ys.max() >= h):
        raise ValidationError(f"valid position coordinates fall outside the {h}x{w} output")
    colors = tex.reshape(-1, channels)[flat_valid]
    # x in [w - 0.5, w) rounds to w; keep it on the last column
    col = np.clip(round_half_away(xs), 0, w - 1).astype(np.int64)
    row = np.clip(round_half_away(ys), 0, h - 1).astype(np.int64)
    pix = row * w + col
    order = np.lexsort((np.arange(pix.size), -zs, pix))
    first = np.unique(pix[order], return_index=True)[1]
    winners = order[first]
    out.reshape(-1, channels)[pix[winners]] = colors[winners]
    return out


def synthesize_masked(assets: UVAssets, template: MaskTemplate, out_dims,
                      background=(0.0, 0.0, 0.0)) -> np.ndarray:
    masked = composite(assets.texture, template)
    return render(masked, assets.position, assets.validity, out_dims, background)


def identity_position_map(h: int, w: int, dx: float = 0.0, dy: float = 0.0) -> np.ndarray:
    """Position map sending texel (u, v) to image pixel (x=v+dx, y=u+dy) at depth 0."""
    u, v = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([v + dx, u + dy, np.zeros_like(u)], axis=-1)


def _face_grid(size: int):
    coords = (np.arange(size) + 0.5) / size
    y, x = np.meshgrid(coords, coords, indexing="ij")
    fx = (x - FACE_CENTER[0]) / FACE_RADII[0]
    fy = (y - FACE_CENTER[1]) / FACE_RADII[1]
    return x, y, fx, fy


TEMPLATE_KINDS = ("surgical", "cloth", "n95")


def procedural_template(kind: str, size: int = 48, color=None) -> MaskTemplate:
    """Lower-face mask shapes of varying coverage.

    surgical: flat band from just below the nose to the chin, with pleats.
    cloth:    reaches higher (bridge of the nose) and wider, plain weave.
    n95:      rounded cup centered on mouth/nose.
    """
    x, y, fx, fy = _face_grid(size)
    inside_face = fx**2 + fy**2 <= 1.15
    if kind == "surgical":
        region = inside_face & (fy >= 0.12) & (fy <= 0.95) & (np.abs(fx) <= 0.98)
        base = np.array([0.55, 0.75, 0.92]) if color is None else np.asarray(color, float)
        shade = 1.0 - 0.12 * (np.sin(fy * 28.0) > 0.6)
    elif kind == "cloth":
        region = inside_face & (fy >= -0.05) & (fy <= 1.0)
        base = np.array([0.18, 0.2, 0.26]) if color is None else np.asarray(color, float)
        shade = 1.0 + 0.08 * np.sin(x * size * 1.3) * np.sin(y * size * 1.3)
    elif kind == "n95":
        cx, cy = 0.0, 0.52
        region = ((fx - cx) / 0.8) ** 2 + ((fy - cy) / 0.5) ** 2 <= 1.0
        base = np.array([0.93, 0.93, 0.9]) if color is None else np.asarray(color, float)
        shade = 1.0 - 0.15 * (((fx - cx) / 0.8) ** 2 + ((fy - cy) / 0.5) ** 2)
    else:
        raise InputError(f"unknown template kind {kind!r}; choose from {TEMPLATE_KINDS}")
    tex = np.clip(base[None, None, :] * shade[..., None], 0.0, 1.0) * region[..., None]
    return MaskTemplate(tex, region, kind)


def template_library(size: int = 48) -> list:
    return [procedural_template(k, size) for k in TEMPLATE_KINDS]


# ---------------------------------------------------------------- file IO

def write_uva(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3:
        raise InputError(f"UVA payload must be 2D or 3D, got shape {a.shape}")
    rows, cols, ch = a.shape
    with open(path, "wb") as fh:
        fh.write(_UVA_HEADER.pack(UVA_MAGIC, rows, cols, ch))
        fh.write(np.ascontiguousarray(a).tobytes())


def read_uva(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _UVA_HEADER.size:
        raise FormatError(f"{path}: truncated UVA header")
    magic, rows, cols, ch = _UVA_HEADER.unpack_from(raw)
    if magic != UVA_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = rows * cols * ch * 4
    payload = raw[_UVA_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols, ch).astype(np.float64)


def read_position_map(path):
    """Returns (position HxWx3, validity HxW); 3-channel files are all-valid."""
    a = read_uva(path)
    if a.shape[2] == 3:
        return a, np.ones(a.shape[:2], dtype=bool)
    if a.shape[2] == 4:
        return a[..., :3], a[..., 3] > 0.5
    raise FormatError(f"{path}: position map needs 3 or 4 channels, found {a.shape[2]}")


def write_position_map(path, position, validity=None) -> None:
    position = np.asarray(position, dtype=np.float64)
    if validity is None:
        write_uva(path, position)
    else:
        write_uva(path, np.concatenate([position, np.asarray(validity, float)[..., None]], axis=2))


def read_template(path) -> MaskTemplate:
    a = read_uva(path)
    if a.shape[2] != 4:
        raise FormatError(f"{path}: template needs 4 channels (RGB + region), found {a.shape[2]}")
    return MaskTemplate(a[..., :3], a[..., 3] > 0.5, Path(path).stem)


def write_template(path, template: MaskTemplate) -> None:
    write_uva(path, np.concatenate([template.texture, template.region[..., None].astype(float)], axis=2))


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
