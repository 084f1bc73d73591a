"""Synthetic two-domain face corpus shaped like CASIA NIR-VIS 2.0.

Each identity is a smooth random colour field inside a face ellipse (plus a
pair of eye blobs); each sample of that identity re-renders it with a small
shift, contrast/brightness jitter, expression-like amplitude wobble and
pixel noise.  The NIR domain collapses colour to a gamma-shifted luminance
with extra noise, so hue cues present in VIS are gone in NIR.  Masked NIR
samples are produced from their non-masked NIR source through the UV mask
pipeline in :mod:`hsstlab.masksynth`.

On-disk layout::

    <root>/manifest.json
    <root>/<id>/<domain>_<masked|full>_<k>.png     e.g. 17/NIR_masked_2.png
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import masksynth
from .errors import ConfigError, InputError

NIR = "NIR"
VIS = "VIS"
DOMAINS = (NIR, VIS)

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1

# Canvas parameters.  Variation offsets keep NIR and VIS captures of an
# identity distinct draws rather than the same shot in two spectra.
N_BLOBS = 10
NIR_VARIATION_OFFSET = 1000
BACKGROUND = 0.22
NIR_GAMMA = 0.7
NIR_NOISE = 0.03
PIXEL_NOISE = 0.015
MAX_SHIFT = 2


@dataclass
class DataConfig:
    root: str = ""
    identities: int = 200
    vis_per_identity: int = 4
    nir_per_identity: int = 4
    folds: int = 5
    seed: int = 7
    image_size: int = 48
    min_train_identities: int = 0

    def validate(self):
        for name in ("identities", "vis_per_identity", "nir_per_identity", "folds", "image_size"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"data.{name} must be positive")
        if self.folds > self.identities:
            raise ConfigError("data.folds cannot exceed data.identities")
        train_ids = self.identities - -(-self.identities // self.folds)
        if self.folds > 1 and train_ids < self.min_train_identities:
            raise ConfigError(
                f"data.identities={self.identities} with {self.folds} folds leaves {train_ids} "
                f"training identities; at least {self.min_train_identities} are needed "
                "(batch size + prototype-queue arithmetic)"
            )


@dataclass
class IdentityTraits:
    skin: np.ndarray
    centers: np.ndarray
    sigmas: np.ndarray
    amplitudes: np.ndarray
    eye_spacing: float
    eye_height: float
    eye_size: float


def identity_traits(seed: int, identity: int) -> IdentityTraits:
    rng = np.random.default_rng([int(seed), int(identity), 0x1D])
    radius = np.sqrt(rng.uniform(0.0, 1.0, N_BLOBS)) * 0.95
    angle = rng.uniform(0.0, 2 * np.pi, N_BLOBS)
    return IdentityTraits(
        skin=rng.uniform(0.35, 0.8, 3),
        centers=np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1),
        sigmas=rng.uniform(0.18, 0.4, N_BLOBS),
        amplitudes=rng.uniform(-0.35, 0.35, (N_BLOBS, 3)),
        eye_spacing=rng.uniform(0.32, 0.5),
        eye_height=rng.uniform(-0.38, -0.22),
        eye_size=rng.uniform(0.08, 0.14),
    )


def gen_identity_canvas(seed: int, identity: int, variation: int = 0, size: int = 48) -> np.ndarray:
    """Deterministic size x size x 3 image of ``identity`` under ``variation``."""
    traits = identity_traits(seed, identity)
    rng = np.random.default_rng([int(seed), int(identity), int(variation), 0x5A])
    dx, dy = rng.integers(-MAX_SHIFT, MAX_SHIFT + 1, 2)
    contrast = rng.uniform(0.85, 1.15)
    brightness = rng.uniform(-0.06, 0.06)
    wobble = 1.0 + rng.normal(0.0, 0.15, (N_BLOBS, 1))

    coords = np.arange(size) + 0.5
    y, x = np.meshgrid(coords - dy, coords - dx, indexing="ij")
    fx = (x / size - masksynth.FACE_CENTER[0]) / masksynth.FACE_RADII[0]
    fy = (y / size - masksynth.FACE_CENTER[1]) / masksynth.FACE_RADII[1]

    face = np.broadcast_to(traits.skin, (size, size, 3)).copy()
    for c, sig, amp in zip(traits.centers, traits.sigmas, traits.amplitudes * wobble):
        g = np.exp(-((fx - c[0]) ** 2 + (fy - c[1]) ** 2) / (2 * sig**2))
        face += g[..., None] * amp
    for side in (-1.0, 1.0):
        g = np.exp(-((fx - side * traits.eye_spacing) ** 2 + (fy - traits.eye_height) ** 2)
                   / (2 * traits.eye_size**2))
        face *= 1.0 - 0.6 * g[..., None]

    r2 = fx**2 + fy**2
    alpha = np.clip((1.08 - r2) / 0.16, 0.0, 1.0)[..., None]
    img = alpha * face + (1.0 - alpha) * BACKGROUND
    img = (img - 0.5) * contrast + 0.5 + brightness
    img = img + rng.normal(0.0, PIXEL_NOISE, img.shape)
    return np.clip(img, 0.0, 1.0)


def domain_transform(image, domain: str, noise_seed=0) -> np.ndarray:
    """VIS: identity.  NIR: gamma-shifted luminance on all three channels plus noise."""
    img = np.asarray(image, dtype=np.float64)
    if domain == VIS:
        return img.copy()
    if domain != NIR:
        raise InputError(f"domain must be {NIR!r} or {VIS!r}, got {domain!r}")
    rng = np.random.default_rng(noise_seed)
    lum = masksynth.luminance(img) ** NIR_GAMMA
    lum = np.clip(lum + rng.normal(0.0, NIR_NOISE, lum.shape), 0.0, 1.0)
    return np.repeat(lum[..., None], 3, axis=2)


def nir_template(seed: int, identity: int, k: int, size: int = 48) -> masksynth.MaskTemplate:
    """Template used for NIR sample k of ``identity`` (luminance version)."""
    kinds = masksynth.TEMPLATE_KINDS
    rng = np.random.default_rng([int(seed), int(identity), int(k), 0x3A])
    kind = kinds[int(rng.integers(len(kinds)))]
    return masksynth.procedural_template(kind, size).to_luminance()


def mask_nir_image(image: np.ndarray, template: masksynth.MaskTemplate) -> np.ndarray:
    """Composite ``template`` onto an image through an identity position map."""
    h, w = image.shape[:2]
    assets = masksynth.UVAssets(
        texture=image,
        position=masksynth.identity_position_map(h, w),
        validity=np.ones((h, w), dtype=bool),
    )
    return masksynth.synthesize_masked(assets, template, (h, w))


def make_identity_samples(seed: int, identity: int, vis: int, nir: int, size: int = 48):
    """All samples of one identity as (domain, masked, k, image) tuples (unquantized)."""
    out = []
    for k in range(vis):
        out.append((VIS, False, k, gen_identity_canvas(seed, identity, k, size)))
    for k in range(nir):
        canvas = gen_identity_canvas(seed, identity, NIR_VARIATION_OFFSET + k, size)
        full = domain_transform(canvas, NIR, noise_seed=[int(seed), int(identity), int(k), 0x4E])
        # quantize first so the masked file differs from the full one only inside the mask
        full = masksynth.to_uint8(full) / 255.0
        out.append((NIR, False, k, full))
        out.append((NIR, True, k, mask_nir_image(full, nir_template(seed, identity, k, size))))
    return out


def sample_filename(domain: str, masked: bool, k: int) -> str:
    return f"{domain}_{'masked' if masked else 'full'}_{k}.png"


def make_folds(identities: int, folds: int, seed: int) -> list:
    rng = np.random.default_rng([int(seed), 0xF01D])
    order = rng.permutation(identities)
    return [sorted(int(i) for i in part) for part in np.array_split(order, folds)]


@dataclass
class DatasetManifest:
    identity_count: int
    samples_per_identity: dict
    folds: list
    seed: int
    image_size: int
    root: str = ""
    samples: list = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def test_identities(self, fold: int) -> list:
        if not 0 <= fold < len(self.folds):
            raise InputError(f"fold {fold} out of range (0..{len(self.folds) - 1})")
        return list(self.folds[fold])

    def train_identities(self, fold: int) -> list:
        test = set(self.test_identities(fold))
        return [i for i in range(self.identity_count) if i not in test]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(**d)


def build_dataset(cfg: DataConfig) -> DatasetManifest:
    """Generate every sample as PNG under ``cfg.root`` and write the manifest."""
    cfg.validate()
    if not cfg.root:
        raise ConfigError("data.root is required")
    root = Path(cfg.root)
    root.mkdir(parents=True, exist_ok=True)
    samples = []
    for identity in range(cfg.identities):
        id_dir = root / str(identity)
        id_dir.mkdir(exist_ok=True)
        for domain, masked, k, image in make_identity_samples(
            cfg.seed, identity, cfg.vis_per_identity, cfg.nir_per_identity, cfg.image_size
        ):
            rel = f"{identity}/{sample_filename(domain, masked, k)}"
            masksynth.write_png(root / rel, image)
            samples.append({"path": rel, "identity": identity, "domain": domain,
                            "masked": masked, "index": k})
    manifest = DatasetManifest(
        identity_count=cfg.identities,
        samples_per_identity={
            VIS: {"full": cfg.vis_per_identity},
            NIR: {"full": cfg.nir_per_identity, "masked": cfg.nir_per_identity},
        },
        folds=make_folds(cfg.identities, cfg.folds, cfg.seed),
        seed=cfg.seed,
        image_size=cfg.image_size,
        root=str(root),
        samples=samples,
    )
    (root / MANIFEST_NAME).write_text(json.dumps(manifest.to_dict(), indent=1))
    return manifest


def load_manifest(root) -> DatasetManifest:
    path = Path(root) / MANIFEST_NAME
    if not path.exists():
        raise ConfigError(f"no dataset manifest at {path}")
    manifest = DatasetManifest.from_dict(json.loads(path.read_text()))
    manifest.root = str(Path(root))
    return manifest


class Dataset:
    """In-memory view of a generated (or adapted) corpus.

    Parallel arrays: ``images`` (N, H, W, 3) float32, ``identity``,
    ``domain`` (strings), ``masked`` and ``index``.
    """

    def __init__(self, images, identity, domain, masked, index, manifest=None):
        self.images = np.asarray(images, dtype=np.float32)
        self.identity = np.asarray(identity, dtype=np.int64)
        self.domain = np.asarray(domain)
        self.masked = np.asarray(masked, dtype=bool)
        self.index = np.asarray(index, dtype=np.int64)
        self.manifest = manifest

    def __len__(self):
        return len(self.identity)

    @classmethod
    def load(cls, root) -> "Dataset":
        manifest = load_manifest(root)
        base = Path(manifest.root)
        recs = manifest.samples
        images = np.stack([masksynth.read_png(base / r["path"]) for r in recs]) if recs else \
            np.zeros((0, manifest.image_size, manifest.image_size, 3))
        return cls(images, [r["identity"] for r in recs], [r["domain"] for r in recs],
                   [r["masked"] for r in recs], [r["index"] for r in recs], manifest)

    @classmethod
    def generate(cls, cfg: DataConfig) -> "Dataset":
        """Same samples as :func:`build_dataset` (PNG-quantized) without touching disk."""
        cfg.validate()
        images, ids, doms, masks, idx = [], [], [], [], []
        for identity in range(cfg.identities):
            for domain, masked, k, image in make_identity_samples(
                cfg.seed, identity, cfg.vis_per_identity, cfg.nir_per_identity, cfg.image_size
            ):
                images.append(masksynth.to_uint8(image) / 255.0)
                ids.append(identity)
                doms.append(domain)
                masks.append(masked)
                idx.append(k)
        manifest = DatasetManifest(
            identity_count=cfg.identities,
            samples_per_identity={},
            folds=make_folds(cfg.identities, cfg.folds, cfg.seed),
            seed=cfg.seed,
            image_size=cfg.image_size,
        )
        return cls(np.stack(images), ids, doms, masks, idx, manifest)

    def select(self, identities=None, domain=None, masked=None) -> np.ndarray:
        """Indices of samples matching every given filter, in storage order."""
        keep = np.ones(len(self), dtype=bool)
        if identities is not None:
            keep &= np.isin(self.identity, np.asarray(list(identities)))
        if domain is not None:
            keep &= self.domain == domain
        if masked is not None:
            keep &= self.masked == bool(masked)
        return np.flatnonzero(keep)


def pretraining_pool(seed: int, identities: int, per_identity: int, size: int = 48,
                     id_offset: int = 1_000_000) -> Dataset:
    """VIS-only identities disjoint from the benchmark ids, used for pretraining."""
    images, ids, idx = [], [], []
    for i in range(identities):
        for k in range(per_identity):
            img = gen_identity_canvas(seed, id_offset + i, k, size)
            images.append(masksynth.to_uint8(img) / 255.0)
            ids.append(i)
            idx.append(k)
    n = len(ids)
    return Dataset(np.stack(images), ids, [VIS] * n, [False] * n, idx)
