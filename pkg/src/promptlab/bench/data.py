"""Procedural base-to-novel image benchmark with a controllable texture confound.

Each image shows one coarse shape (the class) on a noisy dark background, plus
a small high-contrast texture tile at a random grid-aligned position. In the
base training split the texture id matches the class with probability ``rho``
and is uniform otherwise; every evaluation split draws it uniformly, so the
texture only predicts the label where the prompts are tuned.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..errors import InvalidParameterError

SHAPES = ("disk", "square", "triangle", "plus", "ring", "diamond", "cross", "frame", "hbar", "vbar")
TEMPLATE_TOKEN = 0


@dataclass(frozen=True)
class DataConfig:
    n_classes: int = 8
    image_size: int = 32
    shots: int = 16
    n_test: int = 50
    pretrain_per_class: int = 96
    rho: float = 0.95
    noise: float = 0.1
    texture_size: int = 4
    n_textures: int = 0  # 0 -> one texture per base class
    rotation: float = 20.0  # max absolute shape rotation, degrees
    radius: tuple[float, float] = (0.3, 0.42)  # shape radius as a fraction of image size
    placement: str = "object"  # texture near the object centre, or "anywhere"
    copies: int = 1  # shape repeated on a sqrt(copies) x sqrt(copies) grid

    def __post_init__(self):
        if self.n_classes < 4 or self.n_classes % 2:
            raise InvalidParameterError("need an even number of at least 4 classes")
        if self.n_classes > len(SHAPES):
            raise InvalidParameterError(f"at most {len(SHAPES)} shape classes are available")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidParameterError(f"rho must be in [0, 1], got {self.rho}")
        if self.image_size % self.texture_size:
            raise InvalidParameterError("texture_size must tile the image")
        side = int(round(np.sqrt(self.copies)))
        if self.copies < 1 or side * side != self.copies or self.image_size % (side * self.texture_size):
            raise InvalidParameterError("copies must be a square number that tiles the image")
        if self.placement not in ("object", "anywhere"):
            raise InvalidParameterError(f"unknown texture placement {self.placement!r}")

    @property
    def textures(self) -> int:
        return self.n_textures or self.n_classes // 2


@dataclass
class LabeledImages:
    images: np.ndarray  # (N, 3, S, S)
    labels: np.ndarray  # global class ids
    confounds: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> LabeledImages:
        return LabeledImages(self.images[idx], self.labels[idx], self.confounds[idx])


@dataclass
class B2NDataset:
    train: LabeledImages
    test_base: LabeledImages
    test_novel: LabeledImages
    base_classes: np.ndarray
    novel_classes: np.ndarray
    class_names: tuple[str, ...]
    rho: float
    seed: int

    @property
    def class_tokens(self) -> np.ndarray:
        """Two-token text for every class: (template, class-token)."""
        return class_tokens(len(self.class_names))

    def tokens_for(self, classes) -> np.ndarray:
        return self.class_tokens[np.asarray(classes)]


def class_tokens(n_classes: int) -> np.ndarray:
    return np.stack([np.full(n_classes, TEMPLATE_TOKEN), np.arange(1, n_classes + 1)], axis=1)


# ------------------------------------------------------------------ drawing
def _shape_mask(kind: str, size: int, cy: float, cx: float, r: float, angle: float = 0.0) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    cos, sin = np.cos(angle), np.sin(angle)
    dy = cos * (yy - cy) - sin * (xx - cx)
    dx = sin * (yy - cy) + cos * (xx - cx)
    ady, adx = np.abs(dy), np.abs(dx)
    w = max(1.5, r * 0.28)
    if kind == "disk":
        return dy**2 + dx**2 <= r**2
    if kind == "square":
        return (ady <= r * 0.85) & (adx <= r * 0.85)
    if kind == "triangle":
        return (dy <= r * 0.8) & (dy >= -r) & (adx <= (dy + r) * 0.55)
    if kind == "plus":
        return ((ady <= w) & (adx <= r)) | ((adx <= w) & (ady <= r))
    if kind == "ring":
        d = np.sqrt(dy**2 + dx**2)
        return (d <= r) & (d >= r - 2 * w)
    if kind == "diamond":
        return ady + adx <= r
    if kind == "cross":
        return ((np.abs(dy - dx) <= w * 1.2) | (np.abs(dy + dx) <= w * 1.2)) & (ady <= r * 0.8) & (adx <= r * 0.8)
    if kind == "frame":
        outer = (ady <= r * 0.85) & (adx <= r * 0.85)
        inner = (ady <= r * 0.85 - 2 * w) & (adx <= r * 0.85 - 2 * w)
        return outer & ~inner
    if kind == "hbar":
        return (ady <= w * 1.2) & (adx <= r)
    if kind == "vbar":
        return (adx <= w * 1.2) & (ady <= r)
    raise InvalidParameterError(f"unknown shape {kind!r}")


def texture_tile(texture_id: int, size: int) -> np.ndarray:
    """Binary high-contrast pattern for one confound id, shape (size, size)."""
    yy, xx = np.mgrid[0:size, 0:size]
    patterns = (
        (yy + xx) % 2 == 0,  # checkerboard
        yy % 2 == 0,  # horizontal stripes
        xx % 2 == 0,  # vertical stripes
        (np.abs(yy - size / 2 + 0.5) + np.abs(xx - size / 2 + 0.5)) < size / 2,  # centred diamond
        (yy == 0) | (xx == 0) | (yy == size - 1) | (xx == size - 1),  # outline
        (yy + xx) % 3 == 0,  # diagonal stripes
        (yy // 2 + xx // 2) % 2 == 0,  # coarse checker
        yy < size // 2,  # half split
    )
    return patterns[texture_id % len(patterns)].astype(np.float64)


def render(kind: str, texture_id: int, rng: np.random.Generator, cfg: DataConfig | None = None) -> np.ndarray:
    """One image of shape ``kind`` with texture ``texture_id`` (-1 for none)."""
    cfg = cfg or DataConfig()
    size, noise, ts = cfg.image_size, cfg.noise, cfg.texture_size
    side = int(round(np.sqrt(cfg.copies)))
    cell = size / side
    img = 0.1 + noise * rng.standard_normal((3, size, size))
    colour = rng.uniform(0.45, 1.0, size=3)
    centres = []
    for gy in range(side):
        for gx in range(side):
            jitter = 2.0 / side
            cy = (gy + 0.5) * cell + rng.uniform(-jitter, jitter)
            cx = (gx + 0.5) * cell + rng.uniform(-jitter, jitter)
            r = rng.uniform(*cfg.radius) * cell
            angle = np.deg2rad(rng.uniform(-cfg.rotation, cfg.rotation))
            mask = _shape_mask(kind, size, cy, cx, r, angle)
            img[:, mask] = colour[:, None] + noise * rng.standard_normal((3, int(mask.sum())))
            centres.append((cy, cx, r))
    if texture_id >= 0:
        cy, cx, r = centres[rng.integers(len(centres))]
        cells = size // ts
        if cfg.placement == "object":
            spread = r / 3
            cell = np.floor((np.array([cy, cx]) + rng.uniform(-spread, spread, size=2)) / ts)
            ty, tx = (np.clip(cell, 0, cells - 1) * ts).astype(int)
        else:
            ty, tx = rng.integers(0, cells, size=2) * ts
        tile = texture_tile(texture_id, ts)
        img[:, ty:ty + ts, tx:tx + ts] = tile[None]
    return np.clip(img, 0.0, 1.0)


def draw_split(classes, per_class: int, rho: float, cfg: DataConfig, rng: np.random.Generator,
               texture_of: dict[int, int] | None = None) -> LabeledImages:
    """Render ``per_class`` images of each class; texture follows ``texture_of`` with prob. rho."""
    labels = np.repeat(np.asarray(classes), per_class)
    rng.shuffle(labels)
    confounds = rng.integers(0, cfg.textures, size=len(labels))
    if texture_of is not None and rho > 0:
        tied = rng.random(len(labels)) < rho
        confounds = np.where(tied, [texture_of[int(c)] for c in labels], confounds)
    images = np.stack([
        render(SHAPES[c], t, rng, cfg) for c, t in zip(labels, confounds)
    ]) if len(labels) else np.zeros((0, 3, cfg.image_size, cfg.image_size))
    return LabeledImages(images, labels.astype(np.int64), confounds.astype(np.int64))


def generate_b2n(config: DataConfig, seed: int) -> B2NDataset:
    """Base/novel benchmark: first half of the classes is base, second half novel."""
    rng = np.random.default_rng([seed, 1])
    n = config.n_classes
    base = np.arange(n // 2)
    novel = np.arange(n // 2, n)
    texture_of = {int(c): i % config.textures for i, c in enumerate(base)}
    train = draw_split(base, config.shots, config.rho, config, rng, texture_of)
    test_base = draw_split(base, config.n_test, 0.0, config, rng)
    test_novel = draw_split(novel, config.n_test, 0.0, config, rng)
    return B2NDataset(train, test_base, test_novel, base, novel, SHAPES[:n], config.rho, seed)


def generate_pretraining_set(config: DataConfig, seed: int, per_class: int | None = None) -> LabeledImages:
    """Confound-free images of every class, used to manufacture the frozen teacher."""
    rng = np.random.default_rng([seed, 2])
    return draw_split(np.arange(config.n_classes), per_class or config.pretrain_per_class, 0.0, config, rng)


def dump_dataset(dataset: B2NDataset, directory) -> Path:
    """Write raw ``.npy`` arrays per split plus a JSON manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "seed": dataset.seed,
        "rho": dataset.rho,
        "class_names": list(dataset.class_names),
        "base_classes": dataset.base_classes.tolist(),
        "novel_classes": dataset.novel_classes.tolist(),
        "class_tokens": dataset.class_tokens.tolist(),
        "splits": {},
    }
    for name in ("train", "test_base", "test_novel"):
        split: LabeledImages = getattr(dataset, name)
        for field_name in ("images", "labels", "confounds"):
            np.save(out / f"{name}_{field_name}.npy", getattr(split, field_name))
        manifest["splits"][name] = {"count": len(split), "image_shape": list(split.images.shape[1:])}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


def load_dataset(directory) -> B2NDataset:
    src = Path(directory)
    manifest = json.loads((src / "manifest.json").read_text())
    splits = {
        name: LabeledImages(*(np.load(src / f"{name}_{f}.npy") for f in ("images", "labels", "confounds")))
        for name in ("train", "test_base", "test_novel")
    }
    return B2NDataset(
        splits["train"], splits["test_base"], splits["test_novel"],
        np.array(manifest["base_classes"]), np.array(manifest["novel_classes"]),
        tuple(manifest["class_names"]), manifest["rho"], manifest["seed"],
    )


def config_dict(config: DataConfig) -> dict:
    return asdict(config)
