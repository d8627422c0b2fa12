"""Synthetic word-image corpus: glyph rendering, augmentation, and the
tab-separated manifest format that indexes a corpus on disk."""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np

from bivex import pgm
from bivex.glyphs import GlyphSet, default_glyphs
from bivex.routing import Direction, decide_direction

MANIFEST_MAGIC = "#bivex-manifest v1"
LABEL_RE = re.compile(r"^[a-z0-9]{3,}$")

INK = 255


class ManifestError(ValueError):
    """Malformed or invariant-breaking manifest content."""


@dataclass(frozen=True)
class AugmentSpec:
    """Augmentation toggles and magnitude bounds (applied post-composition)."""

    affine: bool = True
    contrast: bool = True
    noise: bool = True
    max_rotation_deg: float = 5.0
    max_shear: float = 0.1
    scale_range: tuple[float, float] = (0.9, 1.1)
    contrast_range: tuple[float, float] = (0.7, 1.3)
    max_noise: float = 10.0

    @staticmethod
    def none() -> "AugmentSpec":
        return AugmentSpec(affine=False, contrast=False, noise=False)


@dataclass(frozen=True)
class GenSpec:
    """Corpus recipe: word lengths, size, direction mix, augmentation, seed."""

    count: int
    min_len: int = 3
    max_len: int = 8
    vertical_fraction: float = 0.5
    seed: int = 0
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    glyph_scale: int = 3

    def __post_init__(self):
        if self.min_len < 3:
            raise ValueError("word length must be at least 3 (evaluation protocol)")
        if self.max_len < self.min_len:
            raise ValueError("max_len < min_len")
        if not 0.0 <= self.vertical_fraction <= 1.0:
            raise ValueError("vertical_fraction must lie in [0,1]")
        if self.count < 0:
            raise ValueError("count must be nonnegative")


@dataclass(frozen=True)
class Sample:
    path: str  # relative to the manifest directory
    label: str
    direction: Direction
    width: int
    height: int


@dataclass
class Manifest:
    samples: list[Sample]
    seed: int
    root: str = "."  # directory the relative paths resolve against

    def resolve(self, sample: Sample) -> str:
        return os.path.join(self.root, sample.path)

    def __len__(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def _affine_warp(img: np.ndarray, rot_deg: float, shear: float, scl: float) -> np.ndarray:
    """Center-anchored inverse-mapped bilinear warp onto the same canvas."""
    h, w = img.shape
    th = np.deg2rad(rot_deg)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shr = np.array([[1.0, shear], [0.0, 1.0]])
    fwd = (rot @ shr) * scl
    inv = np.linalg.inv(fwd)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.mgrid[0:h, 0:w]
    rel = np.stack([ys - cy, xs - cx])
    src = np.tensordot(inv, rel, axes=1)
    sy = src[0] + cy
    sx = src[1] + cx
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    fy = sy - y0
    fx = sx - x0
    out = np.zeros((h, w))
    for dy in (0, 1):
        for dx in (0, 1):
            yy = y0 + dy
            xx = x0 + dx
            weight = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            inside = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            vals = np.where(inside, img[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)], 0.0)
            out += weight * vals
    return out


def render_word(
    label: str,
    direction: Direction,
    glyphs: GlyphSet | None = None,
    aug: AugmentSpec | None = None,
    rng: np.random.Generator | None = None,
    spacing: int | None = None,
    margin: int | None = None,
) -> np.ndarray:
    """Render a word as a uint8 grayscale image, ink 255 on black.

    Horizontal words composite upright glyphs left to right. Vertical words
    composite 90-degree counterclockwise-rotated glyphs top to bottom
    (spine-style), so the canvas extents are exactly the transpose of the
    horizontal ones and the routing rotation restores reading order.
    """
    if not label:
        raise ValueError("label must be nonempty")
    glyphs = glyphs if glyphs is not None else default_glyphs()
    spacing = 1 if spacing is None else spacing
    margin = 2 if margin is None else margin
    gh, gw = glyphs.height, glyphs.width
    n = len(label)
    bitmaps = [glyphs.glyph(ch) for ch in label]  # raises on unknown symbol

    w = n * gw + (n - 1) * spacing + 2 * margin
    h = gh + 2 * margin
    if direction is Direction.HORIZONTAL:
        canvas = np.zeros((h, w))
        for k, bm in enumerate(bitmaps):
            col = margin + k * (gw + spacing)
            canvas[margin : margin + gh, col : col + gw] = bm * float(INK)
    else:
        canvas = np.zeros((w, h))  # transposed extents
        for k, bm in enumerate(bitmaps):
            row = margin + k * (gw + spacing)
            canvas[row : row + gw, margin : margin + gh] = np.rot90(bm, 1) * float(INK)

    if aug is not None and (aug.affine or aug.contrast or aug.noise):
        if rng is None:
            raise ValueError("augmentation requires an rng")
        if aug.affine:
            rot = rng.uniform(-aug.max_rotation_deg, aug.max_rotation_deg)
            shear = rng.uniform(-aug.max_shear, aug.max_shear)
            scl = rng.uniform(*aug.scale_range)
            canvas = _affine_warp(canvas, rot, shear, scl)
        if aug.contrast:
            canvas = canvas * rng.uniform(*aug.contrast_range)
        if aug.noise:
            canvas = canvas + rng.uniform(-aug.max_noise, aug.max_noise, size=canvas.shape)
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    # each sample draws from its own (seed, index) stream, so parallel and
    # serial generation produce identical corpora
    return np.random.default_rng([seed, index])


def _random_label(rng: np.random.Generator, spec: GenSpec, alphabet: str) -> str:
    n = int(rng.integers(spec.min_len, spec.max_len + 1))
    return "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=n))


def generate_sample(spec: GenSpec, index: int, glyphs: GlyphSet, n_vertical: int) -> tuple[str, Direction, np.ndarray]:
    rng = _sample_rng(spec.seed, index)
    alphabet = "".join(sorted(glyphs.grids.keys()))
    label = _random_label(rng, spec, alphabet)
    direction = Direction.VERTICAL if index < n_vertical else Direction.HORIZONTAL
    aug = spec.augment if (spec.augment.affine or spec.augment.contrast or spec.augment.noise) else None
    img = render_word(
        label,
        direction,
        glyphs,
        aug=aug,
        rng=rng,
        spacing=spec.glyph_scale,
        margin=2 * spec.glyph_scale,
    )
    return label, direction, img


def generate_corpus(spec: GenSpec, out_dir: str, glyphs: GlyphSet | None = None) -> Manifest:
    """Write ``spec.count`` PGM images plus a manifest file into ``out_dir``.

    The vertical/horizontal mix matches the requested fraction to within one
    sample, and the whole corpus is a pure function of the seed.
    """
    if glyphs is None:
        glyphs = default_glyphs(scale=spec.glyph_scale)
    os.makedirs(out_dir, exist_ok=True)
    n_vertical = int(round(spec.count * spec.vertical_fraction))
    samples: list[Sample] = []
    for i in range(spec.count):
        label, direction, img = generate_sample(spec, i, glyphs, n_vertical)
        name = f"{i:06d}.pgm"
        pgm.write_pgm(os.path.join(out_dir, name), img)
        h, w = img.shape
        samples.append(Sample(path=name, label=label, direction=direction, width=w, height=h))
    manifest = Manifest(samples=samples, seed=spec.seed, root=out_dir)
    write_manifest(manifest, os.path.join(out_dir, "manifest.tsv"))
    return manifest


# ---------------------------------------------------------------------------
# manifest io
# ---------------------------------------------------------------------------


def write_manifest(manifest: Manifest, path: str) -> None:
    lines = [f"{MANIFEST_MAGIC} seed={manifest.seed}"]
    for s in manifest.samples:
        lines.append(f"{s.path}\t{s.label}\t{s.direction.value}\t{s.width}\t{s.height}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_manifest(path: str, validate: bool = True) -> Manifest:
    """Parse and validate a manifest.

    Validation enforces the label pattern, re-derives each direction from
    the stored width/height and cross-checks it against the stored flag, and
    confirms every image file exists with the stated dimensions.
    """
    root = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith(MANIFEST_MAGIC):
        raise ManifestError(f"{path}:1: missing manifest magic {MANIFEST_MAGIC!r}")
    m = re.search(r"seed=(\d+)", lines[0])
    if not m:
        raise ManifestError(f"{path}:1: missing seed field")
    seed = int(m.group(1))
    samples: list[Sample] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ManifestError(f"{path}:{ln}: expected 5 tab-separated fields, got {len(parts)}")
        rel, label, dir_str, w_str, h_str = parts
        try:
            w, h = int(w_str), int(h_str)
        except ValueError:
            raise ManifestError(f"{path}:{ln}: non-integer dimensions {w_str!r}x{h_str!r}") from None
        try:
            direction = Direction(dir_str)
        except ValueError:
            raise ManifestError(f"{path}:{ln}: unknown direction {dir_str!r}") from None
        if validate:
            if not LABEL_RE.match(label):
                raise ManifestError(
                    f"{path}:{ln}: label {label!r} violates ^[a-z0-9]{{3,}}$ (at least three alphanumerics)"
                )
            if decide_direction(w, h) is not direction:
                raise ManifestError(
                    f"{path}:{ln}: stored direction {dir_str} contradicts {w}x{h} aspect ratio"
                )
            full = os.path.join(root, rel)
            if not os.path.exists(full):
                raise ManifestError(f"{path}:{ln}: image file missing: {full}")
            iw, ih = pgm.read_pgm_size(full)
            if (iw, ih) != (w, h):
                raise ManifestError(f"{path}:{ln}: file is {iw}x{ih}, manifest claims {w}x{h}")
        samples.append(Sample(path=rel, label=label, direction=direction, width=w, height=h))
    return Manifest(samples=samples, seed=seed, root=root)
