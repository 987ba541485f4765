"""Supervised pair synthesis: rigid + elastic ground truth from a single source.

A pair is built by (1) sampling a similarity transform and a smoothed elastic
field, (2) rendering the moving image so that warping it by the ground-truth
field re-aligns it with the source geometry, and (3) giving the fixed image a
different appearance through a geometry-preserving pseudo-modality transform.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from . import flowio
from .errors import ConfigError, InvalidParameterError
from .geometry import RigidParams, accumulate, rigid_to_flow, warp

__all__ = [
    "RigidRanges",
    "TransformSpec",
    "TrainingPair",
    "sample_rigid",
    "sample_elastic",
    "pseudo_modality",
    "make_pair",
    "invert_field",
    "random_source_image",
    "load_sources",
    "save_pair",
    "load_pair",
    "PSEUDO_MODALITY_KINDS",
]

PSEUDO_MODALITY_KINDS = ("invert", "gamma_blur", "gradient_magnitude", "speckle")


@dataclass(frozen=True)
class RigidRanges:
    """Uniform sampling ranges for the global transform (defaults: published recipe)."""

    rot_max: float = np.deg2rad(20.0)
    trans_max: float = 0.15
    scale_max: float = 0.13

    def scaled(self, factor: float) -> "RigidRanges":
        return RigidRanges(self.rot_max * factor, self.trans_max * factor, self.scale_max * factor)


@dataclass
class TransformSpec:
    rigid: RigidParams
    elastic_alpha: float = 140.0
    elastic_sigma: float = 35.0
    seed: int = 0

    def __post_init__(self):
        if self.elastic_alpha < 0:
            raise InvalidParameterError("elastic_alpha must be >= 0")
        if self.elastic_sigma <= 0:
            raise InvalidParameterError("elastic_sigma must be > 0")


@dataclass
class TrainingPair:
    fixed: torch.Tensor
    moving: torch.Tensor
    gt_rigid: RigidParams
    gt_field: torch.Tensor
    gt_rigid_image: torch.Tensor
    gt_registered_image: torch.Tensor
    modality_tags: tuple[str, str] = ("b", "a")  # (fixed, moving)
    meta: dict = dc_field(default_factory=dict)


def sample_rigid(rng: np.random.Generator, ranges: RigidRanges = RigidRanges()) -> RigidParams:
    """Uniform similarity-transform sample within the configured ranges."""
    rot = rng.uniform(-ranges.rot_max, ranges.rot_max)
    scale = 1.0 + rng.uniform(-ranges.scale_max, ranges.scale_max)
    ty = rng.uniform(-ranges.trans_max, ranges.trans_max)
    tx = rng.uniform(-ranges.trans_max, ranges.trans_max)
    return RigidParams(rotation=rot, scale=scale, ty=ty, tx=tx)


def sample_elastic(
    alpha: float, sigma: float, H: int, W: int, rng: np.random.Generator
) -> torch.Tensor:
    """Smoothed random displacement field, |values| <= alpha.

    Per-pixel uniform noise in [-1, 1] per channel, Gaussian-smoothed with
    standard deviation ``sigma``, scaled by ``alpha``.
    """
    if alpha < 0:
        raise InvalidParameterError("alpha must be >= 0")
    if sigma <= 0:
        raise InvalidParameterError("sigma must be > 0")
    noise = rng.uniform(-1.0, 1.0, size=(2, H, W))
    smooth = np.stack([gaussian_filter(c, sigma=sigma, mode="reflect") for c in noise])
    return torch.from_numpy((alpha * smooth).astype(np.float32))


def pseudo_modality(image: torch.Tensor, kind: str, seed: int = 0) -> torch.Tensor:
    """Deterministic appearance transform that never moves pixel content.

    Stands in for a second sensor at desk scale.
    """
    img = image.detach().cpu().numpy().astype(np.float64)
    if kind == "invert":
        out = 1.0 - img
    elif kind == "gamma_blur":
        out = np.power(np.clip(img, 0.0, 1.0), 2.2)
        out = np.stack([gaussian_filter(c, sigma=1.0, mode="nearest") for c in out])
    elif kind == "gradient_magnitude":
        chans = []
        for c in img:
            gy, gx = np.gradient(c)
            chans.append(np.sqrt(gy**2 + gx**2))
        out = np.clip(np.stack(chans), 0.0, 1.0)
    elif kind == "speckle":
        rng = np.random.default_rng(seed)
        noise = rng.gamma(shape=4.0, scale=0.25, size=img.shape)
        out = np.clip(img * noise, 0.0, 1.0)
    else:
        raise ConfigError(f"unknown pseudo-modality kind {kind!r}; choose from {PSEUDO_MODALITY_KINDS}")
    return torch.from_numpy(out.astype(np.float32)).clamp(0.0, 1.0)


def invert_field(field: torch.Tensor, iterations: int = 10) -> torch.Tensor:
    """Approximate inverse displacement by fixed-point iteration.

    Starts from the negated field and repeatedly resamples: inv <- -field(p + inv(p)).
    Accurate for the moderate transforms produced by the generator.
    """
    inv = -field
    for _ in range(iterations):
        inv = -warp(field, inv)
    return inv


def make_pair(
    source: torch.Tensor,
    spec: TransformSpec,
    kind: str = "invert",
    max_residual: float = 2e-2,
    max_attempts: int = 5,
) -> TrainingPair:
    """Build a supervised pair from one source image.

    The ground-truth field is the rigid flow plus the elastic field at full
    resolution.  The moving image is rendered through the approximate inverse
    so that ``warp(moving, gt_field)`` recovers the source geometry; pairs
    whose inversion residual exceeds ``max_residual`` (mean abs intensity)
    are rejected and resampled with a derived seed.
    """
    C, H, W = source.shape
    seed = spec.seed
    for attempt in range(max_attempts):
        rng = np.random.default_rng(seed)
        rigid = spec.rigid if attempt == 0 else sample_rigid(rng)
        rigid_flow = rigid_to_flow(rigid, H, W)
        elastic = sample_elastic(spec.elastic_alpha, spec.elastic_sigma, H, W, rng)
        gt_field = accumulate(rigid_flow, elastic)

        moving = warp(source, invert_field(gt_field))
        gt_registered = warp(moving, gt_field)
        residual = (gt_registered - source).abs().mean().item()
        if residual <= max_residual:
            fixed = pseudo_modality(source, kind, seed=seed)
            gt_rigid_image = warp(moving, rigid_flow)
            return TrainingPair(
                fixed=fixed,
                moving=moving,
                gt_rigid=rigid,
                gt_field=gt_field,
                gt_rigid_image=gt_rigid_image,
                gt_registered_image=gt_registered,
                meta={"seed": seed, "residual": residual, "kind": kind},
            )
        seed = int(np.random.default_rng(seed + 1).integers(2**62))
    raise InvalidParameterError(
        f"could not generate a pair with inversion residual <= {max_residual} "
        f"after {max_attempts} attempts (last residual {residual:.4f})"
    )


def random_source_image(H: int, W: int, rng: np.random.Generator, channels: int = 1) -> torch.Tensor:
    """Procedural smooth source image: random blobs over low-frequency texture."""
    ys, xs = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    img = np.zeros((H, W))
    for _ in range(6):
        cy, cx = rng.uniform(0, H), rng.uniform(0, W)
        s = rng.uniform(0.08, 0.25) * min(H, W)
        a = rng.uniform(0.3, 1.0) * rng.choice([-1.0, 1.0])
        img += a * np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * s * s))
    fy, fx = rng.uniform(1.0, 3.0, size=2)
    ph_y, ph_x = rng.uniform(0, 2 * np.pi, size=2)
    img += 0.4 * np.sin(2 * np.pi * fy * ys / H + ph_y) * np.sin(2 * np.pi * fx * xs / W + ph_x)
    img = (img - img.min()) / (img.max() - img.min() + 1e-12)
    out = np.repeat(img[None], channels, axis=0)
    return torch.from_numpy(out.astype(np.float32))


def _load_image(path: Path, size: int | None, channels: int) -> torch.Tensor:
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        if size is not None:
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return torch.from_numpy(arr)


def load_sources(
    source_dir: str | Path,
    manifest: str | Path | None = None,
    size: int | None = None,
    channels: int = 1,
) -> list[torch.Tensor]:
    """Load source images from a directory, optionally restricted by a manifest.

    The manifest lists one relative path per line; without one, every PNG/JPEG
    in the directory is used (sorted).
    """
    source_dir = Path(source_dir)
    if manifest is not None:
        rels = [ln.strip() for ln in Path(manifest).read_text().splitlines() if ln.strip()]
        paths = [source_dir / r for r in rels]
    else:
        paths = sorted(
            p for p in source_dir.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
    if not paths:
        raise ConfigError(f"no images found under {source_dir}")
    return [_load_image(p, size, channels) for p in paths]


def _save_image(path: Path, img: torch.Tensor) -> None:
    arr = (img.clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    arr = arr[0] if arr.shape[0] == 1 else np.moveaxis(arr, 0, -1)
    Image.fromarray(arr).save(path)


def save_pair(directory: str | Path, pair: TrainingPair) -> None:
    """Cache a pair: PNG images, the HRFLOW1 field, and a JSON sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _save_image(d / "fixed.png", pair.fixed)
    _save_image(d / "moving.png", pair.moving)
    _save_image(d / "gt_rigid_image.png", pair.gt_rigid_image)
    _save_image(d / "gt_registered_image.png", pair.gt_registered_image)
    flowio.write_flow(d / "gt_field.flow", pair.gt_field)
    meta = {
        "rigid": [float(v) for v in pair.gt_rigid.as_vector()],
        "modality_tags": list(pair.modality_tags),
        **pair.meta,
    }
    (d / "pair.json").write_text(json.dumps(meta, indent=2))


def load_pair(directory: str | Path) -> TrainingPair:
    d = Path(directory)
    meta = json.loads((d / "pair.json").read_text())
    vec = torch.tensor(meta["rigid"], dtype=torch.float32)
    gt_field = flowio.read_flow(d / "gt_field.flow")
    fixed = _load_image(d / "fixed.png", None, 1)
    moving = _load_image(d / "moving.png", None, 1)
    rigid = RigidParams.from_vector(vec)
    return TrainingPair(
        fixed=fixed,
        moving=moving,
        gt_rigid=rigid,
        gt_field=gt_field,
        gt_rigid_image=_load_image(d / "gt_rigid_image.png", None, 1),
        gt_registered_image=_load_image(d / "gt_registered_image.png", None, 1),
        modality_tags=tuple(meta["modality_tags"]),
        meta={k: v for k, v in meta.items() if k not in ("rigid", "modality_tags")},
    )
