"""Displacement fields, rigid transforms, warping and the smoothness energy.

Conventions used everywhere in this package:

* A displacement field is a tensor of shape ``(2, H, W)`` or ``(B, 2, H, W)``
  with channel 0 = dy and channel 1 = dx, in **pixels at the field's own
  resolution**.
* Warping is *backward*: ``warp(img, field)[p] = img[p + field(p)]`` with
  bilinear interpolation and border clamping for out-of-bounds samples.
* The all-zeros field is the identity transform.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DimensionError, InvalidParameterError

__all__ = [
    "RigidParams",
    "warp",
    "rigid_to_flow",
    "upsample_flow",
    "accumulate",
    "smoothness_energy",
    "zero_field",
]


@dataclass
class RigidParams:
    """Global 4-DOF similarity transform.

    rotation: radians; scale: unitless multiplier (> 0); translation
    (ty, tx) as a fraction of image height / width.  Fields are tensors so
    the transform can be batched and differentiated; scalars are accepted
    and converted.
    """

    rotation: torch.Tensor
    scale: torch.Tensor
    ty: torch.Tensor
    tx: torch.Tensor

    def __post_init__(self):
        vals = [self.rotation, self.scale, self.ty, self.tx]
        dtype = next((v.dtype for v in vals if torch.is_tensor(v)), torch.get_default_dtype())
        self.rotation, self.scale, self.ty, self.tx = (
            v if torch.is_tensor(v) else torch.as_tensor(v, dtype=dtype) for v in vals
        )

    @classmethod
    def identity(cls, dtype=torch.float32) -> "RigidParams":
        return cls(
            rotation=torch.zeros((), dtype=dtype),
            scale=torch.ones((), dtype=dtype),
            ty=torch.zeros((), dtype=dtype),
            tx=torch.zeros((), dtype=dtype),
        )

    @classmethod
    def from_vector(cls, vec: torch.Tensor) -> "RigidParams":
        """Build from a raw ``(..., 4)`` tensor (rotation, scale, ty, tx)."""
        return cls(rotation=vec[..., 0], scale=vec[..., 1], ty=vec[..., 2], tx=vec[..., 3])

    def as_vector(self) -> torch.Tensor:
        """Raw ``(..., 4)`` tensor (rotation, scale, ty, tx)."""
        return torch.stack([self.rotation, self.scale, self.ty, self.tx], dim=-1)

    def normalized(self) -> torch.Tensor:
        """Commensurate ``(..., 4)`` vector used by the rigid parameter loss.

        rotation / pi, log(scale), and the translations, which are already
        fractions of the image size.
        """
        return torch.stack(
            [self.rotation / torch.pi, torch.log(self.scale), self.ty, self.tx], dim=-1
        )

    def validate(self) -> None:
        if not bool((self.scale > 0).all()):
            raise InvalidParameterError("rigid scale must be > 0")

    @property
    def batched(self) -> bool:
        return self.rotation.dim() > 0


def zero_field(H: int, W: int, batch: int | None = None, dtype=torch.float32, device=None) -> torch.Tensor:
    shape = (2, H, W) if batch is None else (batch, 2, H, W)
    return torch.zeros(shape, dtype=dtype, device=device)


def _batched(x: torch.Tensor, ndim: int) -> tuple[torch.Tensor, bool]:
    if x.dim() == ndim - 1:
        return x.unsqueeze(0), True
    if x.dim() == ndim:
        return x, False
    raise DimensionError(f"expected a {ndim - 1}D or {ndim}D tensor, got shape {tuple(x.shape)}")


def warp(image: torch.Tensor, field: torch.Tensor) -> torch.Tensor:
    """Backward-warp ``image`` by ``field``: output(p) = image(p + field(p)).

    ``image``: (C, H, W) or (B, C, H, W); ``field``: matching (2, H, W) or
    (B, 2, H, W).  Out-of-bounds samples clamp to the border.
    """
    img, img_sq = _batched(image, 4)
    fld, _ = _batched(field, 4)
    if fld.shape[1] != 2:
        raise DimensionError(f"field must have 2 channels, got {fld.shape[1]}")
    if img.shape[-2:] != fld.shape[-2:]:
        raise DimensionError(
            f"image resolution {tuple(img.shape[-2:])} != field resolution {tuple(fld.shape[-2:])}"
        )
    if fld.shape[0] != img.shape[0]:
        if fld.shape[0] == 1:
            fld = fld.expand(img.shape[0], -1, -1, -1)
        elif img.shape[0] == 1:
            img = img.expand(fld.shape[0], -1, -1, -1)
            img_sq = False
        else:
            raise DimensionError("batch sizes of image and field differ")

    B, _, H, W = fld.shape
    dtype, device = img.dtype, img.device
    ys = torch.arange(H, dtype=dtype, device=device)
    xs = torch.arange(W, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    sy = gy + fld[:, 0].to(dtype)
    sx = gx + fld[:, 1].to(dtype)
    # normalized coordinates with pixel centers at integers (align_corners)
    nx = 2.0 * sx / max(W - 1, 1) - 1.0
    ny = 2.0 * sy / max(H - 1, 1) - 1.0
    grid = torch.stack([nx, ny], dim=-1)
    out = F.grid_sample(img, grid, mode="bilinear", padding_mode="border", align_corners=True)
    return out.squeeze(0) if img_sq else out


def rigid_to_flow(params: RigidParams, H: int, W: int) -> torch.Tensor:
    """Encode a similarity transform as a displacement field of shape (H, W).

    For each pixel p, the field is A(p_c) - p_c where p_c is the coordinate
    centered on the image midpoint and A applies scale * rotation followed
    by the translation (in pixels: ty * H, tx * W).  Returns (2, H, W), or
    (B, 2, H, W) when the params are batched.
    """
    if H < 2 or W < 2:
        raise InvalidParameterError(f"H, W must be >= 2, got {H}x{W}")
    params.validate()
    rot = params.rotation.reshape(-1)
    scale = params.scale.reshape(-1)
    ty = params.ty.reshape(-1)
    tx = params.tx.reshape(-1)
    dtype = rot.dtype if rot.is_floating_point() else torch.get_default_dtype()
    device = rot.device

    ys = torch.arange(H, dtype=dtype, device=device) - (H - 1) / 2.0
    xs = torch.arange(W, dtype=dtype, device=device) - (W - 1) / 2.0
    yc, xc = torch.meshgrid(ys, xs, indexing="ij")

    cos = torch.cos(rot).view(-1, 1, 1)
    sin = torch.sin(rot).view(-1, 1, 1)
    s = scale.view(-1, 1, 1)
    src_x = s * (cos * xc - sin * yc) + tx.view(-1, 1, 1) * W
    src_y = s * (sin * xc + cos * yc) + ty.view(-1, 1, 1) * H
    field = torch.stack([src_y - yc, src_x - xc], dim=1)
    return field if params.batched else field[0]


def upsample_flow(field: torch.Tensor, factor: int = 2) -> torch.Tensor:
    """Double a field's resolution bilinearly and scale displacements by 2.

    Displacements are stored in pixels at the field's own resolution, so the
    values must grow with the grid.
    """
    if factor != 2:
        raise InvalidParameterError(f"only factor 2 is supported, got {factor}")
    fld, squeeze = _batched(field, 4)
    if fld.shape[1] != 2:
        raise DimensionError(f"field must have 2 channels, got {fld.shape[1]}")
    out = F.interpolate(fld, scale_factor=2, mode="bilinear", align_corners=False) * 2.0
    return out.squeeze(0) if squeeze else out


def accumulate(prev: torch.Tensor, increment: torch.Tensor) -> torch.Tensor:
    """Additive flow update; ``prev`` must already be at the increment's resolution."""
    if prev.shape != increment.shape:
        raise DimensionError(f"field shapes differ: {tuple(prev.shape)} vs {tuple(increment.shape)}")
    return prev + increment


def smoothness_energy(field: torch.Tensor) -> torch.Tensor:
    """Mean squared forward-difference gradient of the field.

    Sums (d/dx)^2 + (d/dy)^2 of both displacement channels over all locations
    where the forward difference exists and divides by the number of spatial
    locations H*W.  Batched input returns the mean over the batch.
    """
    fld, _ = _batched(field, 4)
    B, C, H, W = fld.shape
    if H < 2 or W < 2:
        raise DimensionError("smoothness_energy needs H, W >= 2")
    dx = fld[..., :, 1:] - fld[..., :, :-1]
    dy = fld[..., 1:, :] - fld[..., :-1, :]
    total = dx.pow(2).sum(dim=(1, 2, 3)) + dy.pow(2).sum(dim=(1, 2, 3))
    return (total / (H * W)).mean()
