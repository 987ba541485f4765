"""The seven training loss terms, their weighted total, and the phase schedule.

Every norm-based term uses mean (not sum) reduction over batch, spatial and
channel dimensions so the published weights transfer across resolutions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .errors import ConfigError, InvalidBatchError
from .geometry import RigidParams

__all__ = [
    "CurriculumWeights",
    "LossReport",
    "loss_rigid",
    "loss_nonrigid",
    "loss_ccd",
    "loss_bo",
    "loss_cs",
    "loss_tri",
    "curriculum",
    "total_loss",
]


@dataclass(frozen=True)
class CurriculumWeights:
    alpha_r: float
    alpha_n: float
    alpha_s: float
    alpha_tri: float
    alpha_cs: float
    alpha_ccd: float
    alpha_bo: float
    phase: str = ""

    def as_dict(self) -> dict:
        return asdict(self)


# (alpha_r, alpha_n, alpha_s, alpha_tri, alpha_cs, alpha_ccd, alpha_bo)
_PHASES = [
    (0.10, "warmup", (7.0, 6.0, 0.5, 0.5, 0.05, 0.0, 0.1)),
    (0.60, "mid", (5.0, 10.0, 0.5, 1.0, 0.1, 0.05, 0.2)),
    (float("inf"), "late", (3.0, 12.0, 0.7, 1.0, 0.1, 0.05, 0.2)),
]


def curriculum(progress: float) -> CurriculumWeights:
    """Piecewise-constant loss weights over training progress in [0, 1]."""
    if not 0.0 <= progress <= 1.0:
        raise ConfigError(f"progress must be in [0, 1], got {progress}")
    for bound, name, w in _PHASES:
        if progress < bound:
            return CurriculumWeights(*w, phase=name)
    raise AssertionError("unreachable")


def _gap(x: torch.Tensor) -> torch.Tensor:
    """Pool a (B, C, H, W) feature grid to (B, C); pass (B, C) through."""
    return x.mean(dim=(-2, -1)) if x.dim() == 4 else x


def loss_rigid(
    theta_pre: RigidParams,
    theta_gt: RigidParams,
    img_rig: torch.Tensor,
    img_rig_gt: torch.Tensor,
) -> torch.Tensor:
    """L1 on normalized rigid parameters plus L1 on the rigid reprojection."""
    param_l1 = (theta_pre.normalized() - theta_gt.normalized()).abs().mean()
    img_l1 = (img_rig - img_rig_gt).abs().mean()
    return param_l1 + img_l1


def loss_nonrigid(
    field_pre: torch.Tensor,
    field_gt: torch.Tensor,
    img_reg: torch.Tensor,
    img_reg_gt: torch.Tensor,
) -> torch.Tensor:
    """L1 on the dense field plus L1 on the final registered image."""
    if field_pre.shape != field_gt.shape:
        raise ConfigError(f"field shapes differ: {tuple(field_pre.shape)} vs {tuple(field_gt.shape)}")
    return (field_pre - field_gt).abs().mean() + (img_reg - img_reg_gt).abs().mean()


def _cov_frob_sq(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    B = x.shape[0]
    xc = x - x.mean(dim=0, keepdim=True)
    yc = y - y.mean(dim=0, keepdim=True)
    cov = xc.T @ yc / (B - 1)
    return cov.pow(2).sum()


def loss_ccd(
    shared_f: Sequence[torch.Tensor],
    private_f: Sequence[torch.Tensor],
    shared_m: Sequence[torch.Tensor],
    private_m: Sequence[torch.Tensor],
    weights: Sequence[float] | None = None,
) -> torch.Tensor:
    """Cross-covariance between projected shared and private features.

    Features are pooled per sample; covariance is taken over the batch.
    """
    L = len(shared_f)
    if weights is None:
        weights = [1.0] * L
    B = _gap(shared_f[0]).shape[0]
    if B < 2:
        raise InvalidBatchError("loss_ccd needs batch size >= 2")
    total = 0.0
    for w, fs, fp, ms, mp in zip(weights, shared_f, private_f, shared_m, private_m):
        total = total + w * (_cov_frob_sq(_gap(fs), _gap(fp)) + _cov_frob_sq(_gap(ms), _gap(mp)))
    return total / L


def loss_bo(bases: Sequence[torch.Tensor]) -> torch.Tensor:
    """Deviation of each projection basis from row orthonormality.

    Each entry is (d, C) or batched (B, d, C); batched bases are averaged.
    """
    total = 0.0
    for W in bases:
        Wb = W.unsqueeze(0) if W.dim() == 2 else W
        eye = torch.eye(Wb.shape[1], dtype=Wb.dtype, device=Wb.device)
        gram = Wb @ Wb.transpose(-1, -2)
        total = total + (gram - eye).pow(2).sum(dim=(-2, -1)).mean()
    return total / len(bases)


def _maybe_truncate(a: torch.Tensor, b: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    # adjacent scales may carry different subspace widths; compare the common part
    d = min(a.shape[1], b.shape[1])
    return a[:, :d], b[:, :d]


def loss_cs(
    shared_f: Sequence[torch.Tensor],
    shared_m: Sequence[torch.Tensor] | None = None,
) -> torch.Tensor:
    """1 - cosine similarity between pooled shared features at adjacent scales."""
    def one_stream(feats):
        vals = []
        pooled = [_gap(f) for f in feats]
        for a, b in zip(pooled[:-1], pooled[1:]):
            a, b = _maybe_truncate(a, b)
            vals.append((1.0 - F.cosine_similarity(a, b, dim=1)).mean())
        return torch.stack(vals).mean()

    out = one_stream(shared_f)
    if shared_m is not None:
        out = (out + one_stream(shared_m)) / 2.0
    return out


def _msd(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return (a - b).pow(2).mean(dim=1)


def loss_tri(
    shared_f: Sequence[torch.Tensor],
    shared_m: Sequence[torch.Tensor],
    private_f: Sequence[torch.Tensor],
    private_m: Sequence[torch.Tensor],
    margin: float = 0.3,
) -> torch.Tensor:
    """Pull the two modalities' shared features together, push raw private away."""
    if margin <= 0:
        raise ConfigError(f"triplet margin must be > 0, got {margin}")
    total = 0.0
    for fs, ms, fp, mp in zip(shared_f, shared_m, private_f, private_m):
        a = F.normalize(_gap(fs), dim=1)
        p = F.normalize(_gap(ms), dim=1)
        nf = F.normalize(_gap(fp), dim=1)
        nm = F.normalize(_gap(mp), dim=1)
        a1, nf1 = _maybe_truncate(a, nf)
        p1, nm1 = _maybe_truncate(p, nm)
        t1 = torch.relu(margin + _msd(a, p) - _msd(a1, nf1))
        t2 = torch.relu(margin + _msd(p, a) - _msd(p1, nm1))
        total = total + (t1 + t2).mean()
    return total / len(shared_f)


TERM_KEYS = ("rigid", "nonrigid", "smooth", "tri", "cs", "ccd", "bo")
_WEIGHT_OF = {
    "rigid": "alpha_r",
    "nonrigid": "alpha_n",
    "smooth": "alpha_s",
    "tri": "alpha_tri",
    "cs": "alpha_cs",
    "ccd": "alpha_ccd",
    "bo": "alpha_bo",
}


def total_loss(terms: dict, weights: CurriculumWeights) -> torch.Tensor:
    """Weighted sum of the seven terms; missing terms count as zero."""
    total = 0.0
    wd = weights.as_dict()
    for key in TERM_KEYS:
        t = terms.get(key)
        if t is None:
            continue
        total = total + wd[_WEIGHT_OF[key]] * t
    if not torch.is_tensor(total):
        total = torch.tensor(total)
    return total


@dataclass
class LossReport:
    """Per-step record of each term, the weighted total and the active phase."""

    phase: str
    rigid: float
    nonrigid: float
    smooth: float
    tri: float
    cs: float
    ccd: float
    bo: float
    total: float

    @classmethod
    def from_terms(cls, terms: dict, weights: CurriculumWeights) -> "LossReport":
        vals = {k: float(terms.get(k, 0.0)) for k in TERM_KEYS}
        return cls(phase=weights.phase, total=float(total_loss(terms, weights)), **vals)

    def to_json(self, **extra) -> str:
        d = {**extra, **asdict(self)}
        return json.dumps(d, sort_keys=True)
