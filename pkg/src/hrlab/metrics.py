"""Evaluation measures: reprojection error, NCC, and linear CKA."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .errors import DimensionError, InvalidBatchError

__all__ = ["reprojection_error", "ncc", "linear_cka", "EvalRecord", "write_records", "read_records"]


def reprojection_error(pred_field: torch.Tensor, gt_field: torch.Tensor) -> torch.Tensor:
    """Mean Euclidean distance, in pixels, between predicted and true displacements."""
    if pred_field.shape != gt_field.shape:
        raise DimensionError(
            f"field shapes differ: {tuple(pred_field.shape)} vs {tuple(gt_field.shape)}"
        )
    diff = pred_field - gt_field
    dist = torch.sqrt(diff.select(-3, 0) ** 2 + diff.select(-3, 1) ** 2)
    return dist.mean()


def _to_gray(img: torch.Tensor) -> torch.Tensor:
    """Collapse the channel dim to luminance; Rec.601 weights for RGB."""
    if img.dim() == 2:
        return img
    c = img.shape[-3]
    if c == 3:
        w = torch.tensor([0.299, 0.587, 0.114], dtype=img.dtype, device=img.device)
        return (img * w.view(3, 1, 1)).sum(dim=-3)
    return img.mean(dim=-3)


def ncc(a: torch.Tensor, b: torch.Tensor, with_flag: bool = False):
    """Pearson correlation of mean-centered grayscale intensities.

    Zero-variance input is defined as 0; pass ``with_flag=True`` to also get
    the degeneracy flag.
    """
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
    x = _to_gray(a).reshape(-1)
    y = _to_gray(b).reshape(-1)
    xc = x - x.mean()
    yc = y - y.mean()
    den = torch.sqrt((xc**2).sum() * (yc**2).sum())
    if den.item() == 0.0:
        out = torch.zeros((), dtype=a.dtype)
        return (out, True) if with_flag else out
    out = (xc * yc).sum() / den
    return (out, False) if with_flag else out


def linear_cka(X: torch.Tensor, Y: torch.Tensor, with_flag: bool = False):
    """Linear centered kernel alignment between (samples, features) matrices."""
    if X.dim() != 2 or Y.dim() != 2:
        raise DimensionError("linear_cka expects 2D (samples, features) inputs")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"sample counts differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[0] < 2:
        raise InvalidBatchError("linear_cka needs at least 2 samples")
    Xc = X - X.mean(dim=0, keepdim=True)
    Yc = Y - Y.mean(dim=0, keepdim=True)
    num = (Yc.T @ Xc).pow(2).sum()
    den = torch.linalg.matrix_norm(Xc.T @ Xc) * torch.linalg.matrix_norm(Yc.T @ Yc)
    if den.item() == 0.0:
        out = torch.zeros((), dtype=X.dtype)
        return (out, True) if with_flag else out
    out = num / den
    return (out, False) if with_flag else out


@dataclass
class EvalRecord:
    pair_id: str
    re: float
    ncc: float
    cka: list[float] = field(default_factory=list)
    config_hash: str = ""

    N_SCALES = 5

    def row(self) -> list:
        cka = list(self.cka) + [float("nan")] * (self.N_SCALES - len(self.cka))
        return [self.pair_id, self.re, self.ncc, *cka[: self.N_SCALES], self.config_hash]


CSV_HEADER = ["pair_id", "re", "ncc", "cka_s0", "cka_s1", "cka_s2", "cka_s3", "cka_s4", "config_hash"]


def write_records(path: str | Path, records: list[EvalRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row())


def read_records(path: str | Path) -> list[EvalRecord]:
    out = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            out.append(
                EvalRecord(
                    pair_id=row["pair_id"],
                    re=float(row["re"]),
                    ncc=float(row["ncc"]),
                    cka=[float(row[f"cka_s{i}"]) for i in range(EvalRecord.N_SCALES)],
                    config_hash=row["config_hash"],
                )
            )
    return out
