"""Shared/private feature disentanglement with cross-scale gating and
dynamic subspace projection.

Pipeline per scale: decompose each modality's features into a shared and a
private component (shared extractor weights are common to both modalities),
suppress private leakage with channel gates driven by cross-scale pooled
attention, then project both modalities' shared features onto one
input-conditioned near-orthonormal basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError

__all__ = [
    "SharedPrivateBundle",
    "SharedPrivateDecomposer",
    "CrossScaleGateBank",
    "DynamicBasisProjector",
    "DisentanglementModule",
    "slot_attention",
    "gated_suppression",
    "orthonormalize",
]


def slot_attention(q: torch.Tensor, ks: list[torch.Tensor], vs: list[torch.Tensor]) -> torch.Tensor:
    """Softmax attention over a small set of pooled slots.

    q: (B, d); ks, vs: lists of (B, d) tensors, one per slot.  Returns the
    softmax((q . k_j) / sqrt(d))-weighted sum of the values.
    """
    d = q.shape[-1]
    logits = torch.stack([(q * k).sum(dim=-1) for k in ks], dim=-1) / math.sqrt(d)
    w = torch.softmax(logits, dim=-1)
    out = sum(w[:, j : j + 1] * vs[j] for j in range(len(vs)))
    return out


def gated_suppression(
    shared: torch.Tensor,
    private: torch.Tensor,
    alpha_s: torch.Tensor,
    alpha_p: torch.Tensor,
    gamma: torch.Tensor | float,
) -> torch.Tensor:
    """Channel-wise gate: alpha_s * shared - gamma * alpha_p * private."""
    a_s = alpha_s.unsqueeze(-1).unsqueeze(-1)
    a_p = alpha_p.unsqueeze(-1).unsqueeze(-1)
    return a_s * shared - gamma * a_p * private


def orthonormalize(W: torch.Tensor, method: str = "qr", steps: int = 10) -> torch.Tensor:
    """Project (B, d, C) matrices (d <= C) onto row-orthonormal matrices.

    ``qr`` uses a sign-fixed QR decomposition; ``newton_schulz`` iterates the
    polar-decomposition recurrence, which is fully differentiable but only
    approximately orthonormal for ill-conditioned inputs.
    """
    if method == "qr":
        Q, R = torch.linalg.qr(W.transpose(-2, -1))
        sign = torch.sign(torch.diagonal(R, dim1=-2, dim2=-1))
        sign = torch.where(sign == 0, torch.ones_like(sign), sign)
        return (Q * sign.unsqueeze(-2)).transpose(-2, -1)
    if method == "newton_schulz":
        norm = torch.linalg.matrix_norm(W, keepdim=True).clamp_min(1e-8)
        Y = W / norm
        for _ in range(steps):
            Y = 1.5 * Y - 0.5 * Y @ Y.transpose(-2, -1) @ Y
        return Y
    raise ConfigError(f"unknown orthonormalization method {method!r}")


@dataclass
class SharedPrivateBundle:
    """Per-scale intermediate and final features of the disentangler."""

    shared_f: list[torch.Tensor]
    private_f: list[torch.Tensor]
    shared_m: list[torch.Tensor]
    private_m: list[torch.Tensor]
    alpha_s_f: list[torch.Tensor] = field(default_factory=list)
    alpha_p_f: list[torch.Tensor] = field(default_factory=list)
    alpha_s_m: list[torch.Tensor] = field(default_factory=list)
    alpha_p_m: list[torch.Tensor] = field(default_factory=list)
    gated_f: list[torch.Tensor] = field(default_factory=list)
    gated_m: list[torch.Tensor] = field(default_factory=list)
    projected_f: list[torch.Tensor] = field(default_factory=list)
    projected_m: list[torch.Tensor] = field(default_factory=list)
    bases_raw: list[torch.Tensor] = field(default_factory=list)
    bases: list[torch.Tensor] = field(default_factory=list)
    gammas: torch.Tensor | None = None

    def report(self) -> dict:
        """Diagnostics for the plot command: gate histograms and gamma values."""
        out = {"gammas": [float(g) for g in self.gammas]} if self.gammas is not None else {}
        scales = {}
        for i, (asf, apf) in enumerate(zip(self.alpha_s_f, self.alpha_p_f)):
            hist_s = torch.histc(asf.detach().float(), bins=10, min=0.0, max=1.0)
            hist_p = torch.histc(apf.detach().float(), bins=10, min=0.0, max=1.0)
            scales[f"scale{i}"] = {
                "alpha_shared_hist": [float(v) for v in hist_s],
                "alpha_private_hist": [float(v) for v in hist_p],
                "alpha_shared_mean": float(asf.mean()),
                "alpha_private_mean": float(apf.mean()),
            }
        out["scales"] = scales
        return out


class _Extractor(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(0.1)

    def forward(self, x):
        return self.conv2(self.act(self.conv1(x)))


class SharedPrivateDecomposer(nn.Module):
    """Per-scale shared/private split; the shared extractor is applied with
    identical weights to both modalities."""

    def __init__(self, widths):
        super().__init__()
        self.shared = nn.ModuleList(_Extractor(c) for c in widths)
        self.private_f = nn.ModuleList(_Extractor(c) for c in widths)
        self.private_m = nn.ModuleList(_Extractor(c) for c in widths)

    def forward(self, pyr_f: list[torch.Tensor], pyr_m: list[torch.Tensor]):
        shared_f = [e(x) for e, x in zip(self.shared, pyr_f)]
        shared_m = [e(x) for e, x in zip(self.shared, pyr_m)]
        private_f = [e(x) for e, x in zip(self.private_f, pyr_f)]
        private_m = [e(x) for e, x in zip(self.private_m, pyr_m)]
        return shared_f, private_f, shared_m, private_m


class CrossScaleGateBank(nn.Module):
    """Per-scale channel gates from pooled attention over scales {i-1, i, i+1}.

    Boundary scales duplicate the edge neighbor so there are always 3 slots.
    """

    def __init__(self, widths, attn_dim: int = 32):
        super().__init__()
        self.attn_dim = attn_dim
        self.q = nn.ModuleList(nn.Linear(c, attn_dim) for c in widths)
        self.k = nn.ModuleList(nn.Linear(c, attn_dim) for c in widths)
        self.v = nn.ModuleList(nn.Linear(c, attn_dim) for c in widths)
        self.mlp = nn.ModuleList(
            nn.Sequential(nn.Linear(attn_dim, attn_dim), nn.LeakyReLU(0.1), nn.Linear(attn_dim, c))
            for c in widths
        )

    def forward(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        L = len(feats)
        pooled = [f.mean(dim=(-2, -1)) for f in feats]
        gates = []
        for i in range(L):
            slots = [max(i - 1, 0), i, min(i + 1, L - 1)]
            q = self.q[i](pooled[i])
            ks = [self.k[j](pooled[j]) for j in slots]
            vs = [self.v[j](pooled[j]) for j in slots]
            c = slot_attention(q, ks, vs)
            gates.append(torch.sigmoid(self.mlp[i](c)))
        return gates


class DynamicBasisProjector(nn.Module):
    """Input-conditioned projection basis shared by both modalities at one scale.

    The generator is initialized so its raw output starts near the identity
    rows, making the projection a near-pass-through at initialization.
    """

    def __init__(self, channels: int, d_sub: int | None = None, hard_ortho: bool = True,
                 ortho_method: str = "qr"):
        super().__init__()
        d_sub = channels if d_sub is None else d_sub
        if d_sub > channels:
            raise ConfigError(f"d_sub={d_sub} exceeds channel count {channels}")
        self.channels = channels
        self.d_sub = d_sub
        self.hard_ortho = hard_ortho
        self.ortho_method = ortho_method
        hidden = 2 * channels
        self.gen = nn.Sequential(
            nn.Linear(2 * channels, hidden), nn.LeakyReLU(0.1), nn.Linear(hidden, d_sub * channels)
        )
        last = self.gen[-1]
        nn.init.normal_(last.weight, std=1e-3)
        with torch.no_grad():
            last.bias.copy_(torch.eye(d_sub, channels).reshape(-1))

    def forward(self, gated_f: torch.Tensor, gated_m: torch.Tensor):
        z = torch.cat([gated_f.mean(dim=(-2, -1)), gated_m.mean(dim=(-2, -1))], dim=-1)
        W_raw = self.gen(z).reshape(-1, self.d_sub, self.channels)
        W = orthonormalize(W_raw, self.ortho_method) if self.hard_ortho else W_raw
        proj_f = torch.einsum("bdc,bchw->bdhw", W, gated_f)
        proj_m = torch.einsum("bdc,bchw->bdhw", W, gated_m)
        return proj_f, proj_m, W_raw, W


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


class DisentanglementModule(nn.Module):
    """Decompose, gate and project a pair of 5-level feature pyramids."""

    def __init__(self, widths, d_sub: int | None = None, attn_dim: int = 32,
                 hard_ortho: bool = True, ortho_method: str = "qr", gamma_init: float = 0.1):
        super().__init__()
        self.widths = tuple(widths)
        self.decomposer = SharedPrivateDecomposer(widths)
        self.gate_shared = CrossScaleGateBank(widths, attn_dim)
        self.gate_private = CrossScaleGateBank(widths, attn_dim)
        self.projectors = nn.ModuleList(
            DynamicBasisProjector(c, d_sub, hard_ortho, ortho_method) for c in widths
        )
        self.gamma_raw = nn.Parameter(torch.full((len(self.widths),), _softplus_inv(gamma_init)))

    @property
    def gammas(self) -> torch.Tensor:
        return F.softplus(self.gamma_raw)

    @property
    def out_dims(self) -> tuple[int, ...]:
        return tuple(p.d_sub for p in self.projectors)

    def forward(self, pyr_f: list[torch.Tensor], pyr_m: list[torch.Tensor]) -> SharedPrivateBundle:
        shared_f, private_f, shared_m, private_m = self.decomposer(pyr_f, pyr_m)
        a_s_f = self.gate_shared(shared_f)
        a_s_m = self.gate_shared(shared_m)
        a_p_f = self.gate_private(private_f)
        a_p_m = self.gate_private(private_m)
        gammas = self.gammas
        gated_f = [
            gated_suppression(s, p, a_s, a_p, g)
            for s, p, a_s, a_p, g in zip(shared_f, private_f, a_s_f, a_p_f, gammas)
        ]
        gated_m = [
            gated_suppression(s, p, a_s, a_p, g)
            for s, p, a_s, a_p, g in zip(shared_m, private_m, a_s_m, a_p_m, gammas)
        ]
        bundle = SharedPrivateBundle(
            shared_f=shared_f, private_f=private_f, shared_m=shared_m, private_m=private_m,
            alpha_s_f=a_s_f, alpha_p_f=a_p_f, alpha_s_m=a_s_m, alpha_p_m=a_p_m,
            gated_f=gated_f, gated_m=gated_m, gammas=gammas,
        )
        for proj, gf, gm in zip(self.projectors, gated_f, gated_m):
            pf, pm, W_raw, W = proj(gf, gm)
            bundle.projected_f.append(pf)
            bundle.projected_m.append(pm)
            bundle.bases_raw.append(W_raw)
            bundle.bases.append(W)
        return bundle
