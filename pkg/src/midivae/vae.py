"""The multi-view VAE: view encoders, latent fusion, dual decoding, probability fusion."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .errors import ContractError
from .model.config import ModelConfig
from .model.layers import CompoundEmbedding, GuidanceDecoder, HierarchicalEncoder, IntraDecoder
from .octuple.tokens import OctupleToken, TokenSequence
from .views import ViewTransform, scatter_to_canonical

log = logging.getLogger(__name__)


# latent ---------------------------------------------------------------------


@dataclass
class LatentState:
    mu: torch.Tensor
    log_var: torch.Tensor
    z: Optional[torch.Tensor] = None
    eps: Optional[torch.Tensor] = None


def reparameterize(mu, log_var, generator=None, deterministic=False, eps=None):
    """Return (z, eps) with ``z = mu + exp(log_var / 2) * eps``.

    In deterministic mode ``z`` is ``mu`` itself and ``eps`` is None.
    """
    if deterministic:
        return mu, None
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + torch.exp(0.5 * log_var) * eps, eps


def kl_divergence(mu, log_var):
    """KL(N(mu, diag exp(log_var)) || N(0, I)), summed over the last axis."""
    return 0.5 * torch.sum(torch.exp(log_var) + mu * mu - 1.0 - log_var, dim=-1)


# probability fusion ------------------------------------------------------------


@dataclass
class FusionWeights:
    alpha: torch.Tensor  # (M,)

    @classmethod
    def from_logits(cls, logits):
        return cls(torch.sigmoid(logits))


def fuse_probabilities(p_t, p_b, xf_t: ViewTransform, xf_b: ViewTransform, weights):
    """Mix the two views' per-slot distributions in canonical order.

    ``p_t``/``p_b`` are sequences of M arrays shaped (G, L, V_m); the result
    is a list of M arrays shaped (N, V_m) with
    ``alpha_m * scatter(p_t) + (1 - alpha_m) * scatter(p_b)``.
    """
    if xf_t.length != xf_b.length:
        raise ContractError(f"track view scatters to {xf_t.length} tokens, bar view to {xf_b.length}")
    alpha = weights.alpha if isinstance(weights, FusionWeights) else weights
    if len(alpha) != len(p_t) or len(p_t) != len(p_b):
        raise ContractError("need one fusion weight per attribute")
    out = []
    for a, (pt, pb) in enumerate(zip(p_t, p_b)):
        st, sb = scatter_to_canonical(pt, xf_t), scatter_to_canonical(pb, xf_b)
        out.append(alpha[a] * st + (1 - alpha[a]) * sb)
    return out


def fuse_log_probabilities(lp_t, lp_b, alpha):
    """Log-space version of the fusion for already-gathered (…, V) tensors."""
    return torch.logaddexp(torch.log(alpha) + lp_t, torch.log1p(-alpha) + lp_b)


def gather_canonical(view_lp, flat_index):
    """(N, G, L, V) per-slot values -> (N, S, V) at canonical positions."""
    n, g, length, v = view_lp.shape
    flat = view_lp.reshape(n, g * length, v)
    return torch.gather(flat, 1, flat_index.unsqueeze(-1).expand(-1, -1, v))


# losses ------------------------------------------------------------------------


@dataclass
class LossBreakdown:
    l_rs: float
    l_rst: float
    l_rsb: float
    l_kl: float
    beta: float
    l_total: float

    def as_dict(self):
        return dict(self.__dict__)


def reconstruction_nll(log_probs, targets, mask):
    """Mean over unmasked positions of the summed per-attribute NLL."""
    per_pos = 0.0
    for a, lp in enumerate(log_probs):
        per_pos = per_pos - torch.gather(lp, -1, targets[..., a : a + 1]).squeeze(-1)
    mask = mask.to(lp.dtype)
    count = mask.sum()
    if count == 0:
        log.warning("all positions are PAD; reconstruction loss set to 0")
        return (per_pos * mask).sum()
    return (per_pos * mask).sum() / count


def total_loss(lp, lp_t, lp_b, targets, mask, targets_t, mask_t, targets_b, mask_b, mu, log_var, beta):
    """Sum of the three reconstruction terms and the beta-weighted KL.

    ``lp`` / ``lp_t`` / ``lp_b`` are lists of per-attribute log-probabilities
    (None for a disabled view). Returns (total tensor, parts dict of tensors).
    """
    zero = mu.new_zeros(())
    l_rs = reconstruction_nll(lp, targets, mask)
    l_rst = reconstruction_nll(lp_t, targets_t, mask_t) if lp_t is not None else zero
    l_rsb = reconstruction_nll(lp_b, targets_b, mask_b) if lp_b is not None else zero
    l_kl = kl_divergence(mu, log_var).mean()
    total = l_rs + l_rst + l_rsb + beta * l_kl
    return total, {"l_rs": l_rs, "l_rst": l_rst, "l_rsb": l_rsb, "l_kl": l_kl}


def breakdown(parts, beta, total) -> LossBreakdown:
    return LossBreakdown(
        l_rs=float(parts["l_rs"].detach()),
        l_rst=float(parts["l_rst"].detach()),
        l_rsb=float(parts["l_rsb"].detach()),
        l_kl=float(parts["l_kl"].detach()),
        beta=float(beta),
        l_total=float(total.detach()),
    )


# model -------------------------------------------------------------------------


@dataclass
class ForwardOutput:
    log_probs: list  # canonical, M x (N, S, V_m)
    track_log_probs: Optional[list]
    bar_log_probs: Optional[list]
    latent: LatentState
    loss: torch.Tensor
    parts: dict
    beta: float

    def breakdown(self) -> LossBreakdown:
        return breakdown(self.parts, self.beta, self.loss)


class MultiViewMidiVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        attr_dim = cfg.attr_dim
        if cfg.use_track:
            d = cfg.d_track
            self.track_embed = CompoundEmbedding(cfg.vocab_sizes, attr_dim or max(1, d // 4), d)
            self.track_encoder = HierarchicalEncoder(cfg, d, positional_groups=False)
            self.track_guidance = GuidanceDecoder(cfg, d, cfg.n_tracks, positional=False)
            self.track_decoder = IntraDecoder(cfg, d, self.track_embed)
        if cfg.use_bar:
            d = cfg.d_bar
            self.bar_embed = CompoundEmbedding(cfg.vocab_sizes, attr_dim or max(1, d // 4), d)
            self.bar_encoder = HierarchicalEncoder(cfg, d, positional_groups=True)
            self.bar_guidance = GuidanceDecoder(cfg, d, cfg.n_bars, positional=True)
            self.bar_decoder = IntraDecoder(cfg, d, self.bar_embed)
        self.fusion_width = max(cfg.d_track, cfg.d_bar)
        self.fusion = nn.Conv1d(self.fusion_width, cfg.d_latent, kernel_size=2)
        self.mu_head = nn.Linear(cfg.d_latent, cfg.d_latent)
        self.log_var_head = nn.Linear(cfg.d_latent, cfg.d_latent)
        self.alpha_logits = nn.Parameter(torch.zeros(len(cfg.vocab_sizes)))

    # pieces --------------------------------------------------------------

    @property
    def alpha(self) -> torch.Tensor:
        """Per-attribute weight on the track view."""
        if self.cfg.views == "track":
            return torch.ones_like(self.alpha_logits)
        if self.cfg.views == "bar":
            return torch.zeros_like(self.alpha_logits)
        return torch.sigmoid(self.alpha_logits)

    def encode_track(self, values, mask):
        return self.track_encoder(self.track_embed(values, mask), mask)

    def encode_bar(self, values, mask):
        return self.bar_encoder(self.bar_embed(values, mask), mask)

    def fuse_views(self, h_t, h_b):
        """Stack (h_t, h_b) on a two-position axis, convolve to one hybrid vector."""
        for name, h in (("h_t", h_t), ("h_b", h_b)):
            if h.shape[-1] > self.fusion_width:
                raise ContractError(f"{name} width {h.shape[-1]} exceeds fusion width {self.fusion_width}")
        # narrower view is zero-padded to the common channel count
        h_t = nn.functional.pad(h_t, (0, self.fusion_width - h_t.shape[-1]))
        h_b = nn.functional.pad(h_b, (0, self.fusion_width - h_b.shape[-1]))
        hybrid = self.fusion(torch.stack([h_t, h_b], dim=-1)).squeeze(-1)
        return LatentState(self.mu_head(hybrid), self.log_var_head(hybrid))

    def encode(self, batch) -> LatentState:
        n = batch["canon"].shape[0]
        dtype = self.alpha_logits.dtype
        h_t = h_b = None
        if self.cfg.use_track:
            h_t = self.encode_track(batch["track_values"], batch["track_mask"])[1]
        if self.cfg.use_bar:
            h_b = self.encode_bar(batch["bar_values"], batch["bar_mask"])[1]
        if h_t is None:
            h_t = torch.zeros(n, self.cfg.d_track, dtype=dtype, device=h_b.device)
        if h_b is None:
            h_b = torch.zeros(n, self.cfg.d_bar, dtype=dtype, device=h_t.device)
        return self.fuse_views(h_t, h_b)

    def forward(self, batch, beta=0.0, deterministic=False, generator=None, eps=None) -> ForwardOutput:
        latent = self.encode(batch)
        latent.z, latent.eps = reparameterize(latent.mu, latent.log_var, generator, deterministic, eps)
        lp_t = lp_b = None
        if self.cfg.use_track:
            guide = self.track_guidance(latent.z)
            lp_t = [torch.log_softmax(x, -1) for x in self.track_decoder(guide, batch["track_targets"])]
        if self.cfg.use_bar:
            guide = self.bar_guidance(latent.z)
            lp_b = [torch.log_softmax(x, -1) for x in self.bar_decoder(guide, batch["bar_targets"])]

        alpha = self.alpha
        fused = []
        for a in range(len(self.cfg.vocab_sizes)):
            ct = gather_canonical(lp_t[a], batch["track_index"]) if lp_t is not None else None
            cb = gather_canonical(lp_b[a], batch["bar_index"]) if lp_b is not None else None
            if ct is None:
                fused.append(cb)
            elif cb is None:
                fused.append(ct)
            else:
                fused.append(fuse_log_probabilities(ct, cb, alpha[a]))
        loss, parts = total_loss(
            fused, lp_t, lp_b,
            batch["canon"], batch["canon_mask"],
            batch.get("track_targets"), batch.get("track_target_mask"),
            batch.get("bar_targets"), batch.get("bar_target_mask"),
            latent.mu, latent.log_var, beta,
        )
        return ForwardOutput(fused, lp_t, lp_b, latent, loss, parts, float(beta))

    # inference -----------------------------------------------------------

    def real_sizes(self):
        return [v - 2 for v in self.cfg.vocab_sizes]

    def predict(self, log_probs):
        """Argmax over real classes only; (N, S, M) indices."""
        return torch.stack(
            [lp[..., :size].argmax(-1) for lp, size in zip(log_probs, self.real_sizes())], dim=-1
        )

    @torch.no_grad()
    def generate(self, z, temperature=0.0, generator=None):
        """Decode latent vectors; returns per-view (values, mask) dicts."""
        out = {}
        n = z.shape[0]
        device = z.device
        cfg = self.cfg
        if cfg.use_bar:
            idx = torch.arange(cfg.n_bars, device=device).expand(n, -1)
            out["bar"] = self.bar_decoder.generate(
                self.bar_guidance(z), cfg.bar_capacity, temperature, generator, bar_low=idx, bar_high=idx
            )
        if cfg.use_track:
            low = torch.zeros(n, cfg.n_tracks, dtype=torch.long, device=device)
            high = torch.full_like(low, cfg.n_bars - 1)
            out["track"] = self.track_decoder.generate(
                self.track_guidance(z), cfg.track_capacity, temperature, generator,
                bar_low=low, bar_high=high, track_bars=True,
            )
        return out


def view_to_sequence(values, mask) -> TokenSequence:
    """Collect the unmasked cells of one generated view into a canonical sequence."""
    cells = np.asarray(values)[np.asarray(mask)]
    unique = {OctupleToken(*map(int, row)) for row in cells}
    return TokenSequence(sorted(unique, key=OctupleToken.sort_key))
