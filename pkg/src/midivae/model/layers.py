"""Neural building blocks shared by the track and bar views."""

from __future__ import annotations

import math

import torch
from torch import nn
import torch.nn.functional as F

from .config import ModelConfig


def sinusoid(length: int, d: int, device=None, dtype=None) -> torch.Tensor:
    pos = torch.arange(length, device=device, dtype=torch.float64).unsqueeze(1)
    rate = torch.exp(torch.arange(0, d, 2, device=device, dtype=torch.float64) * (-math.log(10000.0) / d))
    pe = torch.zeros(length, d, device=device, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * rate)
    pe[:, 1::2] = torch.cos(pos * rate[: d // 2])
    return pe.to(dtype or torch.get_default_dtype())


def causal_mask(length: int, device=None, dtype=None) -> torch.Tensor:
    return torch.triu(
        torch.full((length, length), float("-inf"), device=device, dtype=dtype), diagonal=1
    )


def encoder_stack(d, cfg: ModelConfig, layers: int) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d, cfg.heads, cfg.ff_mult * d, cfg.dropout, activation="gelu", batch_first=True, norm_first=True
    )
    return nn.TransformerEncoder(layer, layers, norm=nn.LayerNorm(d), enable_nested_tensor=False)


class CompoundEmbedding(nn.Module):
    """Eight attribute lookups, concatenated and projected to ``d``.

    Slots whose mask is false get a learned PAD vector whatever indices they
    store. Sinusoidal slot encoding is added by :meth:`forward`.
    """

    def __init__(self, vocab_sizes, attr_dim: int, d: int):
        super().__init__()
        self.tables = nn.ModuleList(nn.Embedding(v, attr_dim) for v in vocab_sizes)
        self.proj = nn.Linear(attr_dim * len(vocab_sizes), d)
        self.pad = nn.Parameter(torch.randn(d) * 0.02)

    def raw(self, values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = torch.cat([table(values[..., i]) for i, table in enumerate(self.tables)], dim=-1)
        x = self.proj(x)
        return torch.where(mask.unsqueeze(-1), x, self.pad.to(x.dtype))

    def forward(self, values, mask):
        x = self.raw(values, mask)
        return x + sinusoid(x.shape[-2], x.shape[-1], x.device, x.dtype)


class QueryPool(nn.Module):
    """Multi-head attention from one learned query onto a set."""

    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.query = nn.Parameter(torch.randn(1, 1, d) * 0.02)
        self.attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)

    def forward(self, x, key_padding_mask=None):
        q = self.query.expand(x.shape[0], -1, -1)
        out, _ = self.attn(q, x, x, key_padding_mask=key_padding_mask, need_weights=False)
        return out[:, 0]


def _group_padding(mask: torch.Tensor) -> torch.Tensor:
    # key_padding_mask is True where ignored; all-PAD groups attend to
    # their PAD embeddings instead of producing NaNs
    empty = ~mask.any(dim=-1, keepdim=True)
    return ~(mask | empty)


class HierarchicalEncoder(nn.Module):
    """Shared intra-group encoder + pooling, then inter-group encoder + pooling.

    ``positional_groups`` adds a sinusoidal group-index encoding before the
    inter-group stage (bars are ordered, tracks are not).
    """

    def __init__(self, cfg: ModelConfig, d: int, positional_groups: bool):
        super().__init__()
        self.intra = encoder_stack(d, cfg, cfg.encoder_layers)
        self.intra_pool = QueryPool(d, cfg.heads, cfg.dropout)
        self.inter = encoder_stack(d, cfg, cfg.encoder_layers)
        self.inter_pool = QueryPool(d, cfg.heads, cfg.dropout)
        self.positional_groups = positional_groups

    def forward(self, embedded: torch.Tensor, mask: torch.Tensor):
        n, g, length, d = embedded.shape
        x = embedded.reshape(n * g, length, d)
        pad = _group_padding(mask.reshape(n * g, length))
        h = self.intra(x, src_key_padding_mask=pad)
        groups = self.intra_pool(h, pad).reshape(n, g, d)
        inter_in = groups
        if self.positional_groups:
            inter_in = groups + sinusoid(g, d, groups.device, groups.dtype)
        pooled = self.inter_pool(self.inter(inter_in))
        return groups, pooled


class GuidanceDecoder(nn.Module):
    """Learned per-group queries attending over ``z`` as a one-slot memory.

    A residual/feed-forward block follows the attention; with a single
    memory slot the attention output alone is identical for every query.
    """

    def __init__(self, cfg: ModelConfig, d: int, groups: int, positional: bool):
        super().__init__()
        self.memory = nn.Linear(cfg.d_latent, d)
        self.queries = nn.Parameter(torch.randn(groups, d) * 0.02)
        self.attn = nn.MultiheadAttention(d, cfg.heads, dropout=cfg.dropout, batch_first=True)
        self.norm1 = nn.LayerNorm(d)
        self.ff = nn.Sequential(
            nn.Linear(d, cfg.ff_mult * d), nn.GELU(), nn.Dropout(cfg.dropout), nn.Linear(cfg.ff_mult * d, d)
        )
        self.norm2 = nn.LayerNorm(d)
        self.positional = positional

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        q = self.queries
        if self.positional:
            q = q + sinusoid(q.shape[0], q.shape[1], q.device, q.dtype)
        q = q.unsqueeze(0).expand(z.shape[0], -1, -1)
        mem = self.memory(z).unsqueeze(1)
        a, _ = self.attn(q, mem, mem, need_weights=False)
        x = self.norm1(q + a)
        return self.norm2(x + self.ff(x))


class IntraDecoder(nn.Module):
    """Causal decoder shared by all groups of a view, one logit head per attribute."""

    def __init__(self, cfg: ModelConfig, d: int, embed: CompoundEmbedding):
        super().__init__()
        layer = nn.TransformerDecoderLayer(
            d, cfg.heads, cfg.ff_mult * d, cfg.dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.stack = nn.TransformerDecoder(layer, cfg.decoder_layers, norm=nn.LayerNorm(d))
        self.bos = nn.Parameter(torch.randn(d) * 0.02)
        self.out = nn.ModuleList(nn.Linear(d, v) for v in cfg.vocab_sizes)
        self.embed = embed
        self.pad_ids = [v - 2 for v in cfg.vocab_sizes]
        self.eog_ids = [v - 1 for v in cfg.vocab_sizes]

    def _run(self, inputs, memory):
        length = inputs.shape[1]
        x = inputs + sinusoid(length, inputs.shape[-1], inputs.device, inputs.dtype)
        mask = causal_mask(length, inputs.device, inputs.dtype)
        return self.stack(x, memory, tgt_mask=mask, tgt_is_causal=True)

    def forward(self, guidance: torch.Tensor, teacher: torch.Tensor):
        """Teacher-forced logits.

        guidance: (N, G, d); teacher: (N, G, L, M) target indices, PAD after
        the group's end-of-group slot. Returns M tensors shaped (N, G, L, V_m).
        """
        n, g, length, m = teacher.shape
        flat = teacher.reshape(n * g, length, m)
        real = flat[..., 0] != self.pad_ids[0]
        emb = self.embed.raw(flat[:, :-1], real[:, :-1])
        bos = self.bos.to(emb.dtype).expand(n * g, 1, -1)
        h = self._run(torch.cat([bos, emb], dim=1), guidance.reshape(n * g, 1, -1))
        return [head(h).reshape(n, g, length, -1) for head in self.out]

    @torch.no_grad()
    def generate(self, guidance, length, temperature=0.0, generator=None, bar_low=None, bar_high=None,
                 track_bars=False):
        """Autoregressive decoding of every group in parallel.

        A group ends when the pitch head picks end-of-group. The bar head is
        restricted to ``[bar_low, bar_high]`` per group; with ``track_bars``
        the lower bound follows the last emitted bar so bars never decrease.
        Returns (values (N, G, L, M), mask (N, G, L)).
        """
        n, g, d = guidance.shape
        rows = n * g
        memory = guidance.reshape(rows, 1, d)
        m = len(self.out)
        values = torch.tensor(self.pad_ids, device=guidance.device).repeat(rows, length, 1)
        alive = torch.ones(rows, dtype=torch.bool, device=guidance.device)
        inputs = self.bos.to(guidance.dtype).expand(rows, 1, d)
        low = bar_low.reshape(rows).clone() if bar_low is not None else None
        high = bar_high.reshape(rows) if bar_high is not None else None
        for k in range(length):
            h = self._run(inputs, memory)[:, -1]
            choice = []
            for a, head in enumerate(self.out):
                logits = head(h).clone()
                logits[:, self.pad_ids[a]] = float("-inf")
                if a != 0:
                    logits[:, self.eog_ids[a]] = float("-inf")
                if a == 5 and low is not None:
                    idx = torch.arange(logits.shape[-1], device=logits.device)
                    bad = (idx < low[:, None]) | (idx > high[:, None])
                    logits = logits.masked_fill(bad, float("-inf"))
                choice.append(_pick(logits, temperature, generator))
            step = torch.stack(choice, dim=-1)
            alive = alive & (step[:, 0] != self.eog_ids[0])
            values[alive, k] = step[alive]
            if track_bars and low is not None:
                low = torch.where(alive, step[:, 5], low)
            if not alive.any():
                break
            emb = self.embed.raw(step.unsqueeze(1), alive.unsqueeze(1))
            inputs = torch.cat([inputs, emb], dim=1)
        values = values.reshape(n, g, length, m)
        return values, values[..., 0] != self.pad_ids[0]


def _pick(logits, temperature, generator):
    if temperature <= 0:
        return logits.argmax(dim=-1)
    probs = F.softmax(logits / temperature, dim=-1)
    return torch.multinomial(probs, 1, generator=generator).squeeze(-1)
