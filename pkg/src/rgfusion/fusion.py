"""Audio-visual recognizer with router-gated cross-attention decoder blocks.

The backbone encoder fuses per-frame linear projections of both streams
(concatenate, project, transformer layers). Two memories are produced per
utterance: e_av from the full fused input and e_v with the audio front-end
output replaced by zeros, so e_v carries no audio dependence at all.

Each decoder layer starts with a gated cross-attention block reading e_v:

    A  = Attn(LN(z), e_v)
    r  = z + tanh(alpha) * (lambda_local[:, None] * A)
    r' = r + tanh(alpha_ffn) * FFN(LN(r))

alpha and alpha_ffn start at 0, so a fresh block is an exact identity and
training opens the visual pathway gradually; lambda_local (from the router)
scales it per position at run time. The rest of each layer is a standard
causal self-attention + cross-attention to e_av + feed-forward stack.

The "self_attn" variant swaps the gated cross-attention for a gated causal
self-attention over z: same parameter shapes, no router or e_v dependence.
It is the no-router baseline for relative error-rate reduction numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint as ckpt
from .autodiff import Tensor, cross_entropy, embedding, no_grad, tanh
from .nn import (
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerLayer,
    causal_mask,
    sinusoidal_positions,
)
from .data import BOS_ID, EOS_ID
from .seeds import generator

MODEL_MAGIC = b"RGFM"

VARIANTS = ("ours", "sa", "l2", "self_attn")


@dataclass
class FusionConfig:
    vocab_size: int = 32
    audio_dim: int = 8
    video_dim: int = 8
    dim: int = 64               # model width F
    enc_layers: int = 2
    dec_layers: int = 2         # K, configurable up to 6
    heads: int = 4
    ffn_hidden: int = 256
    variant: str = "ours"       # ours | sa | l2 | self_attn

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not (1 <= self.dec_layers <= 6):
            raise ValueError(f"dec_layers must be in [1,6], got {self.dec_layers}")


class GCABlock(Module):
    """Gated cross-attention into the visual-only memory."""

    def __init__(self, cfg: FusionConfig, rng):
        self.ln = LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.alpha = Tensor(0.0, requires_grad=True)
        self.ln_ffn = LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ffn_hidden, rng)
        self.alpha_ffn = Tensor(0.0, requires_grad=True)

    def __call__(self, z: Tensor, e_v: Tensor, lam: np.ndarray,
                 collect_weights=None) -> Tensor:
        attended = self.attn(self.ln(z), e_v, None, collect_weights)
        gated = Tensor(np.asarray(lam)[:, None]) * attended
        r = z + tanh(self.alpha) * gated
        return r + tanh(self.alpha_ffn) * self.ffn(self.ln_ffn(r))


class GatedSelfBlock(Module):
    """Ablation block: gated causal self-attention, no e_v, no router gate.
    Parameter shapes match GCABlock exactly."""

    def __init__(self, cfg: FusionConfig, rng):
        self.ln = LayerNorm(cfg.dim)
        self.attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.alpha = Tensor(0.0, requires_grad=True)
        self.ln_ffn = LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ffn_hidden, rng)
        self.alpha_ffn = Tensor(0.0, requires_grad=True)

    def __call__(self, z: Tensor, e_v, lam, collect_weights=None) -> Tensor:
        h = self.ln(z)
        attended = self.attn(h, h, Tensor(causal_mask(z.shape[0])), collect_weights)
        r = z + tanh(self.alpha) * attended
        return r + tanh(self.alpha_ffn) * self.ffn(self.ln_ffn(r))


class DecoderLayer(Module):
    def __init__(self, cfg: FusionConfig, rng):
        if cfg.variant == "self_attn":
            self.gca = GatedSelfBlock(cfg, rng)
        else:
            self.gca = GCABlock(cfg, rng)
        self.ln_self = LayerNorm(cfg.dim)
        self.self_attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.ln_cross = LayerNorm(cfg.dim)
        self.cross_attn = MultiHeadAttention(cfg.dim, cfg.heads, rng)
        self.ln_ffn = LayerNorm(cfg.dim)
        self.ffn = FeedForward(cfg.dim, cfg.ffn_hidden, rng)

    def __call__(self, z, e_av, e_v, lam, mask, skip_gca=False,
                 collect_weights=None):
        if not skip_gca:
            z = self.gca(z, e_v, lam, collect_weights)
        h = self.ln_self(z)
        z = z + self.self_attn(h, h, mask, collect_weights)
        z = z + self.cross_attn(self.ln_cross(z), e_av, None, collect_weights)
        return z + self.ffn(self.ln_ffn(z))


class FusionModel(Module):
    def __init__(self, cfg: FusionConfig, rng: np.random.Generator):
        cfg.validate()
        object.__setattr__(self, "cfg", cfg)
        self.front_a = Linear(cfg.audio_dim, cfg.dim, rng)
        self.front_v = Linear(cfg.video_dim, cfg.dim, rng)
        self.fuse = Linear(2 * cfg.dim, cfg.dim, rng)
        self.enc_layers = [
            TransformerLayer(cfg.dim, cfg.heads, cfg.ffn_hidden, rng)
            for _ in range(cfg.enc_layers)
        ]
        self.embed = Tensor(rng.normal(0.0, 1.0, (cfg.vocab_size, cfg.dim)),
                            requires_grad=True)
        self.dec_layers = [DecoderLayer(cfg, rng) for _ in range(cfg.dec_layers)]
        self.final_ln = LayerNorm(cfg.dim)
        self.head = Linear(cfg.dim, cfg.vocab_size, rng)

    def encoder_parameters(self):
        """Backbone (front-ends + fusion + encoder stack); frozen early in
        fine-tuning."""
        mods = [self.front_a, self.front_v, self.fuse] + self.enc_layers
        out = []
        for m in mods:
            out.extend(m.parameters())
        return out

    def alphas(self):
        return [(f"dec_layers.{i}.gca.alpha", layer.gca.alpha)
                for i, layer in enumerate(self.dec_layers)] + [
            (f"dec_layers.{i}.gca.alpha_ffn", layer.gca.alpha_ffn)
            for i, layer in enumerate(self.dec_layers)
        ]


def build_fusion(cfg: FusionConfig, rng: np.random.Generator) -> FusionModel:
    return FusionModel(cfg, rng)


def encode_backbone(model: FusionModel, x_a: np.ndarray, x_v: np.ndarray,
                    mask_audio: bool = False) -> Tensor:
    """Fused frame memory [T, F]. With mask_audio the audio front-end output
    is replaced by constant zeros before fusion, which severs every
    dependence on x_a (and keeps the audio front-end out of this path's
    gradients)."""
    x_a = np.asarray(x_a, dtype=np.float64)
    x_v = np.asarray(x_v, dtype=np.float64)
    if x_a.shape[0] != x_v.shape[0]:
        raise ValueError(
            f"audio/video frame counts differ: {x_a.shape[0]} vs {x_v.shape[0]}"
        )
    if mask_audio:
        fa = Tensor(np.zeros((x_a.shape[0], model.cfg.dim)))
    else:
        fa = model.front_a(Tensor(x_a))
    fv = model.front_v(Tensor(x_v))
    from .autodiff import concat_cols

    h = model.fuse(concat_cols([fa, fv]))
    h = h + Tensor(sinusoidal_positions(h.shape[0], h.shape[1]))
    for layer in model.enc_layers:
        h = layer(h)
    return h


def decoder_forward(model: FusionModel, tokens, e_av: Tensor,
                    e_v: Tensor | None, lambda_local: np.ndarray | None,
                    skip_gca: bool = False, collect_weights=None) -> Tensor:
    """Teacher-forced decoder pass; logits [len(tokens), vocab].

    tokens is the shifted input sequence (BOS first). lambda_local must
    cover every decoder position; it may be None for the self_attn variant.
    """
    ids = np.asarray(tokens, dtype=np.int64)
    n = ids.shape[0]
    if n == 0:
        raise ValueError("decoder needs at least one input token")
    if ids.min() < 0 or ids.max() >= model.cfg.vocab_size:
        raise ValueError("token id out of vocabulary range")
    needs_gate = model.cfg.variant != "self_attn" and not skip_gca
    if needs_gate:
        lam = np.asarray(lambda_local, dtype=np.float64)
        if lam.shape != (n,):
            raise ValueError(f"lambda_local must have shape ({n},), got {lam.shape}")
    else:
        lam = None
    z = embedding(model.embed, ids) + Tensor(sinusoidal_positions(n, model.cfg.dim))
    mask = Tensor(causal_mask(n))
    for layer in model.dec_layers:
        z = layer(z, e_av, e_v, lam, mask, skip_gca, collect_weights)
    return model.head(model.final_ln(z))


def greedy_decode(model: FusionModel, x_a: np.ndarray, x_v: np.ndarray,
                  lambda_fn=None, max_len: int = 10) -> list:
    """Greedy autoregressive decoding; returns content token ids.

    lambda_fn(n) must return the length-n gate vector for the current
    decoder input; unused for the self_attn variant. Stops at EOS or after
    max_len generated tokens.
    """
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    uses_gate = model.cfg.variant != "self_attn"
    with no_grad():
        e_av = encode_backbone(model, x_a, x_v, mask_audio=False)
        e_v = encode_backbone(model, x_a, x_v, mask_audio=True) if uses_gate else None
        seq = [BOS_ID]
        out = []
        while len(out) < max_len:
            lam = lambda_fn(len(seq)) if uses_gate else None
            logits = decoder_forward(model, seq, e_av, e_v, lam)
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS_ID:
                break
            out.append(nxt)
            seq.append(nxt)
    return out


def sequence_loss(model: FusionModel, sample_tokens, e_av, e_v, lam):
    """Teacher-forced cross entropy and token accuracy for one utterance."""
    dec_in = [BOS_ID] + list(sample_tokens)
    targets = list(sample_tokens) + [EOS_ID]
    logits = decoder_forward(model, dec_in, e_av, e_v, lam)
    ce = cross_entropy(logits, targets)
    correct = int((np.argmax(logits.data, axis=1) == np.asarray(targets)).sum())
    return ce, correct, len(targets)


# -------------------------------------------------------------- checkpoints


def save_fusion(model: FusionModel, path) -> None:
    params = {name: p.data for name, p in model.named_parameters()}
    ckpt.write_checkpoint(path, MODEL_MAGIC, asdict(model.cfg), params)


def load_fusion(path, expect: FusionConfig | None = None) -> FusionModel:
    config, params = ckpt.read_checkpoint(path, MODEL_MAGIC)
    if expect is not None:
        ckpt.check_architecture(config, asdict(expect), "recognizer")
    cfg = FusionConfig(**config)
    model = FusionModel(cfg, generator(0))
    model.load_state(params)
    return model
