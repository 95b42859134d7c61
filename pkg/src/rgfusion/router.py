"""Audio-reliability router: paired masked autoencoders with cross-modal
translators, scoring per-patch audio trustworthiness.

Both feature streams are patchified, encoded to a shared latent width, and
translated into each other's latent space (A2V: audio latents -> predicted
video latents, V2A the reverse). The per-patch cosine between the actual and
the predicted latents is the reliability score: with clean audio the
translation lands near the true video latent; the more the audio is
corrupted, the further the prediction drifts, so the score falls. The local
gate is tanh(interpolate(1 - s_video)) resampled to any requested length.

Pretraining losses: symmetric InfoNCE over time-aligned latent pairs,
cross-modal masked reconstruction (masked patches are filled from the other
modality's translated latents plus a learned mask embedding, so the
translators get a pointwise training signal), and a weight-clipped
Wasserstein critic that tells real latents from translated ones. At scoring
time only the encoders and translators run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import checkpoint as ckpt
from .autodiff import (
    Tensor,
    cosine_similarity,
    cross_entropy,
    mul,
    neg,
    no_grad,
    sqrt,
    sub,
    sum_,
    transpose,
)
from .nn import Linear, Module, TransformerLayer, sinusoidal_positions
from .seeds import generator

ROUTER_MAGIC = b"RGFR"
COS_EPS = 1e-8
GATE_VARIANTS = ("sv", "sa", "l2")


@dataclass
class RouterConfig:
    audio_dim: int = 8
    video_dim: int = 8
    dim: int = 32               # shared latent width
    layers: int = 2             # encoder depth per modality
    heads: int = 4
    ffn_hidden: int = 128
    patch_len: int = 2          # frames per patch
    mask_ratio: float = 0.5
    critic_hidden: int = 32
    c_clip: float = 0.01        # Wasserstein critic weight bound


@dataclass
class ReliabilityScores:
    """Per-patch audio/video trust scores for one utterance."""
    s_v: np.ndarray             # cos(video latent, translated-from-audio)
    s_a: np.ndarray             # cos(audio latent, translated-from-video)
    l2_v: np.ndarray            # ||v - v_hat||_2 / sqrt(dim), for the l2 ablation
    source_len: int             # frame count the patches came from
    lambda_local: np.ndarray | None = None   # last gate computed from these scores


def patchify(features: np.ndarray, patch_len: int) -> np.ndarray:
    """Group consecutive frames into flat patches [T_p, patch_len*F].

    T_p = ceil(T / patch_len); a ragged tail is padded by repeating the
    last frame.
    """
    if patch_len < 1:
        raise ValueError(f"patch_len must be >= 1, got {patch_len}")
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError(f"patchify expects a nonempty [T,F] array, got {feats.shape}")
    t, f = feats.shape
    t_p = -(-t // patch_len)
    pad = t_p * patch_len - t
    if pad:
        feats = np.concatenate([feats, np.repeat(feats[-1:], pad, axis=0)], axis=0)
    return feats.reshape(t_p, patch_len * f)


class _Encoder(Module):
    def __init__(self, patch_dim, cfg: RouterConfig, rng):
        self.embed = Linear(patch_dim, cfg.dim, rng)
        self.layers = [
            TransformerLayer(cfg.dim, cfg.heads, cfg.ffn_hidden, rng)
            for _ in range(cfg.layers)
        ]

    def __call__(self, patches: np.ndarray) -> Tensor:
        # sqrt-dim embedding gain keeps patch content dominant over the
        # positional component that both modalities share
        x = self.embed(Tensor(patches)) * math.sqrt(float(self.embed.w.shape[1]))
        x = x + Tensor(sinusoidal_positions(x.shape[0], x.shape[1]))
        for layer in self.layers:
            x = layer(x)
        return x


class _Translator(Module):
    """Linear projection followed by one transformer layer."""

    def __init__(self, cfg: RouterConfig, rng):
        self.proj = Linear(cfg.dim, cfg.dim, rng)
        # identity start: translated latents begin in the source latent frame,
        # so cross-modal cosine scores measure drift rather than random rotation
        self.proj.w.data = np.eye(cfg.dim)
        self.layer = TransformerLayer(cfg.dim, cfg.heads, cfg.ffn_hidden, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.layer(self.proj(x))


class _Decoder(Module):
    """One transformer layer plus a linear head back to patch space."""

    def __init__(self, patch_dim, cfg: RouterConfig, rng):
        self.layer = TransformerLayer(cfg.dim, cfg.heads, cfg.ffn_hidden, rng)
        self.head = Linear(cfg.dim, patch_dim, rng)

    def __call__(self, latents: Tensor) -> Tensor:
        x = latents + Tensor(sinusoidal_positions(latents.shape[0], latents.shape[1]))
        return self.head(self.layer(x))


class RouterModel(Module):
    def __init__(self, cfg: RouterConfig, rng: np.random.Generator):
        object.__setattr__(self, "cfg", cfg)
        pa = cfg.patch_len * cfg.audio_dim
        pv = cfg.patch_len * cfg.video_dim
        self.enc_a = _Encoder(pa, cfg, rng)
        self.enc_v = _Encoder(pv, cfg, rng)
        self.a2v = _Translator(cfg, rng)
        self.v2a = _Translator(cfg, rng)
        self.dec_a = _Decoder(pa, cfg, rng)
        self.dec_v = _Decoder(pv, cfg, rng)
        self.mask_tok_a = Tensor(rng.normal(0.0, 0.02, cfg.dim), requires_grad=True)
        self.mask_tok_v = Tensor(rng.normal(0.0, 0.02, cfg.dim), requires_grad=True)
        # critic weights start inside the clip box so the bound holds from step 0
        self.critic_l1 = Linear(cfg.dim, cfg.critic_hidden, rng)
        self.critic_l2 = Linear(cfg.critic_hidden, 1, rng)
        for p in self.critic_parameters():
            p.data = rng.uniform(-cfg.c_clip, cfg.c_clip, p.data.shape)

    def critic_parameters(self):
        return self.critic_l1.parameters() + self.critic_l2.parameters()

    def generator_parameters(self):
        critic = {id(p) for p in self.critic_parameters()}
        return [p for p in self.parameters() if id(p) not in critic]

    def critic(self, latents: Tensor) -> Tensor:
        from .autodiff import gelu

        return self.critic_l2(gelu(self.critic_l1(latents)))  # [T,1]


def encode(model: RouterModel, x_a_patches: np.ndarray,
           x_v_patches: np.ndarray):
    """Encode audio/video patch sequences into the shared latent space."""
    return model.enc_a(x_a_patches), model.enc_v(x_v_patches)


def translate(model: RouterModel, a: Tensor, v: Tensor):
    """Predict each modality's latents from the other: (v_hat, a_hat)."""
    return model.a2v(a), model.v2a(v)


def score(model: RouterModel, x_a: np.ndarray, x_v: np.ndarray) -> ReliabilityScores:
    """Per-patch reliability scores for one utterance (raw frame streams in).

    Runs encoders and translators only; the MAE decoders and the critic are
    not evaluated here.
    """
    t_frames = np.asarray(x_a).shape[0]
    with no_grad():
        xa_p = patchify(x_a, model.cfg.patch_len)
        xv_p = patchify(x_v, model.cfg.patch_len)
        a, v = encode(model, xa_p, xv_p)
        v_hat, a_hat = translate(model, a, v)
        s_v = cosine_similarity(v, v_hat, COS_EPS).data.copy()
        s_a = cosine_similarity(a, a_hat, COS_EPS).data.copy()
        diff = v.data - v_hat.data
        l2_v = np.sqrt((diff * diff).sum(axis=1)) / math.sqrt(model.cfg.dim)
    return ReliabilityScores(s_v=s_v, s_a=s_a, l2_v=l2_v, source_len=t_frames)


def interpolate_scores(values: np.ndarray, n_out: int) -> np.ndarray:
    """Endpoint-aligned linear resampling of a per-patch signal to length
    n_out. A single source patch broadcasts."""
    if n_out < 1:
        raise ValueError(f"interpolation target length must be >= 1, got {n_out}")
    values = np.asarray(values, dtype=np.float64)
    t_p = values.shape[0]
    if t_p == 0:
        raise ValueError("cannot interpolate an empty score vector")
    if t_p == 1:
        return np.full(n_out, values[0])
    pos = np.linspace(0.0, t_p - 1.0, n_out)
    return np.interp(pos, np.arange(t_p, dtype=np.float64), values)


def local_gate(scores: ReliabilityScores, n_out: int, variant: str = "sv") -> np.ndarray:
    """Per-position gate in [0, 1): tanh of the resampled unreliability.

    sv: tanh(interp(1 - s_v))   (the main path)
    sa: tanh(interp(1 - s_a))   (audio-side ablation)
    l2: tanh(interp(||v - v_hat|| / sqrt(dim)))  (distance ablation, no 1-x shift)
    """
    if variant == "sv":
        raw = 1.0 - scores.s_v
    elif variant == "sa":
        raw = 1.0 - scores.s_a
    elif variant == "l2":
        raw = scores.l2_v
    else:
        raise ValueError(f"unknown gate variant {variant!r}")
    gate = np.tanh(interpolate_scores(raw, n_out))
    scores.lambda_local = gate
    return gate


# ------------------------------------------------------------------- losses


def contrastive_loss(a: Tensor, v: Tensor, temperature: float = 0.1) -> Tensor:
    """Symmetric InfoNCE over time-aligned (a_t, v_t) pairs within one
    utterance: positives share the index, negatives are the other indices."""
    if a.shape != v.shape or a.data.ndim != 2:
        raise ValueError(f"latent shape mismatch: {a.shape} vs {v.shape}")
    t_p = a.shape[0]
    if t_p < 2:
        raise ValueError("contrastive loss needs at least 2 time-aligned pairs")
    na = a / (sqrt(sum_(mul(a, a), axis=1, keepdims=True)) + COS_EPS)
    nv = v / (sqrt(sum_(mul(v, v), axis=1, keepdims=True)) + COS_EPS)
    logits = (na @ transpose(nv)) * (1.0 / temperature)
    targets = np.arange(t_p)
    return 0.5 * (cross_entropy(logits, targets) + cross_entropy(transpose(logits), targets))


def draw_masks(t_p: int, mask_ratio: float, seed: int):
    """Independent audio/video patch masks at the given ratio (at least one
    patch masked)."""
    if not (0.0 < mask_ratio < 1.0):
        raise ValueError(f"mask_ratio must be in (0,1), got {mask_ratio}")
    rng = generator(seed)
    n_masked = max(1, math.ceil(mask_ratio * t_p))
    mask_a = np.zeros(t_p, dtype=bool)
    mask_a[rng.choice(t_p, size=n_masked, replace=False)] = True
    mask_v = np.zeros(t_p, dtype=bool)
    mask_v[rng.choice(t_p, size=n_masked, replace=False)] = True
    return mask_a, mask_v


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """MSE restricted to masked patch rows."""
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValueError("masked_mse needs at least one masked row")
    d = sub(pred, Tensor(target))
    dm = mul(d, Tensor(mask[:, None].astype(np.float64)))
    return sum_(mul(dm, dm)) / float(n_masked * target.shape[1])


def reconstruction_loss(model: RouterModel, x_a_patches: np.ndarray,
                        x_v_patches: np.ndarray, mask=None, seed: int = 0,
                        latents=None) -> Tensor:
    """Cross-modal masked reconstruction.

    For each modality, masked patches are hidden from that modality's
    encoder (zeroed at the input) and their decoder slots are filled with
    the translated latents from the *other* modality plus a learned mask
    embedding. The MSE is taken over masked positions only, so the decoders
    can only succeed through the translators.

    `latents` optionally carries precomputed (a_full, v_full, v_hat, a_hat)
    from an earlier full-encode pass so training steps don't encode twice.
    """
    t_p = x_a_patches.shape[0]
    if mask is None:
        mask_a, mask_v = draw_masks(t_p, model.cfg.mask_ratio, seed)
    else:
        mask_a, mask_v = mask
    if latents is None:
        a_full, v_full = encode(model, x_a_patches, x_v_patches)
        v_hat, a_hat = translate(model, a_full, v_full)
    else:
        _, _, v_hat, a_hat = latents

    def branch(patches, mask_own, translated, encoder, mask_tok, decoder):
        visible = patches.copy()
        visible[mask_own] = 0.0
        own = encoder(visible)
        keep = Tensor((~mask_own)[:, None].astype(np.float64))
        fill = Tensor(mask_own[:, None].astype(np.float64))
        dec_in = own * keep + (translated + mask_tok) * fill
        return masked_mse(decoder(dec_in), patches, mask_own)

    loss_a = branch(x_a_patches, mask_a, a_hat, model.enc_a, model.mask_tok_a,
                    model.dec_a)
    loss_v = branch(x_v_patches, mask_v, v_hat, model.enc_v, model.mask_tok_v,
                    model.dec_v)
    return loss_a + loss_v


def _critic_mean(model: RouterModel, latents) -> Tensor:
    """Mean critic output over all patch rows of one or more latent tensors."""
    if isinstance(latents, Tensor):
        latents = [latents]
    total_rows = sum(t.shape[0] for t in latents)
    acc = None
    for t in latents:
        s = sum_(model.critic(t))
        acc = s if acc is None else acc + s
    return acc / float(total_rows)


def adversarial_losses(model: RouterModel, real_latents, translated_latents):
    """Wasserstein losses: (critic_loss, generator_loss).

    critic_loss = E[critic(translated)] - E[critic(real)]; the generator
    loss is -E[critic(translated)]. Pass detached latents for the critic's
    own update step.
    """
    fake = _critic_mean(model, translated_latents)
    real = _critic_mean(model, real_latents)
    return sub(fake, real), neg(fake)


def clip_critic(model: RouterModel) -> None:
    c = model.cfg.c_clip
    for p in model.critic_parameters():
        np.clip(p.data, -c, c, out=p.data)


def total_pretrain_loss(loss_c: Tensor, loss_r: Tensor, loss_adv: Tensor,
                        weights=(0.01, 1.0, 0.1)) -> Tensor:
    """Weighted sum of the three pretraining losses."""
    w_c, w_r, w_adv = weights
    if min(w_c, w_r, w_adv) < 0:
        raise ValueError(f"loss weights must be nonnegative, got {weights}")
    return w_c * loss_c + w_r * loss_r + w_adv * loss_adv


# -------------------------------------------------------------- checkpoints


def save_router(model: RouterModel, path) -> None:
    params = {name: p.data for name, p in model.named_parameters()}
    ckpt.write_checkpoint(path, ROUTER_MAGIC, asdict(model.cfg), params)


def load_router(path, expect: RouterConfig | None = None) -> RouterModel:
    config, params = ckpt.read_checkpoint(path, ROUTER_MAGIC)
    if expect is not None:
        ckpt.check_architecture(config, asdict(expect), "router")
    cfg = RouterConfig(**config)
    model = RouterModel(cfg, generator(0))
    model.load_state(params)
    return model
