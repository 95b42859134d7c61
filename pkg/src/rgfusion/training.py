"""Two-phase training: router pretraining on clean data, then recognizer
fine-tuning with the router frozen.

Fine-tuning keeps the backbone encoder frozen for the first
tau = round(tau_fraction * steps) steps by excluding its parameters from the
optimizer (requires_grad off, so their gradients are never even produced and
their Adam moments start fresh at the unfreeze step). The router is never
trainable here; a parameter checksum taken before the loop must match after
it, otherwise the run aborts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import fusion as fus
from . import router as rt
from .autodiff import backward, reset_tape
from .data import NOISE_TYPES, mix_noise
from .nn import set_requires_grad
from .optim import Adam
from .seeds import derive, generator

NOISE_CONDITIONS = ("clean", "noisy_0db_random")


@dataclass
class TrainConfig:
    phase: str = "pretrain_router"   # pretrain_router | finetune
    steps: int = 500
    batch_size: int = 8
    lr: float = 1e-3
    warmup_steps: int | None = None  # None -> 5% of steps
    loss_weights: tuple = (0.01, 1.0, 0.1)   # (contrastive, reconstruction, adversarial)
    tau_fraction: float = 0.5        # encoder-freeze span of fine-tuning
    noise_condition: str = "clean"   # clean | noisy_0db_random
    seed: int = 0

    def resolved_warmup(self) -> int:
        if self.warmup_steps is None:
            return round(0.05 * self.steps)
        return self.warmup_steps

    def validate(self):
        if self.phase not in ("pretrain_router", "finetune"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.loss_weights) != 3 or min(self.loss_weights) < 0:
            raise ValueError(f"bad loss weights {self.loss_weights}")
        if not (0.0 <= self.tau_fraction <= 1.0):
            raise ValueError("tau_fraction must be in [0,1]")
        if self.noise_condition not in NOISE_CONDITIONS:
            raise ValueError(f"unknown noise condition {self.noise_condition!r}")


def model_checksum(model) -> str:
    """SHA-256 over parameter names and exact data bytes."""
    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


def write_curve(path, rows, columns) -> None:
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in rows:
            f.write(",".join(
                repr(float(row[c])) if isinstance(row[c], float) else str(row[c])
                for c in columns
            ) + "\n")


def _check_finite(step, named_values):
    bad = {k: v for k, v in named_values.items() if not np.isfinite(v)}
    if bad:
        raise RuntimeError(f"training diverged at step {step}: {bad}")


# ------------------------------------------------------------- pretraining


def pretrain_router(train_samples, cfg: TrainConfig, router_cfg: rt.RouterConfig,
                    on_step=None, include_adv: bool | None = None):
    """Pretrain the reliability router on clean paired data.

    Alternates one critic update (on detached latents, weights clipped right
    after) with one generator update per step. Returns (model, curve rows).

    include_adv controls whether the adversarial term enters the generator
    loss graph; by default it is dropped exactly when its weight is zero, so
    a zero-weight run is structurally the excluded-path run.
    """
    cfg.validate()
    w_c, w_r, w_adv = cfg.loss_weights
    if include_adv is None:
        include_adv = w_adv != 0.0
    model = rt.RouterModel(router_cfg, generator(cfg.seed, "router-init"))
    if cfg.steps == 0:
        return model, []
    warmup = cfg.resolved_warmup()
    opt_gen = Adam(model.generator_parameters(), cfg.lr, warmup)
    opt_critic = Adam(model.critic_parameters(), cfg.lr, warmup)
    batch_rng = generator(cfg.seed, "pretrain-batches")
    n = len(train_samples)
    curve = []

    for step in range(cfg.steps):
        reset_tape()
        model.zero_grad()
        idxs = batch_rng.integers(0, n, size=cfg.batch_size)

        loss_c = None
        loss_r = None
        real, translated = [], []
        for j, i in enumerate(idxs):
            s = train_samples[i]
            xa_p = rt.patchify(s.audio, router_cfg.patch_len)
            xv_p = rt.patchify(s.video, router_cfg.patch_len)
            a, v = rt.encode(model, xa_p, xv_p)
            v_hat, a_hat = rt.translate(model, a, v)
            lc = rt.contrastive_loss(a, v)
            lr_ = rt.reconstruction_loss(
                model, xa_p, xv_p, seed=derive(cfg.seed, "mask", step, j),
                latents=(a, v, v_hat, a_hat),
            )
            loss_c = lc if loss_c is None else loss_c + lc
            loss_r = lr_ if loss_r is None else loss_r + lr_
            real.extend([v, a])
            translated.extend([v_hat, a_hat])
        loss_c = loss_c / float(cfg.batch_size)
        loss_r = loss_r / float(cfg.batch_size)

        # critic step on detached latents, then clip back into the box
        critic_loss, _ = rt.adversarial_losses(
            model, [t.detach() for t in real], [t.detach() for t in translated]
        )
        backward(critic_loss)
        opt_critic.step()
        rt.clip_critic(model)
        opt_critic.zero_grad()

        # generator step against the updated critic
        _, gen_adv = rt.adversarial_losses(model, real, translated)
        if include_adv:
            total = rt.total_pretrain_loss(loss_c, loss_r, gen_adv, cfg.loss_weights)
        else:
            total = w_c * loss_c + w_r * loss_r
        backward(total)
        opt_gen.step()
        opt_gen.zero_grad()
        model.zero_grad()

        lc_v, lr_v, ladv_v = float(loss_c.data), float(loss_r.data), float(gen_adv.data)
        row = {
            "step": step,
            "loss_total": w_c * lc_v + w_r * lr_v + w_adv * ladv_v,
            "loss_c": lc_v,
            "loss_r": lr_v,
            "loss_adv": ladv_v,
        }
        _check_finite(step, row)
        curve.append(row)
        if on_step is not None:
            on_step(step, model, row)

    reset_tape()
    return model, curve


PRETRAIN_COLUMNS = ("step", "loss_total", "loss_c", "loss_r", "loss_adv")
FINETUNE_COLUMNS = ("step", "ce", "token_acc")


# -------------------------------------------------------------- fine-tuning


def _finetune_audio(sample, others, cfg, step, j):
    if cfg.noise_condition == "clean":
        return sample.audio
    rng = generator(cfg.seed, "noise-pick", step, j)
    ntype = NOISE_TYPES[int(rng.integers(0, len(NOISE_TYPES)))]
    pool = others if ntype == "babble" else None
    return mix_noise(sample.audio, ntype, 0.0,
                     derive(cfg.seed, "noise", step, j), babble_pool=pool)


def finetune(train_samples, router_model: rt.RouterModel, cfg: TrainConfig,
             fusion_cfg: fus.FusionConfig, on_step=None):
    """Fine-tune a recognizer against a frozen router. Returns (model, curve).

    The gate variant follows fusion_cfg.variant ("ours" uses s_v, "sa" and
    "l2" the ablation scores; "self_attn" never consults the router).
    """
    cfg.validate()
    fusion_cfg.validate()
    set_requires_grad(router_model.parameters(), False)
    router_sum_before = model_checksum(router_model)

    model = fus.FusionModel(fusion_cfg, generator(cfg.seed, "fusion-init"))
    tau = round(cfg.tau_fraction * cfg.steps)
    encoder_params = model.encoder_parameters()
    encoder_ids = {id(p) for p in encoder_params}
    head_params = [p for p in model.parameters() if id(p) not in encoder_ids]
    set_requires_grad(encoder_params, False)
    opt = Adam(head_params, cfg.lr, cfg.resolved_warmup())

    uses_gate = fusion_cfg.variant != "self_attn"
    gate_variant = fusion_cfg.variant if fusion_cfg.variant in rt.GATE_VARIANTS else "sv"
    if fusion_cfg.variant == "ours":
        gate_variant = "sv"
    batch_rng = generator(cfg.seed, "finetune-batches")
    n = len(train_samples)
    curve = []

    for step in range(cfg.steps):
        if step == tau and tau < cfg.steps:
            # unfreeze the backbone with fresh Adam moments
            set_requires_grad(encoder_params, True)
            opt.add_params(encoder_params)
        reset_tape()
        opt.zero_grad()
        idxs = batch_rng.integers(0, n, size=cfg.batch_size)

        loss = None
        correct = 0
        total_tok = 0
        for j, i in enumerate(idxs):
            s = train_samples[i]
            others = [t.audio for k, t in enumerate(train_samples) if k != i]
            audio = _finetune_audio(s, others, cfg, step, j)
            e_av = fus.encode_backbone(model, audio, s.video, mask_audio=False)
            if uses_gate:
                e_v = fus.encode_backbone(model, audio, s.video, mask_audio=True)
                scores = rt.score(router_model, audio, s.video)
                lam = rt.local_gate(scores, len(s.tokens) + 1, gate_variant)
            else:
                e_v, lam = None, None
            ce, ok, n_tok = fus.sequence_loss(model, s.tokens, e_av, e_v, lam)
            loss = ce if loss is None else loss + ce
            correct += ok
            total_tok += n_tok
        loss = loss / float(cfg.batch_size)
        backward(loss)
        opt.step()
        opt.zero_grad()

        row = {"step": step, "ce": float(loss.data),
               "token_acc": correct / total_tok}
        _check_finite(step, row)
        curve.append(row)
        if on_step is not None:
            on_step(step, model, row)

    reset_tape()
    if model_checksum(router_model) != router_sum_before:
        raise RuntimeError("frozen router parameters changed during fine-tuning")
    return model, curve
