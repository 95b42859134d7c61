"""Run configuration: strict JSON schema with full-default resolution.

Unknown keys anywhere are rejected, every violation is reported (not just
the first), and the resolved form (all defaults expanded) is what commands
write next to their outputs.
"""

from __future__ import annotations

import json

from .data import NOISE_TYPES, CorpusConfig
from .fusion import FusionConfig
from .router import RouterConfig
from .training import TrainConfig


class ConfigError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            f"{len(self.violations)} violation(s): " + "; ".join(self.violations)
        )


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return _is_int(v) or isinstance(v, float)


_OPT_INT = (lambda v: v is None or _is_int(v), "integer or null")

_SCHEMA = {
    "seed": {"": (_is_int, "integer")},
    "corpus": {
        "seed": _OPT_INT,
        "vocab_size": (_is_int, "integer"),
        "seq_len_min": (_is_int, "integer"),
        "seq_len_max": (_is_int, "integer"),
        "frames_per_token": (_is_int, "integer"),
        "audio_dim": (_is_int, "integer"),
        "video_dim": (_is_int, "integer"),
        "video_classes": (_is_int, "integer"),
        "jitter": (_is_num, "number"),
        "n_train": (_is_int, "integer"),
        "n_test": (_is_int, "integer"),
    },
    "router": {
        "dim": (_is_int, "integer"),
        "layers": (_is_int, "integer"),
        "heads": (_is_int, "integer"),
        "ffn_hidden": (_is_int, "integer"),
        "patch_len": (_is_int, "integer"),
        "mask_ratio": (_is_num, "number"),
        "critic_hidden": (_is_int, "integer"),
        "c_clip": (_is_num, "number"),
    },
    "fusion": {
        "dim": (_is_int, "integer"),
        "enc_layers": (_is_int, "integer"),
        "dec_layers": (_is_int, "integer"),
        "heads": (_is_int, "integer"),
        "ffn_hidden": (_is_int, "integer"),
    },
    "pretrain": {
        "seed": _OPT_INT,
        "steps": (_is_int, "integer"),
        "batch_size": (_is_int, "integer"),
        "lr": (_is_num, "number"),
        "warmup_steps": (lambda v: v is None or _is_int(v), "integer or null"),
        "loss_weights": (
            lambda v: isinstance(v, list) and len(v) == 3 and all(_is_num(x) for x in v),
            "list of 3 numbers",
        ),
    },
    "finetune": {
        "seed": _OPT_INT,
        "steps": (_is_int, "integer"),
        "batch_size": (_is_int, "integer"),
        "lr": (_is_num, "number"),
        "warmup_steps": (lambda v: v is None or _is_int(v), "integer or null"),
        "tau_fraction": (_is_num, "number"),
    },
    "eval": {
        "seed": _OPT_INT,
        "noise_types": (
            lambda v: isinstance(v, list) and v
            and all(x in NOISE_TYPES for x in v),
            f"list drawn from {list(NOISE_TYPES)}",
        ),
        "snrs_db": (
            lambda v: isinstance(v, list) and v and all(_is_num(x) for x in v),
            "nonempty list of numbers",
        ),
        "max_decode_len": (_is_int, "integer"),
    },
}

# Defaults reproduce the desk-scale reference run recorded in the README:
# an empty config resolves to exactly that pipeline. Section seeds of null
# fall back to the global seed; the corpus and eval seeds are pinned so the
# reference corpus and noise draws stay fixed while training seeds vary.
_DEFAULTS = {
    "seed": 0,
    "corpus": {
        "seed": 1, "vocab_size": 32, "seq_len_min": 3, "seq_len_max": 6,
        "frames_per_token": 4, "audio_dim": 8, "video_dim": 8,
        "video_classes": 10, "jitter": 0.05, "n_train": 768, "n_test": 96,
    },
    "router": {
        "dim": 32, "layers": 2, "heads": 4, "ffn_hidden": 128,
        "patch_len": 4, "mask_ratio": 0.5, "critic_hidden": 32, "c_clip": 0.01,
    },
    "fusion": {
        "dim": 64, "enc_layers": 2, "dec_layers": 2, "heads": 4,
        "ffn_hidden": 256,
    },
    "pretrain": {
        "seed": None, "steps": 2000, "batch_size": 8, "lr": 3e-3,
        "warmup_steps": None, "loss_weights": [0.01, 1.0, 0.1],
    },
    "finetune": {
        "seed": None, "steps": 1500, "batch_size": 8, "lr": 1e-3,
        "warmup_steps": None, "tau_fraction": 0.5,
    },
    "eval": {
        "seed": 3,
        "noise_types": ["stationary", "babble", "tonal"],
        "snrs_db": [10.0, 5.0, 0.0],
        "max_decode_len": 10,
    },
}


def validate(raw: dict) -> list:
    """Collect every schema violation in a raw config dict."""
    problems = []
    if not isinstance(raw, dict):
        return ["top level must be a JSON object"]
    for key, value in raw.items():
        if key not in _SCHEMA:
            problems.append(f"unknown key {key!r}")
            continue
        section = _SCHEMA[key]
        if "" in section:
            check, want = section[""]
            if not check(value):
                problems.append(f"{key}: expected {want}, got {value!r}")
            continue
        if not isinstance(value, dict):
            problems.append(f"{key}: expected an object")
            continue
        for sub, sval in value.items():
            if sub not in section:
                problems.append(f"{key}.{sub}: unknown key")
                continue
            check, want = section[sub]
            if not check(sval):
                problems.append(f"{key}.{sub}: expected {want}, got {sval!r}")
    return problems


def resolve(raw: dict) -> dict:
    """Validate and expand a raw config to its fully-defaulted form."""
    problems = validate(raw)
    if problems:
        raise ConfigError(problems)
    out = {"seed": raw.get("seed", _DEFAULTS["seed"])}
    for section, defaults in _DEFAULTS.items():
        if section == "seed":
            continue
        merged = dict(defaults)
        merged.update(raw.get(section, {}))
        out[section] = merged
    return out


def load(path) -> dict:
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([f"invalid JSON: {e}"]) from e
    return resolve(raw)


def dumps_resolved(resolved: dict) -> str:
    return json.dumps(resolved, sort_keys=True, indent=2) + "\n"


# ------------------------------------------------- dataclass constructors


def section_seed(resolved: dict, section: str) -> int:
    """The section's own seed, falling back to the global one when null."""
    s = resolved[section].get("seed")
    return resolved["seed"] if s is None else s


def corpus_config(resolved: dict) -> CorpusConfig:
    fields = dict(resolved["corpus"])
    fields["seed"] = section_seed(resolved, "corpus")
    return CorpusConfig(**fields)


def router_config(resolved: dict) -> RouterConfig:
    c = resolved["corpus"]
    return RouterConfig(audio_dim=c["audio_dim"], video_dim=c["video_dim"],
                        **resolved["router"])


def fusion_config(resolved: dict, variant: str) -> FusionConfig:
    c = resolved["corpus"]
    return FusionConfig(vocab_size=c["vocab_size"], audio_dim=c["audio_dim"],
                        video_dim=c["video_dim"], variant=variant,
                        **resolved["fusion"])


def pretrain_config(resolved: dict) -> TrainConfig:
    p = resolved["pretrain"]
    return TrainConfig(phase="pretrain_router", steps=p["steps"],
                       batch_size=p["batch_size"], lr=p["lr"],
                       warmup_steps=p["warmup_steps"],
                       loss_weights=tuple(p["loss_weights"]),
                       seed=section_seed(resolved, "pretrain"))


def finetune_config(resolved: dict, noise_condition: str,
                    seed: int | None = None) -> TrainConfig:
    p = resolved["finetune"]
    return TrainConfig(phase="finetune", steps=p["steps"],
                       batch_size=p["batch_size"], lr=p["lr"],
                       warmup_steps=p["warmup_steps"],
                       tau_fraction=p["tau_fraction"],
                       noise_condition=noise_condition,
                       seed=section_seed(resolved, "finetune") if seed is None else seed)
