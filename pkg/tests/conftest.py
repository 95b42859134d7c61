"""Shared fixtures.

The reference-scale fixtures (corpus, pretrained router, fine-tuned
recognizers) are session-scoped and lazy: running a single fast test file
never triggers the minutes-long training runs.
"""

import numpy as np
import pytest

from rgfusion import config as cfgmod
from rgfusion import data as dat
from rgfusion import fusion as fus
from rgfusion import router as rt
from rgfusion import training as tr
from rgfusion.seeds import derive, generator


@pytest.fixture(scope="session")
def reference_resolved():
    """Fully-resolved empty config: the reference run."""
    return cfgmod.resolve({})


@pytest.fixture(scope="session")
def reference_corpus(reference_resolved):
    return dat.gen_corpus(cfgmod.corpus_config(reference_resolved))


@pytest.fixture(scope="session")
def reference_router(reference_resolved, reference_corpus):
    """(model, curve) from the reference pretraining recipe; shared by the
    score-sweep, end-to-end, and curve-shape tests. Takes a few minutes."""
    train, _ = reference_corpus
    return tr.pretrain_router(
        train,
        cfgmod.pretrain_config(reference_resolved),
        cfgmod.router_config(reference_resolved),
    )


def finetune_reference(resolved, corpus, router_model, variant, run_index):
    """One clean-condition fine-tune at the reference scale. The seed fans
    out from the config's fine-tune seed by (variant, condition, index),
    mirroring the CLI's --seed-offset convention."""
    train, _ = corpus
    seed = derive(cfgmod.section_seed(resolved, "finetune"), "finetune",
                  variant, "clean", run_index)
    train_cfg = cfgmod.finetune_config(resolved, "clean", seed=seed)
    return tr.finetune(train, router_model, train_cfg,
                       cfgmod.fusion_config(resolved, variant))


@pytest.fixture(scope="session")
def finetuned_seed0(reference_resolved, reference_corpus, reference_router):
    """{variant: (model, curve)} for the first fine-tuning seed."""
    router_model, _ = reference_router
    return {
        variant: finetune_reference(reference_resolved, reference_corpus,
                                    router_model, variant, 0)
        for variant in ("ours", "self_attn")
    }


# ------------------------------------------------------------- small-scale


TINY_CORPUS = dict(vocab_size=12, seq_len_min=2, seq_len_max=4,
                   frames_per_token=2, audio_dim=4, video_dim=4,
                   video_classes=4, jitter=0.05, n_train=16, n_test=4, seed=11)


def tiny_router_config():
    return rt.RouterConfig(audio_dim=4, video_dim=4, dim=8, layers=1, heads=2,
                           ffn_hidden=16, patch_len=2, critic_hidden=8)


def tiny_fusion_config(variant="ours"):
    return fus.FusionConfig(vocab_size=12, audio_dim=4, video_dim=4, dim=16,
                            enc_layers=1, dec_layers=1, heads=2, ffn_hidden=32,
                            variant=variant)


@pytest.fixture(scope="session")
def tiny_corpus():
    cfg = dat.CorpusConfig(**TINY_CORPUS)
    train, test = dat.gen_corpus(cfg)
    return cfg, train, test


@pytest.fixture(scope="session")
def tiny_router():
    """Untrained router at toy width, for shape and plumbing tests."""
    return rt.RouterModel(tiny_router_config(), generator(77))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
