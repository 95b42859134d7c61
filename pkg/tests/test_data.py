"""Synthetic corpus generation, SNR-exact noise mixing, and corpus file IO."""

import math

import numpy as np
import pytest

from rgfusion.data import (
    CorpusConfig,
    CorpusFormatError,
    CorpusVersionError,
    NOISE_TYPES,
    corrupt_corpus,
    gen_corpus,
    mix_noise,
    prototypes,
    read_corpus,
    write_corpus,
)

from conftest import TINY_CORPUS


def measured_snr_db(mixed, clean):
    noise = mixed - clean
    return 10.0 * math.log10(float(np.mean(clean * clean))
                             / float(np.mean(noise * noise)))


# ---------------------------------------------------------------- corpus


def test_generation_deterministic(tiny_corpus):
    cfg, train, test = tiny_corpus
    train2, test2 = gen_corpus(CorpusConfig(**TINY_CORPUS))
    for a, b in zip(train + test, train2 + test2):
        assert a.tokens == b.tokens
        assert np.array_equal(a.audio, b.audio)
        assert np.array_equal(a.video, b.video)


def test_frame_count_arithmetic(tiny_corpus):
    cfg, train, test = tiny_corpus
    for s in train + test:
        assert s.audio.shape == (len(s.tokens) * cfg.frames_per_token, cfg.audio_dim)
        assert s.video.shape == (len(s.tokens) * cfg.frames_per_token, cfg.video_dim)
    # two tokens at four frames each span eight frames
    cfg4 = CorpusConfig(**{**TINY_CORPUS, "frames_per_token": 4,
                           "seq_len_min": 2, "seq_len_max": 2})
    t4, _ = gen_corpus(cfg4)
    assert all(s.audio.shape[0] == 8 for s in t4)


def test_class_means_match_prototypes(reference_resolved, reference_corpus):
    """Empirical per-token audio means stay within three standard errors of
    the prototype rows (the jitter is i.i.d. Gaussian)."""
    from rgfusion.config import corpus_config

    cfg = corpus_config(reference_resolved)
    train, _ = reference_corpus
    p_audio, _ = prototypes(cfg)
    frames = {}
    for s in train:
        f = cfg.frames_per_token
        for i, tok in enumerate(s.tokens):
            frames.setdefault(tok, []).append(s.audio[i * f:(i + 1) * f])
    checked = 0
    for tok, chunks in frames.items():
        x = np.concatenate(chunks)
        if x.shape[0] < 300:
            continue
        bound = 3.0 * cfg.jitter / math.sqrt(x.shape[0])
        assert np.abs(x.mean(axis=0) - p_audio[tok]).max() < bound
        checked += 1
    assert checked >= 10


def test_video_many_to_one(tiny_corpus):
    """Distinct tokens in the same video class render identical prototype
    rows, so video alone cannot identify the token."""
    cfg, train, _ = tiny_corpus
    _, p_video = prototypes(cfg)
    rows = {tuple(np.round(p_video[t], 12)) for t in range(3, cfg.vocab_size)}
    assert len(rows) == cfg.video_classes < cfg.vocab_size - 3


def test_validation_errors():
    with pytest.raises(ValueError):
        gen_corpus(CorpusConfig(**{**TINY_CORPUS, "vocab_size": 3}))
    with pytest.raises(ValueError):
        gen_corpus(CorpusConfig(**{**TINY_CORPUS, "seq_len_min": 5,
                                   "seq_len_max": 4}))
    with pytest.raises(ValueError):
        gen_corpus(CorpusConfig(**{**TINY_CORPUS, "frames_per_token": 0}))


# ------------------------------------------------------------ noise mixing


def test_snr_zero_db_power_equality(rng):
    audio = rng.normal(size=(20, 6))
    mixed = mix_noise(audio, "stationary", 0.0, seed=3)
    noise = mixed - audio
    sig = float(np.mean(audio * audio))
    noi = float(np.mean(noise * noise))
    assert abs(noi - sig) / sig < 1e-9


def test_snr_ten_db_power_ratio(rng):
    audio = rng.normal(size=(20, 6))
    mixed = mix_noise(audio, "tonal", 10.0, seed=3)
    noise = mixed - audio
    sig = float(np.mean(audio * audio))
    noi = float(np.mean(noise * noise))
    assert abs(noi - sig / 10.0) / (sig / 10.0) < 1e-9


def test_snr_extreme_leaves_audio(rng):
    audio = rng.normal(size=(12, 4))
    mixed = mix_noise(audio, "stationary", 200.0, seed=3)
    assert np.abs(mixed - audio).max() < 1e-8 * np.abs(audio).max()


def test_snr_exact_all_types(tiny_corpus, rng):
    _, train, _ = tiny_corpus
    audio = rng.normal(size=(18, 4))
    pool = [s.audio for s in train[:5]]
    for ntype in NOISE_TYPES:
        for snr in (0.0, 5.0, 10.0, 20.0):
            mixed = mix_noise(audio, ntype, snr, seed=9, babble_pool=pool)
            assert abs(measured_snr_db(mixed, audio) - snr) < 1e-6


def test_noise_errors(rng):
    audio = rng.normal(size=(6, 3))
    with pytest.raises(ValueError):
        mix_noise(np.zeros((6, 3)), "stationary", 0.0, seed=1)
    with pytest.raises(ValueError):
        mix_noise(audio, "purple", 0.0, seed=1)
    with pytest.raises(ValueError):
        mix_noise(audio, "stationary", math.inf, seed=1)
    with pytest.raises(ValueError):
        mix_noise(audio, "babble", 0.0, seed=1, babble_pool=[audio])


def test_corrupt_corpus_leaves_video(tiny_corpus):
    _, train, _ = tiny_corpus
    for ntype in NOISE_TYPES:
        noisy = corrupt_corpus(train, ntype, 0.0, seed=5)
        for a, b in zip(train, noisy):
            assert np.array_equal(a.video, b.video)
            assert not np.array_equal(a.audio, b.audio)
            assert b.noise_type == ntype and b.snr_db == 0.0


def test_corrupt_corpus_deterministic(tiny_corpus):
    _, train, _ = tiny_corpus
    a = corrupt_corpus(train, "babble", 5.0, seed=8)
    b = corrupt_corpus(train, "babble", 5.0, seed=8)
    for x, y in zip(a, b):
        assert np.array_equal(x.audio, y.audio)


# --------------------------------------------------------------- file IO


def test_corpus_round_trip(tiny_corpus, tmp_path):
    cfg, train, _ = tiny_corpus
    noisy = corrupt_corpus(train[:4], "tonal", 5.0, seed=2)
    path = tmp_path / "roundtrip.rgfc"
    write_corpus(path, cfg, train[:4] + noisy)
    cfg2, samples = read_corpus(path)
    assert cfg2 == cfg
    for a, b in zip(train[:4] + noisy, samples):
        assert a.tokens == b.tokens
        assert np.array_equal(a.audio, b.audio)
        assert np.array_equal(a.video, b.video)
        assert a.noise_type == b.noise_type and a.snr_db == b.snr_db


def test_corpus_write_bitwise_stable(tiny_corpus, tmp_path):
    cfg, train, _ = tiny_corpus
    p1, p2 = tmp_path / "a.rgfc", tmp_path / "b.rgfc"
    write_corpus(p1, cfg, train)
    write_corpus(p2, cfg, train)
    assert p1.read_bytes() == p2.read_bytes()


def test_corrupted_magic_rejected(tiny_corpus, tmp_path):
    cfg, train, _ = tiny_corpus
    path = tmp_path / "bad.rgfc"
    write_corpus(path, cfg, train[:2])
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(CorpusFormatError):
        read_corpus(path)


def test_unsupported_version_rejected(tiny_corpus, tmp_path):
    cfg, train, _ = tiny_corpus
    path = tmp_path / "ver.rgfc"
    write_corpus(path, cfg, train[:2])
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(CorpusVersionError):
        read_corpus(path)
