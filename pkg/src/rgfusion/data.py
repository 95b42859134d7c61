"""Synthetic paired audio/video token corpus and SNR-exact noise mixing.

Each utterance is a token sequence rendered into two frame-synchronous
feature streams: every token emits `frames_per_token` consecutive frames of
its prototype row plus i.i.d. Gaussian jitter. Audio prototypes are unique
per token; video prototypes are many-to-one (`video_classes` distinct rows,
a viseme-style mapping), so video narrows a token down to its class but
cannot fully identify it. Noise is only ever mixed into audio; for fixed
tokens and seed the video stream is identical across noise conditions.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .seeds import derive, generator

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
CONTENT_START = 3

NOISE_TYPES = ("stationary", "babble", "tonal")
_NOISE_CODE = {"none": 0, "stationary": 1, "babble": 2, "tonal": 3}
_NOISE_NAME = {v: k for k, v in _NOISE_CODE.items()}

# fixed tonal frequencies, cycles per frame
_TONE_FREQS = (0.07, 0.13, 0.29)

MAGIC = b"RGFC"
VERSION = 1


class CorpusFormatError(ValueError):
    pass


class CorpusVersionError(ValueError):
    pass


@dataclass
class CorpusConfig:
    vocab_size: int = 32          # includes PAD/BOS/EOS
    seq_len_min: int = 3
    seq_len_max: int = 6
    frames_per_token: int = 4
    audio_dim: int = 8
    video_dim: int = 8
    video_classes: int = 10       # distinct video prototype rows
    jitter: float = 0.05
    n_train: int = 96
    n_test: int = 48
    seed: int = 0

    def validate(self):
        if self.vocab_size <= CONTENT_START:
            raise ValueError(f"vocab_size must exceed {CONTENT_START}")
        if not (1 <= self.seq_len_min <= self.seq_len_max):
            raise ValueError("need 1 <= seq_len_min <= seq_len_max")
        if self.frames_per_token < 1:
            raise ValueError("frames_per_token must be >= 1")
        if min(self.audio_dim, self.video_dim) < 1:
            raise ValueError("feature dims must be >= 1")
        if self.video_classes < 1:
            raise ValueError("video_classes must be >= 1")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("corpus split sizes must be >= 1")


@dataclass
class PairedSample:
    tokens: tuple          # content token ids, no BOS/EOS
    audio: np.ndarray      # [T, audio_dim] float64
    video: np.ndarray      # [T, video_dim] float64
    noise_type: str = "none"
    snr_db: float | None = None


def prototypes(cfg: CorpusConfig):
    """Per-token prototype matrices (P_audio unique rows, P_video rows shared
    within each video class). Rows for PAD/BOS/EOS stay zero."""
    rng = generator(cfg.seed, "prototypes")
    p_audio = np.zeros((cfg.vocab_size, cfg.audio_dim))
    p_video = np.zeros((cfg.vocab_size, cfg.video_dim))
    n_content = cfg.vocab_size - CONTENT_START
    p_audio[CONTENT_START:] = rng.normal(size=(n_content, cfg.audio_dim))
    class_rows = rng.normal(size=(cfg.video_classes, cfg.video_dim))
    for t in range(CONTENT_START, cfg.vocab_size):
        p_video[t] = class_rows[(t - CONTENT_START) % cfg.video_classes]
    return p_audio, p_video


def video_class(cfg: CorpusConfig, token: int) -> int:
    return (token - CONTENT_START) % cfg.video_classes


def _render(cfg, rng, p_audio, p_video) -> PairedSample:
    length = int(rng.integers(cfg.seq_len_min, cfg.seq_len_max + 1))
    tokens = tuple(
        int(t) for t in rng.integers(CONTENT_START, cfg.vocab_size, size=length)
    )
    t_frames = length * cfg.frames_per_token
    audio = np.repeat(p_audio[list(tokens)], cfg.frames_per_token, axis=0)
    video = np.repeat(p_video[list(tokens)], cfg.frames_per_token, axis=0)
    audio = audio + rng.normal(0.0, cfg.jitter, (t_frames, cfg.audio_dim))
    video = video + rng.normal(0.0, cfg.jitter, (t_frames, cfg.video_dim))
    return PairedSample(tokens=tokens, audio=audio, video=video)


def gen_corpus(cfg: CorpusConfig):
    """Generate (train, test) sample lists. Each sample comes from its own
    derived seed, so generation order does not matter."""
    cfg.validate()
    p_audio, p_video = prototypes(cfg)
    train = [
        _render(cfg, generator(cfg.seed, "train", i), p_audio, p_video)
        for i in range(cfg.n_train)
    ]
    test = [
        _render(cfg, generator(cfg.seed, "test", i), p_audio, p_video)
        for i in range(cfg.n_test)
    ]
    return train, test


# -------------------------------------------------------------- noise mixing


def _resample_rows(x: np.ndarray, t_out: int) -> np.ndarray:
    """Endpoint-aligned linear resample along the time axis."""
    t_in = x.shape[0]
    if t_in == t_out:
        return x.copy()
    if t_in == 1:
        return np.repeat(x, t_out, axis=0)
    pos = np.linspace(0.0, t_in - 1.0, t_out)
    src = np.arange(t_in, dtype=np.float64)
    return np.stack([np.interp(pos, src, x[:, f]) for f in range(x.shape[1])], axis=1)


def mix_noise(audio: np.ndarray, noise_type: str, snr_db: float, seed: int,
              babble_pool: list | None = None) -> np.ndarray:
    """Add noise of the given type at exactly `snr_db` (utterance-level
    mean-square power ratio).

    babble needs `babble_pool`: clean audio streams of other utterances,
    three of which are resampled to this length and averaged.
    """
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    audio = np.asarray(audio, dtype=np.float64)
    sig_power = float(np.mean(audio * audio))
    if sig_power == 0.0:
        raise ValueError("cannot set an SNR against zero-power audio")
    t_frames, dim = audio.shape
    rng = generator(seed)

    if noise_type == "stationary":
        noise = rng.standard_normal((t_frames, dim))
    elif noise_type == "babble":
        if babble_pool is None or len(babble_pool) < 3:
            raise ValueError("babble noise needs a pool of >= 3 other utterances")
        picks = rng.choice(len(babble_pool), size=3, replace=False)
        noise = np.mean(
            [_resample_rows(np.asarray(babble_pool[i], dtype=np.float64), t_frames)
             for i in picks],
            axis=0,
        )
    elif noise_type == "tonal":
        phases = rng.uniform(0.0, 2.0 * np.pi, (len(_TONE_FREQS), dim))
        t = np.arange(t_frames)[:, None]
        noise = np.zeros((t_frames, dim))
        for i, freq in enumerate(_TONE_FREQS):
            noise += np.sin(2.0 * np.pi * freq * t + phases[i][None, :])
    else:
        raise ValueError(f"unknown noise type {noise_type!r}")

    noise_power = float(np.mean(noise * noise))
    if noise_power == 0.0:
        raise ValueError(f"degenerate zero-power {noise_type} noise draw")
    noise = noise / math.sqrt(noise_power)
    gain = math.sqrt(sig_power / (10.0 ** (snr_db / 10.0)))
    return audio + gain * noise


def corrupt_corpus(samples, noise_type: str, snr_db: float, seed: int):
    """Noise-mixed copy of a sample list; babble draws from the other
    utterances of the same list. Video is left untouched."""
    audios = [s.audio for s in samples]
    out = []
    for i, s in enumerate(samples):
        pool = audios[:i] + audios[i + 1:] if noise_type == "babble" else None
        mixed = mix_noise(s.audio, noise_type, snr_db, derive(seed, "corrupt", i),
                          babble_pool=pool)
        out.append(PairedSample(s.tokens, mixed, s.video, noise_type, snr_db))
    return out


# ------------------------------------------------------------------- file IO


def _write_array(f, arr: np.ndarray):
    f.write(struct.pack("<II", *arr.shape))
    f.write(arr.astype("<f8").tobytes())


def _read_array(f) -> np.ndarray:
    rows, cols = struct.unpack("<II", f.read(8))
    buf = f.read(rows * cols * 8)
    if len(buf) != rows * cols * 8:
        raise CorpusFormatError("truncated array block")
    return np.frombuffer(buf, dtype="<f8").reshape(rows, cols).astype(np.float64)


def write_corpus(path, cfg: CorpusConfig, samples) -> None:
    blob = json.dumps(asdict(cfg), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(samples)))
        for s in samples:
            f.write(struct.pack("<I", len(s.tokens)))
            f.write(struct.pack(f"<{len(s.tokens)}I", *s.tokens))
            _write_array(f, s.audio)
            _write_array(f, s.video)
            f.write(struct.pack("<B", _NOISE_CODE[s.noise_type]))
            f.write(struct.pack("<d", math.nan if s.snr_db is None else s.snr_db))


def read_corpus(path):
    """Read a corpus file; returns (CorpusConfig, samples)."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CorpusFormatError(f"bad corpus magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise CorpusVersionError(f"unsupported corpus version {version}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        cfg = CorpusConfig(**json.loads(f.read(blob_len).decode()))
        (count,) = struct.unpack("<I", f.read(4))
        samples = []
        for _ in range(count):
            (n_tok,) = struct.unpack("<I", f.read(4))
            tokens = struct.unpack(f"<{n_tok}I", f.read(4 * n_tok))
            audio = _read_array(f)
            video = _read_array(f)
            (code,) = struct.unpack("<B", f.read(1))
            (snr,) = struct.unpack("<d", f.read(8))
            samples.append(PairedSample(
                tokens=tuple(int(t) for t in tokens),
                audio=audio,
                video=video,
                noise_type=_NOISE_NAME[code],
                snr_db=None if math.isnan(snr) else snr,
            ))
    return cfg, samples
