"""Waveforms, STFT, spectral distance, WAV I/O and the synthetic corpus."""
from __future__ import annotations

import json
import struct
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, UserError, WavError

FRAME_HOP = 32


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ShapeError("waveform must be a non-empty 1-D array")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if np.abs(s).max() > 1.0:
            raise ValueError("waveform samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    fft_bins: int = 1024
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        n = self.fft_bins
        if n < 2 or n & (n - 1):
            raise ValueError(f"fft_bins must be a power of two, got {n}")
        if not 0 < self.hop <= n:
            raise ValueError(f"hop must be in (0, fft_bins], got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_freqs(self):
        return self.fft_bins // 2 + 1

    def n_frames(self, length):
        return 1 + (length - self.fft_bins) // self.hop


def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _samples(w):
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)


def _check_length(length, cfg):
    if length < cfg.fft_bins:
        raise ShapeError(f"signal of {length} samples is shorter than one {cfg.fft_bins}-bin frame")


def stft_magnitude(w, cfg: StftConfig = StftConfig()):
    """|STFT| as (frames, fft_bins // 2 + 1). Frames start at 0 without padding."""
    x = _samples(w)
    _check_length(x.shape[-1], cfg)
    fr = ad.frames(x, cfg.fft_bins, cfg.hop)
    return np.abs(np.fft.rfft(fr * hann(cfg.fft_bins), axis=-1))


_DFT_CACHE = {}


def _dft_matrices(n):
    if n not in _DFT_CACHE:
        k = np.arange(n // 2 + 1)
        t = np.arange(n)
        ang = 2.0 * np.pi * np.outer(t, k) / n
        w = hann(n)[:, None]
        _DFT_CACHE[n] = (w * np.cos(ang), -w * np.sin(ang))
    return _DFT_CACHE[n]


def stft_magnitude_ad(x, cfg: StftConfig):
    """Differentiable |STFT| of (..., L) signals via explicit DFT matrices."""
    _check_length(np.shape(ad.value(x))[-1], cfg)
    cos_m, sin_m = _dft_matrices(cfg.fft_bins)
    fr = ad.frames(x, cfg.fft_bins, cfg.hop)
    return ad.magnitude(ad.matmul(fr, cos_m), ad.matmul(fr, sin_m))


def l2_spectral_distance(x, x_hat, cfg: StftConfig = StftConfig()):
    """|| |STFT(x)| - |STFT(x_hat)| ||_2 divided by the number of frames."""
    if isinstance(x, Waveform) and isinstance(x_hat, Waveform) and x.sample_rate != x_hat.sample_rate:
        raise ShapeError("sample rates differ")
    a, b = _samples(x), _samples(x_hat)
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    ma, mb = stft_magnitude(a, cfg), stft_magnitude(b, cfg)
    return float(np.sqrt(np.sum((ma - mb) ** 2)) / ma.shape[0])


# --- WAV ------------------------------------------------------------------

PCM_SCALE = 32768.0


def quantize(samples):
    return np.clip(np.round(np.asarray(samples) * PCM_SCALE), -32768, 32767).astype("<i2")


def wav_write(path, w: Waveform):
    """16-bit PCM mono with the canonical 44-byte header."""
    path = Path(path)
    try:
        with open(path, "wb") as fh, wave.open(fh, "wb") as f:
            f.setnchannels(1)
            f.setsampwidth(2)
            f.setframerate(int(w.sample_rate))
            f.writeframes(quantize(w.samples).tobytes())
    except OSError as exc:
        raise WavError("io", f"cannot write {path}: {exc}") from exc


def wav_read(path) -> Waveform:
    path = Path(path)
    if not path.exists():
        raise WavError("missing", f"{path} does not exist")
    try:
        with wave.open(str(path), "rb") as f:
            channels, width, rate, n = f.getnchannels(), f.getsampwidth(), f.getframerate(), f.getnframes()
            if channels != 1:
                raise WavError("unsupported-format", f"{path}: {channels} channels, only mono is supported")
            if width != 2:
                raise WavError("unsupported-format", f"{path}: {8 * width}-bit samples, only 16-bit PCM is supported")
            data = f.readframes(n)
    except EOFError as exc:
        raise WavError("truncated", f"{path}: header ends early") from exc
    except wave.Error as exc:
        msg = str(exc)
        code = "unsupported-format" if "unknown format" in msg else "malformed-header"
        raise WavError(code, f"{path}: {msg}") from exc
    except struct.error as exc:
        raise WavError("truncated", f"{path}: {exc}") from exc
    if len(data) != 2 * n:
        raise WavError("truncated", f"{path}: header declares {n} frames, file holds {len(data) // 2}")
    if n == 0:
        raise WavError("empty", f"{path}: no samples")
    if rate <= 0:
        raise WavError("malformed-header", f"{path}: sample rate {rate}")
    samples = np.frombuffer(data, dtype="<i2").astype(np.float64) / PCM_SCALE
    return Waveform(samples, rate)


# --- conditioning frames --------------------------------------------------

def conditioning_frames(samples, hop=FRAME_HOP):
    """Per-hop (log-energy / 10, zero-crossing rate), shape (ceil(L / hop), 2)."""
    x = np.asarray(samples, dtype=np.float64)
    n = -(-x.size // hop)
    padded = np.zeros(n * hop)
    padded[:x.size] = x
    fr = padded.reshape(n, hop)
    energy = np.log(np.mean(fr ** 2, axis=1) + 1e-6) / 10.0
    signs = np.signbit(fr)
    zcr = np.count_nonzero(signs[:, 1:] != signs[:, :-1], axis=1) / (hop - 1)
    return np.stack([energy, zcr], axis=1)


def upsample_frames(frames, length, hop=FRAME_HOP):
    """Nearest-neighbour repetition of frame features to ``length`` steps."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] * hop < length:
        raise ShapeError(f"{frames.shape[0]} frames cannot cover {length} samples")
    return np.repeat(frames, hop, axis=0)[:length]


def cond_for(samples, hop=FRAME_HOP):
    x = _samples(samples)
    return upsample_frames(conditioning_frames(x, hop), x.size, hop)


# --- synthetic corpus -----------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    n_clips: int = 50
    sample_rates: tuple = (1000, 2000, 3000, 4000)
    min_len: int = 1024
    max_len: int = 2048
    min_sines: int = 2
    max_sines: int = 3
    jitter: float = 0.1
    noise: float = 0.02
    peak: float = 0.95
    min_separation: float = 0.04
    frame_hop: int = FRAME_HOP

    def __post_init__(self):
        if self.n_clips < 1:
            raise UserError("corpus needs at least one clip")
        if not 0 < self.min_len <= self.max_len:
            raise UserError("clip lengths must satisfy 0 < min_len <= max_len")
        if not 1 <= self.min_sines <= self.max_sines:
            raise UserError("sine counts must satisfy 1 <= min_sines <= max_sines")


@dataclass
class Clip:
    clip_id: str
    seed: int
    waveform: Waveform
    freqs: list = field(default_factory=list)

    @property
    def cond(self):
        return cond_for(self.waveform.samples)

    def record(self):
        return {
            "clip_id": self.clip_id,
            "seed": self.seed,
            "n_samples": len(self.waveform),
            "sample_rate": self.waveform.sample_rate,
            "duration": self.waveform.duration,
            "freqs": self.freqs,
            "file": f"{self.clip_id}.wav",
        }


def clip_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def _pick_freqs(rng, count, sr, min_sep):
    while True:
        f = np.sort(rng.uniform(0.05, 0.35, size=count))
        if count == 1 or np.min(np.diff(f)) >= min_sep:
            return [float(v * sr) for v in f]


def make_clip(cfg: CorpusConfig, seed, clip_id):
    """Sinusoid mixture plus a bimodal per-sample jitter (+-jitter, small noise)."""
    rng = np.random.default_rng(seed)
    sr = int(rng.choice(cfg.sample_rates))
    length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    count = int(rng.integers(cfg.min_sines, cfg.max_sines + 1))
    freqs = _pick_freqs(rng, count, sr, cfg.min_separation)
    amps = rng.uniform(0.3, 1.0, size=count)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=count)
    t = np.arange(length) / sr
    x = np.sum(amps[:, None] * np.sin(2.0 * np.pi * np.outer(freqs, t) + phases[:, None]), axis=0)
    x = x / np.max(np.abs(x)) * 0.6
    sign = np.where(rng.random(length) < 0.5, -1.0, 1.0)
    x = x + cfg.jitter * sign + cfg.noise * rng.standard_normal(length)
    x = x * (cfg.peak / np.max(np.abs(x)))
    return Clip(clip_id, int(seed), Waveform(np.clip(x, -1.0, 1.0), sr), freqs)


def make_synthetic_corpus(cfg: CorpusConfig, seed):
    return [make_clip(cfg, clip_seed(seed, i), f"clip_{i:04d}") for i in range(cfg.n_clips)]


def write_corpus(clips, out_dir, cfg: CorpusConfig | None = None, seed=None):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for clip in clips:
            wav_write(out / f"{clip.clip_id}.wav", clip.waveform)
        with open(out / "manifest.jsonl", "w") as f:
            if cfg is not None:
                f.write(json.dumps({"corpus": asdict(cfg), "seed": seed}, sort_keys=True) + "\n")
            for clip in clips:
                f.write(json.dumps(clip.record(), sort_keys=True) + "\n")
    except OSError as exc:
        raise UserError(f"cannot write corpus to {out}: {exc}") from exc
    return out / "manifest.jsonl"


def read_corpus(corpus_dir):
    """Load clips listed in ``manifest.jsonl``; samples come from the WAV files."""
    root = Path(corpus_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.exists():
        raise UserError(f"no manifest.jsonl in {root}")
    clips = []
    for line in manifest.read_text().splitlines():
        rec = json.loads(line)
        if "clip_id" not in rec:
            continue
        clips.append(Clip(rec["clip_id"], rec["seed"], wav_read(root / rec["file"]), rec["freqs"]))
    if not clips:
        raise UserError(f"corpus {root} lists no clips")
    return clips
