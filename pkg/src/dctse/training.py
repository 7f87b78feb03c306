"""Mixing, waveform loss, Adam and the training loop.

The training path runs analysis in float64 NumPy (the noisy input needs no
gradient), the network in torch, and a torch copy of the overlap-add
synthesis so the loss gradient reaches the mask through fixed linear maps.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .dct import build_dct_plan
from .errors import AbortStepError, InvalidArgumentError
from .spectral import FrameConfig, Waveform, analyze, hamming_window, wola_normalizer
from .unet import ParameterSet, UNetConfig, unet_backward, unet_forward

__all__ = [
    "AdamState",
    "MixSpec",
    "TrainConfig",
    "Enhancer",
    "Dataset",
    "mix_at_snr",
    "measured_snr_db",
    "wsdr_loss",
    "sdr_loss",
    "adam_step",
    "train_step",
    "train_epoch",
    "enhance",
    "load_manifest",
    "build_dataset",
]

log = logging.getLogger(__name__)


# ------------------------------------------------------------------- mixing


@dataclass(frozen=True)
class MixSpec:
    snr_db: float
    seed: int = 0
    clean_id: str = ""
    noise_id: str = ""

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise InvalidArgumentError("SNR must be finite")


def _fit_length(noise: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if noise.size >= n:
        start = int(rng.integers(0, noise.size - n + 1))
        return noise[start : start + n]
    offset = int(rng.integers(0, noise.size))
    reps = -(-(n + offset) // noise.size)
    return np.tile(noise, reps)[offset : offset + n]


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def measured_snr_db(clean, noise) -> float:
    return 10 * math.log10(_power(np.asarray(clean)) / _power(np.asarray(noise)))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int = 0) -> Tuple[Waveform, Waveform]:
    """Scale ``noise`` so the clean-to-noise power ratio is ``snr_db`` and add it.

    Noise longer than the clean signal is randomly cropped; shorter noise is
    tiled from a random offset. Both choices are fixed by ``seed``.
    Returns ``(noisy, scaled_noise)``.
    """
    MixSpec(snr_db, seed)
    if clean.sample_rate != noise.sample_rate:
        raise InvalidArgumentError("clean and noise sample rates differ")
    n = _fit_length(noise.samples, clean.samples.size, np.random.default_rng(seed))
    p_clean, p_noise = _power(clean.samples), _power(n)
    if p_clean == 0:
        raise InvalidArgumentError("clean signal is silent")
    if p_noise == 0:
        raise InvalidArgumentError("noise signal is silent")
    gain = math.sqrt(p_clean / (p_noise * 10 ** (snr_db / 10)))
    scaled = gain * n
    return Waveform(clean.samples + scaled, clean.sample_rate), Waveform(scaled, clean.sample_rate)


# --------------------------------------------------------------------- loss


def _dot(a, b):
    return (a * b).sum(-1)


def _cosine(a, b):
    num = _dot(a, b)
    den = _dot(a, a) ** 0.5 * _dot(b, b) ** 0.5
    if isinstance(den, torch.Tensor):
        return torch.where(den > 0, num / torch.where(den > 0, den, torch.ones_like(den)), torch.zeros_like(num))
    den = np.asarray(den, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def wsdr_loss(x, y, y_hat):
    """Weighted SDR loss over the last axis, in [-1, 1].

    With clean ``y``, noise ``z = x - y`` and estimated noise
    ``z_hat = x - y_hat``::

        alpha = |y|^2 / (|y|^2 + |z|^2)
        loss = -alpha cos(y, y_hat) - (1 - alpha) cos(z, z_hat)

    A cosine with a zero-norm factor counts as 0. Works on NumPy arrays and
    torch tensors; leading axes are treated as a batch.
    """
    if x.shape != y.shape or y.shape != y_hat.shape:
        raise InvalidArgumentError(f"length mismatch: {x.shape}, {y.shape}, {y_hat.shape}")
    z, z_hat = x - y, x - y_hat
    ey, ez = _dot(y, y), _dot(z, z)
    total = ey + ez
    if isinstance(total, torch.Tensor):
        alpha = torch.where(total > 0, ey / torch.where(total > 0, total, torch.ones_like(total)), torch.zeros_like(total))
    else:
        alpha = np.where(total > 0, ey / np.where(total > 0, total, 1.0), 0.0)
    return -alpha * _cosine(y, y_hat) - (1 - alpha) * _cosine(z, z_hat)


def sdr_loss(x, y, y_hat):
    """Negative signal-to-distortion ratio in dB (ablation alternative)."""
    err = _dot(y - y_hat, y - y_hat)
    if isinstance(err, torch.Tensor):
        return -10 * torch.log10(_dot(y, y) / (err + 1e-12))
    return -10 * np.log10(_dot(y, y) / (err + 1e-12))


LOSSES = {"wsdr": wsdr_loss, "sdr": sdr_loss}


# -------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.999
    eps: float = 1e-8
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise InvalidArgumentError("Adam betas must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidArgumentError("Adam eps must be positive")
        if self.lr < 0:
            raise InvalidArgumentError("learning rate must be non-negative")

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params: ParameterSet, grads: Optional[Dict[str, torch.Tensor]], state: AdamState) -> None:
    """Bias-corrected Adam update applied in place.

    Non-finite gradients raise :class:`AbortStepError` before anything is
    touched.
    """
    grads = params.grads if grads is None else grads
    names = params.trainable()
    for name in names:
        g = grads[name]
        if g.shape != params[name].shape:
            raise InvalidArgumentError(f"gradient layout mismatch for {name}")
        if not torch.isfinite(g).all():
            raise AbortStepError(f"non-finite gradient in {name}; step skipped")

    t = state.step + 1
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    with torch.no_grad():
        for name in names:
            g = grads[name]
            m = state.m.setdefault(name, torch.zeros_like(g))
            v = state.v.setdefault(name, torch.zeros_like(g))
            m.mul_(state.beta1).add_((1 - state.beta1) * g)
            v.mul_(state.beta2).add_((1 - state.beta2) * g * g)
            update = (m / c1) / ((v / c2).sqrt() + state.eps)
            params[name].sub_(state.lr * update)
    state.step = t
    params.bump()


# ------------------------------------------------------------------ model


@dataclass
class Enhancer:
    """A U-net and its parameters bound to a framing configuration."""

    unet: UNetConfig
    params: ParameterSet
    frame: FrameConfig = FrameConfig()


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    segment_len: int = 16384
    epochs: int = 1
    seed: int = 0
    loss: str = "wsdr"

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError("batch size must be >= 1")
        if self.loss not in LOSSES:
            raise InvalidArgumentError(f"unknown loss {self.loss!r}")


@dataclass
class Dataset:
    """Paired fixed-length noisy/clean segments, shape ``(n, length)``."""

    noisy: np.ndarray
    clean: np.ndarray

    def __post_init__(self):
        self.noisy = np.atleast_2d(np.asarray(self.noisy, dtype=np.float64))
        self.clean = np.atleast_2d(np.asarray(self.clean, dtype=np.float64))
        if self.noisy.shape != self.clean.shape or self.noisy.shape[0] == 0:
            raise InvalidArgumentError("dataset needs matching, nonempty noisy/clean arrays")

    def __len__(self):
        return self.noisy.shape[0]


def _spectrograms(batch: np.ndarray, frame: FrameConfig) -> Tuple[np.ndarray, int]:
    specs = [analyze(Waveform(row, frame.sample_rate), frame) for row in batch]
    return np.stack([s.values for s in specs]), specs[0].pad


def _pad_time(Y: np.ndarray, multiple: int) -> np.ndarray:
    extra = (-Y.shape[-1]) % multiple
    if extra:
        Y = np.concatenate([Y, np.zeros(Y.shape[:-1] + (extra,))], axis=-1)
    return Y


def synthesize_torch(est: torch.Tensor, frame: FrameConfig, length: int, pad: int) -> torch.Tensor:
    """Differentiable counterpart of :func:`dctse.spectral.synthesize` for a
    ``(batch, F, T)`` tensor; returns ``(batch, length)``."""
    B, W, T = est.shape
    basis = torch.tensor(build_dct_plan(W).basis, dtype=est.dtype)
    window = torch.as_tensor(hamming_window(W), dtype=est.dtype)
    frames = (basis.T @ est) * window[:, None]
    total = W + (T - 1) * frame.hop
    out = F.fold(frames, output_size=(1, total), kernel_size=(1, W), stride=(1, frame.hop))
    out = out.view(B, total) / torch.as_tensor(wola_normalizer(T, frame), dtype=est.dtype)
    need = pad + length
    if total < need:
        out = F.pad(out, (0, need - total))
    return out[:, pad : pad + length]


def _masks(model: Enhancer, Y: np.ndarray, mode: str):
    T = Y.shape[-1]
    x = torch.as_tensor(_pad_time(Y, model.unet.time_multiple)[:, None], dtype=model.params.dtype)
    mask, cache = unet_forward(x, model.unet, model.params, mode)
    return mask, cache, T


def forward_loss(model: Enhancer, noisy: np.ndarray, clean: np.ndarray, loss: str = "wsdr", mode: str = "train"):
    """Noisy batch -> masked spectrogram -> waveform -> loss.

    Returns ``(loss_tensor, mask_leaf, cache)``; ``mask_leaf`` is the network
    output as an autograd leaf so ``loss.backward()`` yields dLoss/dMask.
    """
    noisy = np.atleast_2d(noisy)
    clean = np.atleast_2d(clean)
    Y, pad = _spectrograms(noisy, model.frame)
    mask, cache, T = _masks(model, Y, mode)
    dtype = model.params.dtype
    mask_leaf = mask.requires_grad_(True)
    est = mask_leaf[:, 0, :, :T] * torch.as_tensor(Y, dtype=dtype)
    y_hat = synthesize_torch(est, model.frame, noisy.shape[-1], pad)
    x_t = torch.as_tensor(noisy, dtype=dtype)
    y_t = torch.as_tensor(clean, dtype=dtype)
    value = LOSSES[loss](x_t, y_t, y_hat).mean()
    return value, mask_leaf, cache


def train_step(model: Enhancer, noisy: np.ndarray, clean: np.ndarray, adam: AdamState, loss: str = "wsdr") -> float:
    value, mask_leaf, cache = forward_loss(model, noisy, clean, loss)
    value.backward()
    unet_backward(cache, mask_leaf.grad)
    adam_step(model.params, None, adam)
    return value.item()


def train_epoch(model: Enhancer, dataset: Dataset, cfg: TrainConfig, adam: AdamState, epoch: int = 0) -> dict:
    """One pass over ``dataset`` in a seeded order.

    The order depends only on ``(cfg.seed, epoch)``, so an interrupted run
    resumed from a checkpoint replays the same batches.
    """
    if len(dataset) == 0:
        raise InvalidArgumentError("empty dataset")
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(dataset))
    losses, aborted = [], 0
    for start in range(0, len(order), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        try:
            losses.append(train_step(model, dataset.noisy[idx], dataset.clean[idx], adam, cfg.loss))
        except AbortStepError as exc:
            aborted += 1
            log.warning("epoch %d: %s", epoch, exc)
    if not losses:
        raise AbortStepError(f"all {aborted} steps of epoch {epoch} were aborted")
    return {"epoch": epoch, "mean_loss": float(np.mean(losses)), "steps": len(losses), "aborted": aborted}


def enhance(model: Enhancer, noisy: Waveform) -> Waveform:
    """Inference: analyse, mask with the network in eval mode, resynthesise."""
    if noisy.sample_rate != model.frame.sample_rate:
        raise InvalidArgumentError("sample rate does not match the model's frame config")
    Y, pad = _spectrograms(noisy.samples[None], model.frame)
    with torch.no_grad():
        mask, _, T = _masks(model, Y, "eval")
        est = mask[:, 0, :, :T].double() * torch.as_tensor(Y)
        out = synthesize_torch(est, model.frame, noisy.samples.size, pad)
    return Waveform(out[0].numpy(), noisy.sample_rate)


# ------------------------------------------------------------ manifests


def load_manifest(path) -> List[dict]:
    """JSON-lines records ``{clean, noise, snr_db, split}``; relative paths
    resolve against the manifest's directory."""
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        missing = {"clean", "noise", "snr_db"} - rec.keys()
        if missing:
            raise InvalidArgumentError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        for key in ("clean", "noise"):
            p = Path(rec[key])
            rec[key] = str(p if p.is_absolute() else path.parent / p)
        rec.setdefault("split", "train")
        records.append(rec)
    return records


def _speech_crop(x: np.ndarray, n: int, rng: np.random.Generator, tries: int = 20) -> np.ndarray:
    # redraw crops that fall into pauses; the loss needs a non-silent target
    floor = 1e-3 * _power(x)
    for _ in range(tries):
        seg = _fit_length(x, n, rng)
        if _power(seg) > floor:
            return seg
    return seg


def build_dataset(records: Sequence[dict], cfg: TrainConfig, frame: FrameConfig = FrameConfig(), split: str = "train") -> Dataset:
    """Read, resample and normalise each pair, crop a ``segment_len`` clean
    segment and mix it with its noise at the record's SNR.

    Crops whose power is under 1e-3 of the utterance's are redrawn (up to 20
    times) so that pauses do not yield silent targets.
    """
    from .audio_io import normalize_amplitude, read_wav, resample

    rng = np.random.default_rng(cfg.seed)
    noisy, clean = [], []
    for i, rec in enumerate(r for r in records if r.get("split", "train") == split):
        c = normalize_amplitude(resample(read_wav(rec["clean"]), frame.sample_rate))
        n = resample(read_wav(rec["noise"]), frame.sample_rate)
        seg = _speech_crop(c.samples, cfg.segment_len, rng)
        mixed, _ = mix_at_snr(Waveform(seg, frame.sample_rate), n, float(rec["snr_db"]), seed=cfg.seed * 100003 + i)
        noisy.append(mixed.samples)
        clean.append(seg)
    if not clean:
        raise InvalidArgumentError(f"manifest has no {split!r} records")
    return Dataset(np.stack(noisy), np.stack(clean))
