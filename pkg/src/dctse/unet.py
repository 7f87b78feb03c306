"""Masking U-net over DCT spectrograms.

Encoder blocks are strided conv -> batch norm -> PReLU, decoder blocks are
strided transposed conv -> batch norm -> PReLU with the mirror encoder output
concatenated onto their input. The last decoder skips batch norm and PReLU
and squashes its output with the scaled tanh, giving a mask in (-K, K).

Tensors are laid out ``(batch, channels, freq, time)``. Layer arithmetic is
delegated to torch; gradients come from autograd on the recorded forward pass.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError, InvalidStateError
from .masking import DEFAULT_C, DEFAULT_K, scaled_tanh

__all__ = [
    "Conv2dSpec",
    "BatchNormState",
    "PReLUState",
    "UNetConfig",
    "ParameterSet",
    "ForwardCache",
    "default_unet_config",
    "toy_unet_config",
    "mirror_decoders",
    "prelu",
    "conv2d_forward",
    "tconv2d_forward",
    "batchnorm_forward",
    "orthogonal_init",
    "init_parameters",
    "unet_forward",
    "unet_backward",
]

PRELU_INIT = 0.25


@dataclass(frozen=True)
class Conv2dSpec:
    kernel_freq: int
    kernel_time: int
    stride_freq: int = 1
    stride_time: int = 1
    out_channels: int = 1
    pad_freq: Optional[int] = None
    pad_time: Optional[int] = None
    transposed: bool = False
    output_pad_freq: int = 0
    output_pad_time: int = 0

    def __post_init__(self):
        for name in ("kernel_freq", "kernel_time", "stride_freq", "stride_time", "out_channels"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"{name} must be >= 1")
        # "same"-style padding by default
        if self.pad_freq is None:
            object.__setattr__(self, "pad_freq", self.kernel_freq // 2)
        if self.pad_time is None:
            object.__setattr__(self, "pad_time", self.kernel_time // 2)

    @property
    def kernel(self) -> Tuple[int, int]:
        return (self.kernel_freq, self.kernel_time)

    @property
    def stride(self) -> Tuple[int, int]:
        return (self.stride_freq, self.stride_time)

    @property
    def padding(self) -> Tuple[int, int]:
        return (self.pad_freq, self.pad_time)

    @property
    def output_padding(self) -> Tuple[int, int]:
        return (self.output_pad_freq, self.output_pad_time)

    def output_size(self, size: Tuple[int, int]) -> Tuple[int, int]:
        out = []
        for n, k, s, p, op in zip(size, self.kernel, self.stride, self.padding, self.output_padding):
            if self.transposed:
                out.append((n - 1) * s - 2 * p + k + op)
            else:
                out.append((n + 2 * p - k) // s + 1)
        return tuple(out)


@dataclass
class BatchNormState:
    gamma: torch.Tensor
    beta: torch.Tensor
    running_mean: torch.Tensor
    running_var: torch.Tensor
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True

    def __post_init__(self):
        if self.eps <= 0:
            raise InvalidArgumentError("batch-norm eps must be positive")


@dataclass
class PReLUState:
    slope: torch.Tensor


def mirror_decoders(encoders: Sequence[Conv2dSpec], in_channels: int = 1) -> Tuple[Conv2dSpec, ...]:
    """Transposed-conv blocks that undo the encoder shapes in reverse order.

    Decoder ``i`` mirrors encoder ``n-1-i`` and emits that encoder's input
    channel count, so its output lines up with the next skip connection.
    """
    n = len(encoders)
    outs = [in_channels] + [e.out_channels for e in encoders[:-1]]
    decs = []
    for i in range(n):
        e = encoders[n - 1 - i]
        decs.append(
            Conv2dSpec(
                kernel_freq=e.kernel_freq,
                kernel_time=e.kernel_time,
                stride_freq=e.stride_freq,
                stride_time=e.stride_time,
                out_channels=outs[n - 1 - i],
                pad_freq=e.pad_freq,
                pad_time=e.pad_time,
                transposed=True,
                output_pad_freq=e.stride_freq - 1,
                output_pad_time=e.stride_time - 1,
            )
        )
    return tuple(decs)


@dataclass(frozen=True)
class UNetConfig:
    encoders: Tuple[Conv2dSpec, ...]
    decoders: Tuple[Conv2dSpec, ...]
    mask_bound: float = DEFAULT_K
    mask_steepness: float = DEFAULT_C
    skip: str = "concatenate"
    in_channels: int = 1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "encoders", tuple(self.encoders))
        object.__setattr__(self, "decoders", tuple(self.decoders))
        if len(self.encoders) != len(self.decoders) or not self.encoders:
            raise InvalidArgumentError("need matching, nonempty encoder and decoder stacks")
        if self.skip != "concatenate":
            raise InvalidArgumentError(f"unsupported skip mode {self.skip!r}")
        n = len(self.encoders)
        if self.decoders[-1].out_channels != self.in_channels:
            raise InvalidArgumentError("last decoder must emit one mask channel per input channel")
        for i, (d, e) in enumerate(zip(self.decoders, reversed(self.encoders))):
            if not d.transposed or d.stride != e.stride:
                raise InvalidArgumentError(f"decoder {i} does not mirror encoder {n - 1 - i}")

    @property
    def depth(self) -> int:
        return len(self.encoders)

    @property
    def freq_multiple(self) -> int:
        return math.prod(e.stride_freq for e in self.encoders)

    @property
    def time_multiple(self) -> int:
        return math.prod(e.stride_time for e in self.encoders)

    def decoder_in_channels(self, i: int) -> int:
        n = self.depth
        if i == 0:
            return self.encoders[-1].out_channels
        return self.decoders[i - 1].out_channels + self.encoders[n - 1 - i].out_channels

    def encoder_in_channels(self, i: int) -> int:
        return self.in_channels if i == 0 else self.encoders[i - 1].out_channels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        d = dict(d)
        encoders = tuple(Conv2dSpec(**e) for e in d.pop("encoders"))
        decoders = d.pop("decoders", None)
        decoders = tuple(Conv2dSpec(**e) for e in decoders) if decoders else mirror_decoders(
            encoders, d.get("in_channels", 1)
        )
        return cls(encoders=encoders, decoders=decoders, **d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "UNetConfig":
        return cls.from_dict(json.loads(text))


def default_unet_config() -> UNetConfig:
    """Five encoder and five decoder blocks, kernels/strides given as (freq, time)."""
    kernels = [(7, 5), (7, 5), (5, 3), (5, 3), (5, 3)]
    strides = [(2, 1), (2, 2), (2, 2), (2, 2), (2, 2)]
    channels = [16, 32, 64, 64, 64]
    encoders = tuple(
        Conv2dSpec(kf, kt, sf, st, c) for (kf, kt), (sf, st), c in zip(kernels, strides, channels)
    )
    return UNetConfig(encoders, mirror_decoders(encoders))


def toy_unet_config(channels: Sequence[int] = (3, 4)) -> UNetConfig:
    """Small stack with 3x3 kernels and stride 2 on both axes."""
    encoders = tuple(Conv2dSpec(3, 3, 2, 2, c) for c in channels)
    return UNetConfig(encoders, mirror_decoders(encoders))


# --------------------------------------------------------------------- layers


def _as_channel_view(v: torch.Tensor) -> torch.Tensor:
    return v.view(1, -1, 1, 1)


def prelu(x: torch.Tensor, state: PReLUState) -> torch.Tensor:
    """``x`` where positive, ``a * x`` elsewhere, with one slope per channel."""
    if x.shape[1] != state.slope.numel():
        raise InvalidArgumentError(
            f"PReLU has {state.slope.numel()} slopes but input has {x.shape[1]} channels"
        )
    return torch.where(x > 0, x, _as_channel_view(state.slope) * x)


def conv2d_forward(x: torch.Tensor, spec: Conv2dSpec, kernel: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    if x.shape[1] != kernel.shape[1]:
        raise InvalidArgumentError(f"kernel expects {kernel.shape[1]} input channels, got {x.shape[1]}")
    for n, k, p in zip(x.shape[2:], spec.kernel, spec.padding):
        if k > n + 2 * p:
            raise InvalidArgumentError(f"kernel size {k} exceeds padded input size {n + 2 * p}")
    return F.conv2d(x, kernel, bias, stride=spec.stride, padding=spec.padding)


def tconv2d_forward(x: torch.Tensor, spec: Conv2dSpec, kernel: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """Transposed convolution; the adjoint of ``conv2d_forward`` for the same
    kernel (weights stored ``(in, out, kf, kt)``)."""
    if not spec.transposed:
        raise InvalidArgumentError("spec is not marked transposed")
    if x.shape[1] != kernel.shape[0]:
        raise InvalidArgumentError(f"kernel expects {kernel.shape[0]} input channels, got {x.shape[1]}")
    for s, op in zip(spec.stride, spec.output_padding):
        if op >= s:
            raise InvalidArgumentError("output padding must be smaller than the stride")
    return F.conv_transpose2d(
        x, kernel, bias, stride=spec.stride, padding=spec.padding, output_padding=spec.output_padding
    )


def batchnorm_forward(x: torch.Tensor, state: BatchNormState) -> torch.Tensor:
    """Per-channel normalisation followed by the affine ``gamma, beta``.

    Training mode uses (biased) batch statistics and folds them into the
    running estimates with ``momentum``; the running variance is tracked with
    the unbiased estimator.
    """
    C = x.shape[1]
    if state.gamma.numel() != C:
        raise InvalidArgumentError(f"batch norm has {state.gamma.numel()} channels, input has {C}")
    if state.training:
        count = x.numel() // C
        if count < 2:
            raise InvalidArgumentError("batch norm needs more than one value per channel in train mode")
        mean = x.mean(dim=(0, 2, 3))
        var = x.var(dim=(0, 2, 3), unbiased=False)
        with torch.no_grad():
            m = state.momentum
            state.running_mean.mul_(1 - m).add_(m * mean.detach())
            state.running_var.mul_(1 - m).add_(m * var.detach() * count / (count - 1))
    else:
        mean, var = state.running_mean, state.running_var
    xhat = (x - _as_channel_view(mean)) / torch.sqrt(_as_channel_view(var) + state.eps)
    return xhat * _as_channel_view(state.gamma) + _as_channel_view(state.beta)


def orthogonal_init(shape: Sequence[int], seed: int) -> np.ndarray:
    """Weights whose ``(shape[0], prod(shape[1:]))`` flattening has orthonormal
    rows (or columns, when there are more rows than columns)."""
    rows = int(shape[0])
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((max(rows, cols), min(rows, cols)))
    Q, R = np.linalg.qr(A)
    Q *= np.sign(np.diag(R))
    if rows < cols:
        Q = Q.T
    return Q.reshape(tuple(shape))


# --------------------------------------------------------------- parameters


class ParameterSet:
    """Named tensors of a U-net with a gradient buffer of identical layout.

    ``kind`` is ``"param"`` for trainable entries and ``"buffer"`` for batch
    norm running statistics. ``version`` increments on every in-place update
    so stale forward caches can be detected.
    """

    def __init__(self, tensors: Dict[str, torch.Tensor], kinds: Dict[str, str]):
        self.tensors = dict(tensors)
        self.kinds = dict(kinds)
        self.frozen: set = set()
        self.version = 0
        self.grads = {k: torch.zeros_like(v) for k, v in self.tensors.items() if self.kinds[k] == "param"}

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def names(self, kind: Optional[str] = None) -> List[str]:
        return [k for k in self.tensors if kind is None or self.kinds[k] == kind]

    def trainable(self) -> List[str]:
        return [k for k in self.names("param") if k not in self.frozen]

    @property
    def dtype(self) -> torch.dtype:
        return next(iter(self.tensors.values())).dtype

    def layout(self) -> List[dict]:
        table, offset = [], 0
        for name, t in self.tensors.items():
            table.append({"name": name, "shape": list(t.shape), "offset": offset, "kind": self.kinds[name]})
            offset += t.numel()
        return table

    def flatten(self, kind: Optional[str] = None) -> np.ndarray:
        parts = [self.tensors[k].detach().reshape(-1).cpu().numpy() for k in self.names(kind)]
        return np.concatenate(parts) if parts else np.zeros(0)

    def flatten_grads(self) -> np.ndarray:
        return np.concatenate([self.grads[k].reshape(-1).cpu().numpy() for k in self.names("param")])

    def to(self, dtype: torch.dtype) -> "ParameterSet":
        out = ParameterSet({k: v.detach().to(dtype).clone() for k, v in self.tensors.items()}, self.kinds)
        out.frozen = set(self.frozen)
        return out

    def copy(self) -> "ParameterSet":
        return self.to(self.dtype)

    def bump(self):
        self.version += 1

    def zero_grads(self):
        for g in self.grads.values():
            g.zero_()


def init_parameters(cfg: UNetConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> ParameterSet:
    """Orthogonal kernels, zero biases, unit/zero batch-norm affine, PReLU 0.25."""
    tensors: Dict[str, torch.Tensor] = {}
    kinds: Dict[str, str] = {}

    def add(name, value, kind="param"):
        tensors[name] = torch.as_tensor(np.ascontiguousarray(value), dtype=dtype).clone()
        kinds[name] = kind

    layer = 0
    for i, spec in enumerate(cfg.encoders):
        cin, cout = cfg.encoder_in_channels(i), spec.out_channels
        add(f"enc{i}.weight", orthogonal_init((cout, cin) + spec.kernel, seed=_layer_seed(seed, layer)))
        add(f"enc{i}.bias", np.zeros(cout))
        _add_norm_act(add, f"enc{i}", cout)
        layer += 1
    for i, spec in enumerate(cfg.decoders):
        cin, cout = cfg.decoder_in_channels(i), spec.out_channels
        add(f"dec{i}.weight", orthogonal_init((cin, cout) + spec.kernel, seed=_layer_seed(seed, layer)))
        add(f"dec{i}.bias", np.zeros(cout))
        if i < cfg.depth - 1:
            _add_norm_act(add, f"dec{i}", cout)
        layer += 1
    return ParameterSet(tensors, kinds)


def _layer_seed(seed: int, layer: int) -> int:
    return int(np.random.SeedSequence([seed, layer]).generate_state(1)[0])


def _add_norm_act(add, prefix, c):
    add(f"{prefix}.bn.gamma", np.ones(c))
    add(f"{prefix}.bn.beta", np.zeros(c))
    add(f"{prefix}.bn.running_mean", np.zeros(c), "buffer")
    add(f"{prefix}.bn.running_var", np.ones(c), "buffer")
    add(f"{prefix}.prelu", np.full(c, PRELU_INIT))


# ------------------------------------------------------------ forward/backward


@dataclass(eq=False)
class ForwardCache:
    params: ParameterSet
    version: int
    inputs: Dict[str, torch.Tensor]
    output: Optional[torch.Tensor]
    consumed: bool = False


def check_input_shape(cfg: UNetConfig, shape: Sequence[int]):
    if len(shape) != 4 or shape[1] != cfg.in_channels:
        raise InvalidArgumentError(f"expected input (batch, {cfg.in_channels}, freq, time), got {tuple(shape)}")
    if shape[2] % cfg.freq_multiple:
        raise InvalidArgumentError(f"frequency size {shape[2]} must be a multiple of {cfg.freq_multiple}")
    if shape[3] % cfg.time_multiple:
        raise InvalidArgumentError(f"time size {shape[3]} must be a multiple of {cfg.time_multiple}")


def unet_forward(x, cfg: UNetConfig, params: ParameterSet, mode: str = "train"):
    """Run the network and return ``(mask, cache)``.

    ``mode="train"`` uses batch statistics and records the graph needed by
    :func:`unet_backward`; ``mode="eval"`` uses running statistics and records
    nothing. The returned mask is detached.
    """
    if mode not in ("train", "eval"):
        raise InvalidArgumentError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = torch.as_tensor(x, dtype=params.dtype)
    check_input_shape(cfg, x.shape)
    training = mode == "train"

    with torch.set_grad_enabled(training):
        leaves = {}
        if training:
            x = x.detach().requires_grad_(True)
            leaves["input"] = x
            for name in params.trainable():
                t = params[name].detach().requires_grad_(True)
                leaves[name] = t
        p = lambda name: leaves.get(name, params[name])  # noqa: E731

        skips = []
        h = x
        for i, spec in enumerate(cfg.encoders):
            h = conv2d_forward(h, spec, p(f"enc{i}.weight"), p(f"enc{i}.bias"))
            h = batchnorm_forward(h, _bn_view(params, cfg, f"enc{i}", training, p))
            h = prelu(h, PReLUState(p(f"enc{i}.prelu")))
            skips.append(h)
        n = cfg.depth
        h = skips[-1]
        for i, spec in enumerate(cfg.decoders):
            if i > 0:
                h = torch.cat([h, skips[n - 1 - i]], dim=1)
            h = tconv2d_forward(h, spec, p(f"dec{i}.weight"), p(f"dec{i}.bias"))
            if i < n - 1:
                h = batchnorm_forward(h, _bn_view(params, cfg, f"dec{i}", training, p))
                h = prelu(h, PReLUState(p(f"dec{i}.prelu")))
        mask = _open_interval(scaled_tanh(h, cfg.mask_bound, cfg.mask_steepness), cfg.mask_bound)

    cache = ForwardCache(params, params.version, leaves, mask if training else None)
    return mask.detach(), cache


def _open_interval(mask: torch.Tensor, K: float) -> torch.Tensor:
    # tanh rounds to exactly 1 for large logits in 32-bit; keep |mask| < K strictly
    edge = torch.nextafter(torch.tensor(K, dtype=mask.dtype), torch.tensor(0.0, dtype=mask.dtype))
    return torch.clamp(mask, -edge, edge)


def _bn_view(params, cfg, prefix, training, p):
    # affine terms may be autograd leaves; running stats are always the stored buffers
    return BatchNormState(
        p(f"{prefix}.bn.gamma"),
        p(f"{prefix}.bn.beta"),
        params[f"{prefix}.bn.running_mean"],
        params[f"{prefix}.bn.running_var"],
        momentum=cfg.bn_momentum,
        eps=cfg.bn_eps,
        training=training,
    )


def unet_backward(cache: ForwardCache, upstream) -> Dict[str, torch.Tensor]:
    """Backpropagate ``upstream`` (dLoss/dMask) through the recorded forward.

    Writes every parameter gradient into ``cache.params.grads`` (frozen
    parameters get exact zeros) and returns them together with the input
    gradient under the key ``"input"``.
    """
    params = cache.params
    if cache.output is None:
        raise InvalidStateError("cache was produced in eval mode; no graph recorded")
    if cache.consumed:
        raise InvalidStateError("cache already used for a backward pass")
    if cache.version != params.version:
        raise InvalidStateError("parameters changed since the forward pass")
    upstream = torch.as_tensor(upstream, dtype=cache.output.dtype)
    if upstream.shape != cache.output.shape:
        raise InvalidArgumentError(f"upstream shape {tuple(upstream.shape)} != mask shape {tuple(cache.output.shape)}")

    names = list(cache.inputs)
    grads = torch.autograd.grad(cache.output, [cache.inputs[k] for k in names], upstream, allow_unused=True)
    cache.consumed = True
    out = {}
    for name, g in zip(names, grads):
        g = torch.zeros_like(cache.inputs[name]) if g is None else g.detach()
        out[name] = g
    for name in params.names("param"):
        params.grads[name] = out.get(name, torch.zeros_like(params[name]))
        out[name] = params.grads[name]
    return out
