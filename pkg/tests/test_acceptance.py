"""Acceptance criteria 1-9, one test each.

Every test records a one-line PASS/FAIL verdict in ``RESULTS``; the
conftest hook prints them at the end of the pytest run, and running this file
directly (``python tests/test_acceptance.py``) prints them too. Criterion 10
(the PESQ/CSIG/CBAK/COVL table) is not reproducible at desk scale and is
covered in the README.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from fd import central_difference_grads  # noqa: E402

from dctse.audio_io import read_wav, write_wav  # noqa: E402
from dctse.cli import main  # noqa: E402
from dctse.dct import build_dct_plan, dct_forward, verify_dft_dct_relation  # noqa: E402
from dctse.evaluation import (  # noqa: E402
    NOISE_SLOPES,
    NoiseSpec,
    colored_noise,
    multi_noise_experiment,
    psd_slope,
    si_sdr,
    synthetic_speech,
)
from dctse.spectral import FrameConfig, Waveform, analyze, synthesize  # noqa: E402
from dctse.training import (  # noqa: E402
    AdamState,
    Enhancer,
    enhance,
    forward_loss,
    mix_at_snr,
    train_step,
)
from dctse.unet import (  # noqa: E402
    default_unet_config,
    init_parameters,
    toy_unet_config,
    unet_backward,
    unet_forward,
)

RESULTS = {}

NOT_REPRODUCIBLE = (
    "ACCEPTANCE 10: NOT REPRODUCIBLE - PESQ/CSIG/CBAK/COVL need the full Voice Bank-DEMAND corpus, "
    "full training and ITU metric implementations; criteria 1-9 substitute (see README)"
)


def record(n, ok, detail):
    RESULTS[n] = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    assert ok, RESULTS[n]


# --------------------------------------------------------------------- 1-4


def test_1_dct_orthogonality():
    t = time.perf_counter()
    worst = 0.0
    for N in (2, 8, 64, 1024):
        W = build_dct_plan(N).basis
        worst = max(worst, float(np.max(np.abs(W @ W.T - np.eye(N)))))
    dt = time.perf_counter() - t
    record(1, worst <= 1e-12 and dt < 5, f"max |W W^T - I| = {worst:.2e} (<= 1e-12), {dt:.2f} s (< 5 s)")


def test_2_dct_dft_relation():
    t = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = max(verify_dft_dct_relation(rng.standard_normal(N)) for N in (8, 64, 1024) for _ in range(100))
    dt = time.perf_counter() - t
    record(2, worst <= 1e-9 and dt < 10, f"max error {worst:.2e} (<= 1e-9) over 300 vectors, {dt:.2f} s (< 10 s)")


def test_3_fast_path_equivalence():
    plan = build_dct_plan(1024)
    frames = np.random.default_rng(3).standard_normal((1024, 100))
    err = float(np.max(np.abs(dct_forward(plan, frames, "fft") - dct_forward(plan, frames, "matrix"))))
    record(3, err <= 1e-10, f"fast vs matrix max-abs {err:.2e} (<= 1e-10) on 100 frames, N=1024")


def test_4_roundtrip():
    t = time.perf_counter()
    cfg = FrameConfig()
    rng = np.random.default_rng(4)
    worst = 0.0
    inner = slice(cfg.window_len, -cfg.window_len)
    for _ in range(20):
        x = Waveform(rng.uniform(-1, 1, 16000), 16000)
        y = synthesize(analyze(x, cfg))
        a, b = x.samples[inner], y.samples[inner]
        worst = max(worst, float(np.linalg.norm(b - a) / np.linalg.norm(a)))
    dt = time.perf_counter() - t
    record(4, worst <= 1e-6 and dt < 30, f"interior relative L2 {worst:.2e} (<= 1e-6), {dt:.2f} s (< 30 s)")


# ----------------------------------------------------------------------- 5


def test_5_oracle_mask(tmp_path):
    gains = []
    for i in range(10):
        clean = synthetic_speech(2.0, seed=100 + i)
        noise = colored_noise(NoiseSpec("white", clean.samples.size, seed=200 + i))
        noisy, _ = mix_at_snr(clean, noise, 0.0, seed=i)
        c, n, o = (str(tmp_path / f"{k}{i}.wav") for k in "cno")
        write_wav(c, clean)
        write_wav(n, noisy)
        assert main(["oracle", c, n, o]) == 0
        ref = read_wav(c).samples
        gains.append(si_sdr(ref, read_wav(o).samples) - si_sdr(ref, read_wav(n).samples))
    worst = min(gains)
    record(5, worst >= 10, f"SI-SDR gain min {worst:.2f} dB / mean {np.mean(gains):.2f} dB (>= 10 dB) on 10 mixtures")


# ----------------------------------------------------------------------- 6


def _toy(seed=0):
    cfg = toy_unet_config((3, 4))
    params = init_parameters(cfg, seed=seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed)
    for name in params.names("param"):
        if "bias" in name or ".bn." in name or "prelu" in name:
            params[name].add_(0.1 * torch.randn(params[name].shape, generator=g, dtype=torch.float64))
    return cfg, params, g


def test_6_gradients():
    t = time.perf_counter()
    cfg, params, g = _toy()
    x = torch.randn(2, 1, 8, 8, generator=g, dtype=torch.float64)
    R = torch.randn(2, 1, 8, 8, generator=g, dtype=torch.float64)

    def loss(p, inp):
        mask, _ = unet_forward(inp, cfg, p, "train")
        return float(torch.sum(mask * R))

    _, cache = unet_forward(x, cfg, params, "train")
    grads = unet_backward(cache, R)
    fd = central_difference_grads(loss, params, x, h=1e-5)
    scale = max(np.max(np.abs(v)) for v in fd.values())
    layer_err = 0.0
    for name, g_fd in fd.items():
        got = grads[name].numpy()
        if np.max(np.abs(g_fd)) < 1e-8 * scale:
            # conv biases feeding batch norm have an exactly zero gradient
            layer_err = max(layer_err, 0.0 if np.max(np.abs(got)) < 1e-8 * scale else np.inf)
            continue
        layer_err = max(layer_err, float(np.max(np.abs(got - g_fd)) / np.max(np.abs(g_fd))))

    # end to end: analyze -> U-net -> mask -> synthesize -> wSDR
    frame = FrameConfig(window_len=16, hop=4)
    model = Enhancer(cfg, params, frame)
    rng = np.random.default_rng(6)
    clean = np.sin(np.arange(60) * rng.uniform(0.2, 0.6, (2, 1))) * 0.5
    noisy = clean + 0.3 * rng.standard_normal((2, 60))
    value, leaf, cache = forward_loss(model, noisy, clean)
    value.backward()
    e2e = unet_backward(cache, leaf.grad)
    h, e2e_err = 1e-5, 0.0
    for name, index in [("enc0.weight", (1, 0, 1, 2)), ("enc1.weight", (2, 1, 0, 1)), ("dec0.weight", (2, 1, 0, 0)), ("dec1.weight", (0, 0, 2, 1))]:
        w = model.params[name]
        old = w[index].item()
        vals = []
        for d in (h, -h):
            with torch.no_grad():
                w[index] = old + d
            vals.append(forward_loss(model, noisy, clean)[0].item())
        with torch.no_grad():
            w[index] = old
        numeric = (vals[0] - vals[1]) / (2 * h)
        e2e_err = max(e2e_err, abs(e2e[name][index].item() - numeric) / abs(numeric))
    dt = time.perf_counter() - t
    ok = layer_err <= 1e-4 and e2e_err <= 1e-3 and dt < 120
    record(6, ok, f"layer rel err {layer_err:.2e} (<= 1e-4), end-to-end {e2e_err:.2e} (<= 1e-3), {dt:.1f} s (< 120 s)")


# ----------------------------------------------------------------------- 7

BUDGET_S = 30 * 60
MAX_STEPS = 2000
CHECK_EVERY = 10


def _batched_loss(model, noisy, clean, batch):
    # train-mode loss without touching the real batch-norm running statistics
    probe = Enhancer(model.unet, model.params.copy(), model.frame)
    with torch.no_grad():
        return float(np.mean([
            forward_loss(probe, noisy[i : i + batch], clean[i : i + batch])[0].item()
            for i in range(0, len(noisy), batch)
        ]))


@pytest.mark.slow
def test_7_overfit_default_unet():
    t = time.perf_counter()
    clean = [synthetic_speech(2.0, seed=i) for i in range(8)]
    noisy = [
        mix_at_snr(c, colored_noise(NoiseSpec("white", c.samples.size, seed=50 + i)), 0.0, seed=i)[0]
        for i, c in enumerate(clean)
    ]
    C = np.stack([c.samples for c in clean])
    N = np.stack([n.samples for n in noisy])
    cfg = default_unet_config()
    model = Enhancer(cfg, init_parameters(cfg, seed=0))
    adam = AdamState(lr=1e-3, beta1=0.0, beta2=0.999, eps=1e-8)
    batch = 4
    noisy_sdr = float(np.mean([si_sdr(c, n) for c, n in zip(clean, noisy)]))
    initial = _batched_loss(model, N, C, batch)

    def measure():
        loss = _batched_loss(model, N, C, batch)
        sdr = float(np.mean([si_sdr(c, enhance(model, n)) for c, n in zip(clean, noisy)]))
        return loss, sdr

    rng = np.random.default_rng(7)
    order = iter(())
    step, checked, final, enhanced = 0, 0, initial, noisy_sdr
    while step < MAX_STEPS and time.perf_counter() - t < BUDGET_S:
        idx = next(order, None)
        if idx is None:
            order = iter(rng.permutation(len(C)).reshape(-1, batch))
            continue
        train_step(model, N[idx], C[idx], adam)
        step += 1
        if step % CHECK_EVERY == 0:
            final, enhanced = measure()
            checked = step
            if final < initial - 0.1 and enhanced >= noisy_sdr + 5:
                break
    if checked != step:
        final, enhanced = measure()
    dt = time.perf_counter() - t
    ok = final < initial - 0.1 and enhanced >= noisy_sdr + 5 and dt < BUDGET_S
    record(
        7,
        ok,
        f"{step} steps, loss {initial:.3f} -> {final:.3f} (needs < {initial - 0.1:.3f}), "
        f"SI-SDR {noisy_sdr:.2f} -> {enhanced:.2f} dB (needs >= {noisy_sdr + 5:.2f}), {dt / 60:.1f} min (< 30)",
    )


# --------------------------------------------------------------------- 8-9


def test_8_colored_noise_slopes():
    worst = {}
    for color, target in NOISE_SLOPES.items():
        dev = [abs(psd_slope(colored_noise(NoiseSpec(color, 32000, seed=s))) - target) for s in range(20)]
        worst[color] = max(dev)
    ok = max(worst.values()) <= 1.0
    detail = ", ".join(f"{c} {v:.2f}" for c, v in worst.items())
    record(8, ok, f"max |slope - target| dB/octave over 20 seeds: {detail} (<= 1)")


def test_9_multi_noise_ordering():
    rows = []
    ok = True
    for seed in range(5):
        res = multi_noise_experiment(synthetic_speech(4.0, seed=seed), seed=seed)
        imp = res.improvement("wiener")
        ok &= imp["blue"] > imp["pink"] and imp["violet"] > imp["pink"]
        rows.append(f"{imp['blue']:.1f}/{imp['violet']:.1f}/{imp['pink']:.1f}")
    record(9, ok, "Wiener seg-SNR gain blue/violet/pink per seed: " + ", ".join(rows) + " (blue, violet > pink)")


def report_lines():
    lines = [RESULTS.get(n, f"ACCEPTANCE {n}: NOT RUN") for n in range(1, 10)]
    return lines + [NOT_REPRODUCIBLE]


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    print("\n".join(report_lines()))
    sys.exit(code)
