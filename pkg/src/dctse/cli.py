"""Command-line interface: ``dctse <command> ...``.

Every command prints its fully resolved configuration to stderr and writes
``<output>.manifest.json`` next to its main output, holding that config, the
command line and the SHA-256 of every input file.

Configuration comes from ``--config FILE``, else from ``dctse.json`` in the
directory named by ``$DCTSE_CONFIG_DIR``, else from built-in defaults. The
file may hold the sections ``frame``, ``unet``, ``train``, ``adam`` and
``wiener``; command-line flags override it.

Exit codes: 0 success, 2 invalid arguments, 3 malformed input file,
4 numerical failure (non-finite gradients), 1 anything else.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .audio_io import normalize_amplitude, read_wav, resample, write_wav
from .errors import AbortStepError, DctseError, InvalidArgumentError, WavError
from .spectral import FrameConfig, Waveform, analyze, synthesize

__all__ = ["main", "build_parser", "CONFIG_ENV", "EXIT_OK", "EXIT_ARGS", "EXIT_INPUT", "EXIT_NUMERIC"]

CONFIG_ENV = "DCTSE_CONFIG_DIR"
CONFIG_NAME = "dctse.json"
EXIT_OK, EXIT_OTHER, EXIT_ARGS, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3, 4

log = logging.getLogger("dctse")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ARGS, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_config(path: Optional[str]) -> dict:
    if path is None:
        directory = os.environ.get(CONFIG_ENV)
        candidate = Path(directory) / CONFIG_NAME if directory else None
        if candidate is None or not candidate.is_file():
            return {}
        path = candidate
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise InvalidArgumentError(f"config file {path} not found")
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise InvalidArgumentError(f"config file {path} must hold a JSON object")
    cfg["_source"] = str(path)
    return cfg


def build(cls, values: dict, section: str):
    try:
        return cls(**values)
    except (TypeError, KeyError) as exc:
        raise InvalidArgumentError(f"bad {section!r} config: {exc}") from exc


def frame_config(cfg: dict, args) -> FrameConfig:
    values = dict(cfg.get("frame", {}))
    for key in ("window_len", "hop"):
        if getattr(args, key, None) is not None:
            values[key] = getattr(args, key)
    return build(FrameConfig, values, "frame")


def read_input(path, rate: int) -> Waveform:
    return resample(read_wav(path), rate)


def write_manifest(output, args, resolved: dict, inputs: List[str], extra: Optional[dict] = None) -> None:
    manifest = {
        "command": args.command,
        "argv": args.argv,
        "version": __version__,
        "config": resolved,
        "inputs": [{"path": str(p), "sha256": sha256(p)} for p in inputs],
        "output": str(output),
    }
    if extra:
        manifest.update(extra)
    Path(str(output) + ".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def echo(resolved: dict) -> None:
    print("resolved config: " + json.dumps(resolved, sort_keys=True), file=sys.stderr)


def save_csv(path, matrix: np.ndarray) -> None:
    np.savetxt(path, matrix, fmt="%.17g", delimiter=",")


def _write_audio(path, x: Waveform) -> None:
    if np.max(np.abs(x.samples)) >= 1.0:
        log.warning("%s: samples outside [-1, 1) are clipped on write", path)
    write_wav(path, x)


# ----------------------------------------------------------------- commands


def native_frame(cfg, args, x: Waveform) -> FrameConfig:
    # the identity-path commands work at the file's own rate
    return replace(frame_config(cfg, args), sample_rate=x.sample_rate)


def cmd_analyze(args, cfg):
    x = read_wav(args.input)
    frame = native_frame(cfg, args, x)
    resolved = {"frame": asdict(frame), "pad": args.pad}
    echo(resolved)
    S = analyze(x, frame, pad=args.pad)
    save_csv(args.output, S.values)
    write_manifest(args.output, args, resolved, [args.input], {"shape": list(S.shape)})


def cmd_resynth(args, cfg):
    x = read_wav(args.input)
    frame = native_frame(cfg, args, x)
    resolved = {"frame": asdict(frame)}
    echo(resolved)
    _write_audio(args.output, synthesize(analyze(x, frame)))
    write_manifest(args.output, args, resolved, [args.input])


def cmd_mix(args, cfg):
    from .training import measured_snr_db, mix_at_snr

    resolved = {"snr_db": args.snr, "seed": args.seed}
    echo(resolved)
    clean = read_wav(args.clean)
    noise = resample(read_wav(args.noise), clean.sample_rate)
    noisy, scaled = mix_at_snr(clean, noise, args.snr, seed=args.seed)
    _write_audio(args.output, noisy)
    if args.noise_out:
        _write_audio(args.noise_out, scaled)
    snr = measured_snr_db(clean.samples, scaled.samples)
    write_manifest(args.output, args, resolved, [args.clean, args.noise], {"measured_snr_db": snr})


def cmd_noise(args, cfg):
    from .evaluation import NoiseSpec, colored_noise

    spec = NoiseSpec(args.color, int(round(args.seconds * args.rate)), args.seed, args.rate)
    resolved = dict(asdict(spec), peak=args.peak, slope_db_per_octave=spec.slope_db_per_octave)
    echo(resolved)
    x = colored_noise(spec)
    scale = args.peak / float(np.max(np.abs(x.samples)))
    write_wav(args.output, normalize_amplitude(x, args.peak))
    write_manifest(args.output, args, resolved, [], {"wav_scale": scale})


def _train_setup(args, cfg):
    from .training import AdamState, Enhancer, TrainConfig
    from .unet import UNetConfig, default_unet_config, init_parameters

    frame = frame_config(cfg, args)
    train = dict(cfg.get("train", {}))
    for key in ("epochs", "seed", "batch_size", "segment_len"):
        if getattr(args, key) is not None:
            train[key] = getattr(args, key)
    tcfg = build(TrainConfig, train, "train")
    adam_kw = dict(cfg.get("adam", {}))
    if args.lr is not None:
        adam_kw["lr"] = args.lr

    if args.resume:
        from .checkpoint import load_checkpoint

        ck = load_checkpoint(args.resume)
        model, adam, start = ck.model, ck.adam or build(AdamState, adam_kw, "adam"), ck.epoch
        if args.lr is not None:
            adam.lr = args.lr
    else:
        unet = build(UNetConfig.from_dict, {"d": cfg["unet"]}, "unet") if "unet" in cfg else default_unet_config()
        model = Enhancer(unet, init_parameters(unet, seed=tcfg.seed), frame)
        adam, start = build(AdamState, adam_kw, "adam"), 0
    return model, adam, tcfg, start


def cmd_train(args, cfg):
    from .checkpoint import Checkpoint, save_checkpoint
    from .training import build_dataset, load_manifest, train_epoch

    model, adam, tcfg, start = _train_setup(args, cfg)
    resolved = {
        "frame": asdict(model.frame),
        "unet": model.unet.to_dict(),
        "train": asdict(tcfg),
        "adam": adam.hyper(),
        "start_epoch": start,
        "resume": args.resume,
    }
    echo(resolved)
    records = load_manifest(args.manifest)
    dataset = build_dataset(records, tcfg, model.frame)
    history = []
    for epoch in range(start, start + tcfg.epochs):
        stats = train_epoch(model, dataset, tcfg, adam, epoch)
        history.append(stats)
        print(json.dumps(stats), flush=True)
    ckpt = Checkpoint(model, adam, seed=tcfg.seed, epoch=start + tcfg.epochs, extra={"train": asdict(tcfg)})
    save_checkpoint(args.output, ckpt)
    inputs = [args.manifest] + sorted({r[k] for r in records for k in ("clean", "noise")})
    if args.resume:
        inputs.append(args.resume)
    write_manifest(args.output, args, resolved, inputs, {"history": history})


def _load_model(path):
    from .checkpoint import load_checkpoint

    return load_checkpoint(path).model


def cmd_enhance(args, cfg):
    from .training import enhance

    model = _load_model(args.checkpoint)
    resolved = {"frame": asdict(model.frame), "unet": model.unet.to_dict()}
    echo(resolved)
    x = read_input(args.input, model.frame.sample_rate)
    _write_audio(args.output, enhance(model, x))
    write_manifest(args.output, args, resolved, [args.checkpoint, args.input])


def cmd_eval(args, cfg):
    from .evaluation import MetricReport

    resolved = {"segment_len": args.segment_len}
    echo(resolved)
    ref, est = read_wav(args.reference), read_wav(args.estimate)
    if ref.sample_rate != est.sample_rate:
        est = resample(est, ref.sample_rate)
    report = MetricReport.compute(ref, est, args.segment_len)
    print(report.to_json())
    if args.output:
        Path(args.output).write_text(report.to_json())
        write_manifest(args.output, args, resolved, [args.reference, args.estimate])


def cmd_multinoise(args, cfg):
    from .evaluation import WienerConfig, multi_noise_experiment

    frame = frame_config(cfg, args)
    wiener = build(WienerConfig, cfg.get("wiener", {}), "wiener")
    model = None
    if args.checkpoint:
        from .training import enhance

        trained = _load_model(args.checkpoint)
        frame = trained.frame
        model = lambda w: enhance(trained, w)  # noqa: E731
    resolved = {"frame": asdict(frame), "wiener": asdict(wiener), "seed": args.seed, "snr_db": 10.0}
    echo(resolved)
    clean = read_input(args.clean, frame.sample_rate)
    result = multi_noise_experiment(clean, args.seed, model, frame=frame, wiener=wiener)
    text = json.dumps(result.to_dict(), indent=2)
    print(text)
    inputs = [args.clean] + ([args.checkpoint] if args.checkpoint else [])
    if args.output:
        Path(args.output).write_text(text)
        write_manifest(args.output, args, resolved, inputs)
    if args.spectrogram_dir:
        out = Path(args.spectrogram_dir)
        out.mkdir(parents=True, exist_ok=True)
        signals = {"clean": clean, "noisy": result.noisy}
        from .evaluation import wiener_enhance

        signals["wiener"] = wiener_enhance(result.noisy, frame, wiener)
        if model is not None:
            signals["model"] = model(result.noisy)
        for name, w in signals.items():
            save_csv(out / f"{name}.csv", analyze(w, frame).values)
        write_manifest(out / "spectrograms", args, resolved, inputs, {"files": sorted(f"{n}.csv" for n in signals)})


def cmd_oracle(args, cfg):
    from .masking import DEFAULT_K, oracle_enhance

    frame = frame_config(cfg, args)
    resolved = {"frame": asdict(frame), "eps": args.eps, "K": DEFAULT_K}
    echo(resolved)
    clean = read_input(args.clean, frame.sample_rate)
    noisy = read_input(args.noisy, frame.sample_rate)
    _write_audio(args.output, oracle_enhance(clean, noisy, frame, eps=args.eps))
    write_manifest(args.output, args, resolved, [args.clean, args.noisy])


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dctse", description="DCT-domain speech enhancement toolkit.")
    p.add_argument("--version", action="version", version=f"dctse {__version__}")
    p.add_argument("--config", help=f"JSON config file (default: ${CONFIG_ENV}/{CONFIG_NAME})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def framing(sp):
        sp.add_argument("--window-len", type=int, dest="window_len")
        sp.add_argument("--hop", type=int)

    sp = sub.add_parser("analyze", help="dump the DCT spectrogram as CSV (one row per bin)")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.add_argument("--pad", action="store_true", help="reflect-pad the edges as the pipeline does")
    framing(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("resynth", help="analyse and resynthesise (identity path)")
    sp.add_argument("input")
    sp.add_argument("output")
    framing(sp)
    sp.set_defaults(func=cmd_resynth)

    sp = sub.add_parser("mix", help="mix clean speech with noise at a given SNR")
    sp.add_argument("clean")
    sp.add_argument("noise")
    sp.add_argument("output")
    sp.add_argument("--snr", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise-out", help="also write the scaled noise")
    sp.set_defaults(func=cmd_mix)

    sp = sub.add_parser("noise", help="generate white, pink, blue or violet noise")
    sp.add_argument("output")
    sp.add_argument("--color", required=True, choices=["white", "pink", "blue", "violet"])
    sp.add_argument("--seconds", type=float, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--rate", type=int, default=16000)
    sp.add_argument("--peak", type=float, default=0.5, help="peak amplitude in the WAV file")
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("train", help="train the U-net from a JSON-lines manifest")
    sp.add_argument("manifest")
    sp.add_argument("output", help="checkpoint to write")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--segment-len", type=int, dest="segment_len")
    sp.add_argument("--resume", help="continue from this checkpoint")
    framing(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("enhance", help="enhance a noisy WAV with a trained checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("input")
    sp.add_argument("output")
    sp.set_defaults(func=cmd_enhance)

    sp = sub.add_parser("eval", help="SI-SDR and segmental SNR of an estimate")
    sp.add_argument("reference")
    sp.add_argument("estimate")
    sp.add_argument("--segment-len", type=int, default=256, dest="segment_len")
    sp.add_argument("-o", "--output", help="also write the JSON report here")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("multinoise", help="sequential blue/pink/violet/white noise experiment")
    sp.add_argument("clean")
    sp.add_argument("--checkpoint", help="trained model to compare against the Wiener baseline")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("-o", "--output", help="also write the JSON report here")
    sp.add_argument("--spectrogram-dir", help="write clean/noisy/enhanced spectrogram CSVs here")
    framing(sp)
    sp.set_defaults(func=cmd_multinoise)

    sp = sub.add_parser("oracle", help="apply the oracle ratio mask (upper bound)")
    sp.add_argument("clean")
    sp.add_argument("noisy")
    sp.add_argument("output")
    sp.add_argument("--eps", type=float, default=1e-8)
    framing(sp)
    sp.set_defaults(func=cmd_oracle)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args.func(args, load_config(args.config))
    except AbortStepError as exc:
        print(f"dctse: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (WavError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"dctse: malformed input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvalidArgumentError as exc:
        print(f"dctse: invalid argument: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except DctseError as exc:
        print(f"dctse: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
