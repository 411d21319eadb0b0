"""Command-line surface: `tsm stretch|train|eval|bench`.

Exit codes: 2 bad arguments, 3 I/O or dataset problems, 4 model or
sample-rate mismatch, 5 non-finite training loss (a last-good checkpoint
is written first).  Diagnostics go to stderr; results to stdout.

Option values resolve as: command-line flags, then a JSON config file
given with --config, then built-in defaults.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .audio import AudioIOError, CANONICAL_RATE, Waveform, load_wav, resample, write_wav
from .checkpoint import CheckpointError, load_autoencoder
from .classical import (
    DEFAULT_SYNTHESIS_HOP,
    DEFAULT_TOLERANCE,
    PV_FRAME_LEN,
    WSOLA_FRAME_LEN,
    TsmParams,
    ola_stretch,
    pv_stretch,
    wsola_stretch,
)
from .engine import ChunkPolicy, resample_stretch, speed_grid, stretch
from .evaluate import EvalReport, bench_inference, evaluate_methods, synthetic_corpus
from .model import CR_PRESETS, ModelConfig, SampleRateMismatch
from .training import DatasetError, NonFiniteLossError, TrainConfig, Trainer

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MODEL = 4
EXIT_NONFINITE = 5

CLASSICAL_METHODS = ("wsola", "pv", "ola", "resample")


def _load_config_file(argv: list[str]) -> dict:
    """Pull --config out of argv (by scan, pre-parser) and load it."""
    for i, token in enumerate(argv):
        if token == "--config":
            if i + 1 >= len(argv):
                return {}  # the parser will report the missing value
            path = argv[i + 1]
        elif token.startswith("--config="):
            path = token.split("=", 1)[1]
        else:
            continue
        try:
            with open(path) as f:
                data = json.load(f)
        except Exception as exc:
            print(f"tsm: cannot read config file {path}: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)
        if not isinstance(data, dict):
            print(f"tsm: config file {path} must hold a JSON object", file=sys.stderr)
            raise SystemExit(EXIT_USAGE)
        return data
    return {}


def _build_parser(cfg: dict) -> argparse.ArgumentParser:
    def d(key, default):
        return cfg.get(key, default)

    parser = argparse.ArgumentParser(prog="tsm", description="Audio time-scale modification")
    parser.add_argument("--config", help="JSON config file; flags override its values")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stretch", help="time-scale one WAV file")
    p.add_argument("input", help="input WAV path")
    p.add_argument("--speed", type=float, default=d("speed", 1.0), help="speed factor r; r>1 plays faster")
    p.add_argument(
        "--method",
        choices=("neural",) + CLASSICAL_METHODS,
        default=d("method", "wsola"),
    )
    p.add_argument("--ckpt", default=d("ckpt", None), help="checkpoint (required for --method neural)")
    p.add_argument("--out", default=d("out", None), help="output WAV path")
    p.add_argument("--auto-resample", action="store_true", default=d("auto_resample", False),
                   help="resample input to the model rate instead of failing")

    p = sub.add_parser("train", help="train the autoencoder on a WAV directory")
    p.add_argument("--data", required="data" not in cfg, default=d("data", None), help="directory of WAV files")
    p.add_argument("--cr", type=int, choices=sorted(CR_PRESETS), default=d("cr", 1024))
    p.add_argument("--steps", type=int, default=d("steps", 1000))
    p.add_argument("--run-dir", required="run_dir" not in cfg, default=d("run_dir", None))
    p.add_argument("--resume", default=d("resume", None), help="checkpoint to resume from")
    p.add_argument("--fresh-discriminator", action="store_true", default=d("fresh_discriminator", False))
    p.add_argument("--seed", type=int, default=d("seed", 0))
    p.add_argument("--segment-len", type=int, default=d("segment_len", 16384))
    p.add_argument("--batch-size", type=int, default=d("batch_size", 8))
    p.add_argument("--lr-g", type=float, default=d("lr_g", 1e-4))
    p.add_argument("--lr-d", type=float, default=d("lr_d", 1e-4))
    p.add_argument("--checkpoint-every", type=int, default=d("checkpoint_every", 1000))
    p.add_argument("--base-channels", type=int, default=d("base_channels", 32))
    p.add_argument("--max-channels", type=int, default=d("max_channels", 512))
    p.add_argument("--latent-channels", type=int, default=d("latent_channels", 64))
    p.add_argument("--disc-base-channels", type=int, default=d("disc_base_channels", 16))
    p.add_argument("--disc-max-channels", type=int, default=d("disc_max_channels", 1024))
    p.add_argument("--log-every", type=int, default=d("log_every", 100))

    for name, help_text in (
        ("eval", "score methods on a corpus (duration/pitch proxies)"),
        ("bench", "time methods in ms per second of audio"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--corpus", default=d("corpus", None), help="WAV directory (default: synthetic corpus)")
        p.add_argument("--methods", default=d("methods", "wsola,pv,resample"),
                       help="comma list from: wsola,pv,ola,resample,neural")
        p.add_argument("--speeds", default=d("speeds", "grid"), help='"grid" or a comma list of factors')
        p.add_argument("--report", default=d("report", None), help="CSV output path")
        p.add_argument("--json", dest="json_out", default=d("json", None), help="JSON aggregate path")
        p.add_argument("--plot-data", default=d("plot_data", None), help="gnuplot-style data file")
        p.add_argument("--ckpt", action="append", default=d("ckpt", None),
                       help="neural checkpoint; repeat for several CR variants")
        if name == "bench":
            p.add_argument("--repetitions", type=int, default=d("repetitions", 5))
    return parser


def _classical_fn(method: str):
    if method == "resample":
        return lambda w, r: resample_stretch(w, r)
    if method == "ola":
        return lambda w, r: ola_stretch(w, TsmParams(speed=r))
    if method == "wsola":
        return lambda w, r: wsola_stretch(
            w, TsmParams(speed=r, frame_len=WSOLA_FRAME_LEN, synthesis_hop=DEFAULT_SYNTHESIS_HOP,
                         tolerance=DEFAULT_TOLERANCE)
        )
    if method == "pv":
        return lambda w, r: pv_stretch(
            w, TsmParams(speed=r, frame_len=PV_FRAME_LEN, synthesis_hop=DEFAULT_SYNTHESIS_HOP,
                         tolerance=0, phase_lock=True)
        )
    raise ValueError(f"unknown method {method}")


def cmd_stretch(args, parser) -> int:
    if args.method == "neural" and not args.ckpt:
        parser.error("--method neural requires --ckpt")
    w = load_wav(args.input)

    if args.method == "neural":
        model = load_autoencoder(args.ckpt)
        if w.sample_rate != model.config.sample_rate:
            if args.auto_resample:
                w = resample(w, model.config.sample_rate)
            else:
                raise SampleRateMismatch(
                    f"{args.input} is {w.sample_rate} Hz but the model expects "
                    f"{model.config.sample_rate} Hz (use --auto-resample)"
                )
        out = stretch(w, args.speed, model, ChunkPolicy())
    else:
        out = _classical_fn(args.method)(w, args.speed)

    out_path = args.out or str(
        Path(args.input).with_name(f"{Path(args.input).stem}_{args.method}_x{args.speed:g}.wav")
    )
    write_wav(out, out_path)
    print(
        f"method={args.method} speed={args.speed:g} "
        f"in_sec={w.duration:.3f} out_sec={out.duration:.3f} out={out_path}"
    )
    return 0


def cmd_train(args, parser) -> int:
    model_cfg = ModelConfig.preset(
        args.cr,
        base_channels=args.base_channels,
        max_channels=args.max_channels,
        latent_channels=args.latent_channels,
    )
    cfg = TrainConfig(
        model=model_cfg,
        steps=args.steps,
        segment_len=args.segment_len,
        batch_size=args.batch_size,
        lr_generator=args.lr_g,
        lr_discriminator=args.lr_d,
        seed=args.seed,
        checkpoint_every=args.checkpoint_every,
        data_dir=args.data,
        run_dir=args.run_dir,
        resume_from=args.resume,
        fresh_discriminator=args.fresh_discriminator,
        disc_base_channels=args.disc_base_channels,
        disc_max_channels=args.disc_max_channels,
    )
    trainer = Trainer(cfg)

    def on_step(metrics):
        if args.log_every and metrics.step % args.log_every == 0:
            print(
                f"step {metrics.step}: d_loss={metrics.d_loss:.4f} g_adv={metrics.g_adv:.4f} "
                f"l_fm={metrics.l_fm:.4f} ar={metrics.ar:.5f} nr={metrics.nr:.5f}",
                file=sys.stderr,
            )

    try:
        trainer.run(on_step=on_step, warn=lambda msg: print(f"tsm: warning: {msg}", file=sys.stderr))
    except NonFiniteLossError as exc:
        last_good = Path(args.run_dir) / "last_good.tsmn"
        trainer.save(last_good)
        print(f"tsm: {exc}; last-good state saved to {last_good}", file=sys.stderr)
        return EXIT_NONFINITE
    final = trainer.last_checkpoint
    print(f"trained to step {trainer.global_step}; checkpoint {final}")
    return 0


def _load_corpus(corpus_dir) -> dict[str, Waveform]:
    if corpus_dir is None:
        return synthetic_corpus(CANONICAL_RATE)
    paths = sorted(Path(corpus_dir).glob("*.wav"))
    if not paths:
        raise DatasetError(f"no WAV files in {corpus_dir}")
    return {p.stem: load_wav(p) for p in paths}


def _parse_speeds(spec: str) -> list[float]:
    if spec.strip().lower() == "grid":
        return speed_grid()
    try:
        return [float(tok) for tok in spec.split(",") if tok.strip()]
    except ValueError:
        raise ValueError(f"bad --speeds value: {spec!r}")


def _build_methods(args) -> dict:
    methods = {}
    requested = [m.strip() for m in args.methods.split(",") if m.strip()]
    ckpts = args.ckpt or []
    for m in requested:
        if m in CLASSICAL_METHODS:
            methods[m] = _classical_fn(m)
        elif m == "neural":
            if not ckpts:
                print("tsm: notice: no --ckpt given, skipping neural rows", file=sys.stderr)
                continue
            for path in ckpts:
                try:
                    model = load_autoencoder(path)
                except FileNotFoundError:
                    print(f"tsm: notice: checkpoint {path} missing, skipping", file=sys.stderr)
                    continue
                name = "neural" if len(ckpts) == 1 else f"neural-{model.config.compression_ratio}"
                methods[name] = (
                    lambda w, r, _model=model: stretch(w, r, _model, ChunkPolicy())
                )
        else:
            raise ValueError(f"unknown method {m!r}")
    return methods


def _emit_report(report: EvalReport, args) -> None:
    if args.report:
        report.write_csv(args.report)
        print(f"report={args.report}")
    if args.json_out:
        report.write_json(args.json_out)
        print(f"json={args.json_out}")
    if args.plot_data:
        report.write_plot_data(args.plot_data)
        print(f"plot_data={args.plot_data}")
    for name, entry in report.aggregate().items():
        parts = " ".join(f"{k}={v:.4g}" for k, v in entry.items())
        print(f"{name}: {parts}")


def cmd_eval(args, parser) -> int:
    methods = _build_methods(args)
    report = evaluate_methods(methods, _load_corpus(args.corpus), _parse_speeds(args.speeds))
    _emit_report(report, args)
    return 0


def cmd_bench(args, parser) -> int:
    methods = _build_methods(args)
    report = bench_inference(
        methods, _load_corpus(args.corpus), _parse_speeds(args.speeds), repetitions=args.repetitions
    )
    _emit_report(report, args)
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    threads = os.environ.get("TSM_NUM_THREADS")
    if threads:
        try:
            import torch

            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"tsm: ignoring bad TSM_NUM_THREADS={threads!r}", file=sys.stderr)

    cfg = _load_config_file(argv)
    parser = _build_parser(cfg)
    args = parser.parse_args(argv)

    handler = {
        "stretch": cmd_stretch,
        "train": cmd_train,
        "eval": cmd_eval,
        "bench": cmd_bench,
    }[args.command]
    try:
        return handler(args, parser)
    except (AudioIOError, DatasetError, FileNotFoundError) as exc:
        print(f"tsm: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SampleRateMismatch, CheckpointError) as exc:
        print(f"tsm: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except ValueError as exc:
        print(f"tsm: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
