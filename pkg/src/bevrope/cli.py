"""Command-line harness.

Subcommands: gen (emit episodes), train, eval, ablate, check (property and
gradient suites), bench (kernel backends). All outputs are deterministic
text; rerunning with the same config and seed reproduces every file byte
for byte.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from bevrope import config_io
from bevrope.checks import run_all_checks
from bevrope.decoder import EMBEDDING_MODES, Decoder
from bevrope.harness import run_ablation, train, train_and_evaluate, evaluate
from bevrope.numerics import ConfigurationError
from bevrope.scenes import generate_episode, write_episode
from bevrope import rng


def _load(args, use_variant=True):
    if args.config:
        scene, dec, run = config_io.load_configs(args.config)
    else:
        scene, dec, run = config_io.build_configs({})
    if args.seed is not None:
        run = replace(run, seed=args.seed)
    if args.episodes is not None:
        run = replace(run, episodes=args.episodes)
    if args.epochs is not None:
        run = replace(run, epochs=args.epochs)
    if use_variant and getattr(args, "variant", None):
        dec = replace(dec, embedding_mode=args.variant,
                      pairs_t=-1, pairs_x=-1, pairs_y=-1)
    scene = config_io.resolve_scene(scene, dec)
    return scene, dec, run


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    scene, dec, run = _load(args)
    out = _outdir(args)
    for i in range(run.episodes):
        ep_seed = rng.derive_seed(run.seed, rng.EPISODE, i)
        cfg = replace(scene, seed=ep_seed)
        write_episode(out / f"episode_{i:04d}.txt", cfg, generate_episode(cfg))
    config_io.write_manifest(out / "manifest.txt", scene, dec, run,
                             {"command": "gen"})
    print(f"wrote {run.episodes} episodes to {out}")
    return 0


def cmd_train(args) -> int:
    scene, dec, run = _load(args)
    out = _outdir(args)
    result = train(scene, dec, run)
    config_io.save_weights(out / "weights.txt", result.params)
    (out / "train_log.txt").write_text("\n".join(result.log) + "\n")
    config_io.write_manifest(out / "manifest.txt", scene, dec, run,
                             {"command": "train"})
    print(f"final epoch loss {result.epoch_losses[-1]:.6g}; "
          f"weights in {out / 'weights.txt'}")
    return 0


def cmd_eval(args) -> int:
    scene, dec, run = _load(args)
    out = _outdir(args)
    decoder = Decoder(dec, run.seed)
    if args.weights:
        decoder.params = config_io.load_weights(args.weights)
    report = evaluate(decoder, scene, run)
    config_io.write_metrics_csv(out / "metrics.csv", [report])
    config_io.write_manifest(out / "manifest.txt", scene, dec, run,
                             {"command": "eval"})
    print(f"center_mae {report.center_mae:.6g}  velocity_mae "
          f"{report.velocity_mae:.6g}  precision {report.precision:.4f}  "
          f"recall {report.recall:.4f}")
    return 0


def cmd_ablate(args) -> int:
    scene, dec, run = _load(args, use_variant=False)
    out = _outdir(args)
    variants = args.variant.split(",") if args.variant else list(EMBEDDING_MODES)
    for v in variants:
        if v not in EMBEDDING_MODES:
            raise ConfigurationError(f"unknown variant {v!r}")
    configs = {v: replace(dec, embedding_mode=v, pairs_t=-1, pairs_x=-1, pairs_y=-1)
               for v in variants}
    rows = run_ablation(scene, run, configs, jobs=args.jobs)
    config_io.write_metrics_csv(out / "ablation.csv", rows)
    config_io.write_manifest(out / "manifest.txt", scene, dec, run,
                             {"command": "ablate",
                              "variants": ",".join(variants)})
    for line in config_io.metrics_csv_lines(rows):
        print(line)
    return 0


def cmd_check(args) -> int:
    results = run_all_checks()
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"[{status}] {r.name}: {r.detail} ({r.seconds:.2f}s)")
    report = "\n".join(lines)
    print(report)
    if args.out:
        out = _outdir(args)
        (out / "check_report.txt").write_text(report + "\n")
    return 0 if all(r.passed for r in results) else 1


def cmd_bench(args) -> int:
    from bevrope.bench import run_benchmark
    for line in run_benchmark(repeats=args.repeats):
        print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bevrope",
        description="rotary BEV/time embeddings in a streaming detection decoder")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, variant=True):
        p.add_argument("--config", type=str, default=None,
                       help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", type=str, default="runs")
        p.add_argument("--episodes", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        if variant:
            p.add_argument("--variant", type=str, default=None,
                           help=f"embedding mode ({', '.join(EMBEDDING_MODES)})")

    p_gen = sub.add_parser("gen", help="emit episodes to text files")
    common(p_gen)
    p_gen.set_defaults(fn=cmd_gen)

    p_train = sub.add_parser("train", help="train one variant")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate weights")
    common(p_eval)
    p_eval.add_argument("--weights", type=str, default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_abl = sub.add_parser("ablate", help="train+eval several variants")
    common(p_abl)
    p_abl.add_argument("--jobs", type=int, default=1)
    p_abl.set_defaults(fn=cmd_ablate)

    p_check = sub.add_parser("check", help="run property and gradient suites")
    p_check.add_argument("--out", type=str, default=None)
    p_check.set_defaults(fn=cmd_check)

    p_bench = sub.add_parser("bench", help="compare kernel backends")
    p_bench.add_argument("--repeats", type=int, default=200)
    p_bench.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
