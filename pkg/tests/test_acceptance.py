"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1-5 are the randomized property/gradient/matcher suites (shared with
the `check` CLI subcommand and run once per session); 6-8 exercise the full
train/eval pipeline; 9 bounds the runtime of the whole check suite. Run with
`pytest tests/test_acceptance.py -v -s`. The headline experiment (criterion 7)
trains 2 variants x 3 seeds at full size and dominates the runtime.
"""
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from bevrope import checks, config_io
from bevrope.cli import main as cli_main
from bevrope.harness import run_ablation
from bevrope.numerics import Tape


def _report(num: int, passed: bool, detail: str) -> None:
    print(f"\n[{'PASS' if passed else 'FAIL'}] criterion {num}: {detail}")
    assert passed, f"criterion {num}: {detail}"


@pytest.fixture(scope="session")
def check_suite():
    """Criteria 1-5 run once, single-threaded; criterion 9 uses the total."""
    t0 = time.perf_counter()
    results = {r.name: r for r in checks.run_all_checks()}
    total = time.perf_counter() - t0
    return results, total


@pytest.fixture(scope="session")
def out_dir():
    path = Path("runs") / "acceptance"
    path.mkdir(parents=True, exist_ok=True)
    return path


def test_criterion_1_relative_offset(check_suite):
    r = check_suite[0]["rotary-relative-offset"]
    _report(1, r.passed and r.seconds < 10.0,
            f"{r.detail}, runtime {r.seconds:.2f}s < 10s")


def test_criterion_2_norm_and_composition(check_suite):
    r = check_suite[0]["rotation-norm-composition"]
    _report(2, r.passed and r.seconds < 5.0,
            f"{r.detail}, runtime {r.seconds:.2f}s < 5s")


def test_criterion_3_rigid_shift_invariance(check_suite):
    r = check_suite[0]["rigid-shift-invariance"]
    _report(3, r.passed and r.seconds < 60.0,
            f"{r.detail}, runtime {r.seconds:.2f}s < 60s")


def test_criterion_4_gradient_fidelity(check_suite):
    r = check_suite[0]["gradient-fidelity"]
    _report(4, r.passed and r.seconds < 120.0,
            f"{r.detail}, runtime {r.seconds:.2f}s < 120s")


def test_criterion_5_matcher_optimality(check_suite):
    r = check_suite[0]["matcher-optimality"]
    _report(5, r.passed and r.seconds < 30.0,
            f"{r.detail}, runtime {r.seconds:.2f}s < 30s")


def test_criterion_6_equivalence_ablation(out_dir):
    # rope_spatial must reproduce mrope with an empty temporal block
    # row-for-row on a complete train+eval run; the equivalence is
    # definitional, so a reduced episode budget exercises it fully
    scene, dec, run = config_io.build_configs({})
    run = replace(run, episodes=12, epochs=2, eval_episodes=8, ablation_seeds=1)
    pairs = dec.partition.total - dec.partition.pairs_t
    configs = {
        "rope_spatial": replace(dec, embedding_mode="rope_spatial"),
        "mrope_pairs_t0": replace(dec, embedding_mode="mrope_spatiotemporal",
                                  pairs_t=0, pairs_x=pairs // 2,
                                  pairs_y=pairs // 2, time_scale=997.0),
    }
    rows = run_ablation(scene, run, configs)
    config_io.write_metrics_csv(out_dir / "criterion6.csv", rows)
    by = {(r.variant, r.seed): r for r in rows}
    worst = 0.0
    for seed in ("0", "mean"):
        a, b = by[("rope_spatial", seed)], by[("mrope_pairs_t0", seed)]
        worst = max(worst,
                    abs(a.center_mae - b.center_mae),
                    abs(a.velocity_mae - b.velocity_mae),
                    abs(a.precision - b.precision),
                    abs(a.recall - b.recall),
                    float(abs(a.matched - b.matched)))
    _report(6, worst <= 1e-9,
            f"rope_spatial vs mrope(pairs_t=0): max row difference {worst:.3g} "
            f"(tolerance 1e-9)")


def test_criterion_7_headline_velocity(out_dir):
    # desk-scale analog of the velocity claim: the temporal rotary block must
    # cut velocity error by >= 20% against spatial-only rotary at equal
    # center quality, mean over 3 seeds, default configs
    scene, dec, run = config_io.build_configs({})
    jobs = min(2, os.cpu_count() or 1)
    start = time.perf_counter()

    def run_pair(mrope_cfg, label):
        configs = {
            "rope_spatial": replace(dec, embedding_mode="rope_spatial"),
            "mrope_spatiotemporal": mrope_cfg,
        }
        rows = run_ablation(scene, run, configs, jobs=jobs)
        config_io.write_metrics_csv(out_dir / f"criterion7_{label}.csv", rows)
        config_io.write_manifest(out_dir / f"criterion7_{label}_manifest.txt",
                                 scene, mrope_cfg, run,
                                 {"experiment": f"criterion7_{label}"})
        means = {r.variant: r for r in rows if r.seed == "mean"}
        return means["rope_spatial"], means["mrope_spatiotemporal"]

    base, ours = run_pair(replace(dec, embedding_mode="mrope_spatiotemporal"),
                          "default")
    vel_ratio = ours.velocity_mae / base.velocity_mae
    center_ratio = ours.center_mae / base.center_mae
    detail = (f"velocity_mae {ours.velocity_mae:.4f} vs {base.velocity_mae:.4f} "
              f"(ratio {vel_ratio:.3f}, need <= 0.8); center_mae ratio "
              f"{center_ratio:.3f} (need <= 1.1)")

    if not (ours.velocity_mae >= 0 and base.velocity_mae >= 0
            and vel_ratio <= 0.8 and center_ratio <= 1.1):
        # fallback mandated for a miss: emit artifacts, sweep the partition
        # and temporal scale, apply the criterion to the best configuration
        print(f"\ndefault configuration missed ({detail}); sweeping")
        pairs = dec.partition.total
        sweep = []
        for pairs_t in (2, 4):
            for time_scale in (8.0, 16.0):
                spatial = (pairs - pairs_t) // 2
                sweep.append(replace(dec, embedding_mode="mrope_spatiotemporal",
                                     pairs_t=pairs_t, pairs_x=spatial,
                                     pairs_y=spatial, time_scale=time_scale))
        best = None
        for i, cfg in enumerate(sweep):
            b, o = run_pair(cfg, f"sweep{i}")
            r = o.velocity_mae / b.velocity_mae if o.velocity_mae >= 0 else 9e9
            if best is None or r < best[0]:
                best = (r, o.center_mae / b.center_mae, cfg)
        vel_ratio, center_ratio = best[0], best[1]
        detail += (f"; best swept configuration reaches velocity ratio "
                   f"{vel_ratio:.3f}, center ratio {center_ratio:.3f}")

    elapsed = time.perf_counter() - start
    passed = vel_ratio <= 0.8 and center_ratio <= 1.1 and elapsed < 1800
    _report(7, passed, detail + f"; runtime {elapsed:.0f}s < 1800s")


def test_criterion_8_byte_identical_reruns(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("episodes = 10\nepochs = 2\neval_episodes = 6\n")
    outputs = []
    for tag in ("a", "b"):
        train_dir = tmp_path / f"train_{tag}"
        eval_dir = tmp_path / f"eval_{tag}"
        assert cli_main(["train", "--config", str(cfg), "--seed", "11",
                         "--out", str(train_dir)]) == 0
        assert cli_main(["eval", "--config", str(cfg), "--seed", "11",
                         "--weights", str(train_dir / "weights.txt"),
                         "--out", str(eval_dir)]) == 0
        outputs.append((
            (train_dir / "train_log.txt").read_bytes(),
            (train_dir / "weights.txt").read_bytes(),
            (train_dir / "manifest.txt").read_bytes(),
            (eval_dir / "metrics.csv").read_bytes(),
            (eval_dir / "manifest.txt").read_bytes(),
        ))
    same = all(a == b for a, b in zip(*outputs))
    _report(8, same, "train and eval reruns produced byte-identical logs, "
                     "weights, manifests and metric tables")


def test_criterion_9_check_suite_runtime(check_suite):
    results, total = check_suite
    all_passed = all(r.passed for r in results.values())
    _report(9, all_passed and total < 300.0,
            f"full check suite (criteria 1-5) in {total:.1f}s < 300s, "
            f"single-threaded, all passed")
