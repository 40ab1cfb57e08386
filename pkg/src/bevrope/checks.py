"""Property and gradient check suites behind the `check` CLI subcommand.

Each check is a self-contained randomized verification with a frozen seed;
the CLI prints one pass/fail line per check. Tolerances are fixed here, not
configurable: they are the artifact's correctness contract.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np

from bevrope import rng
from bevrope.decoder import Decoder, DecoderConfig, MemoryQueue, propagate_memory
from bevrope.embeddings import ChannelPartition, FrequencySpectrum, angle_matrix
from bevrope.harness import RunConfig, run_episode_loss
from bevrope.matching import hungarian_match
from bevrope.numerics import Tape, grad_check_central_diff
from bevrope.scenes import SceneConfig, generate_episode


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rotate(vecs: np.ndarray, angles: np.ndarray) -> np.ndarray:
    c, s = np.cos(angles), np.sin(angles)
    out = np.empty_like(vecs)
    out[..., 0::2] = vecs[..., 0::2] * c - vecs[..., 1::2] * s
    out[..., 1::2] = vecs[..., 0::2] * s + vecs[..., 1::2] * c
    return out


def check_rotary_relative_offset(cases: int = 1000) -> CheckResult:
    """Inner products under rotary rotation depend only on relative offsets,
    independently per (t, x, y) block."""
    start = time.perf_counter()
    part = ChannelPartition(2, 3, 3)
    spec_t = FrequencySpectrum(part.pairs_t, position_scale=32.0)
    spec_xy = FrequencySpectrum(part.pairs_x, position_scale=128.0)
    dim = 2 * part.total
    gen = rng.stream(7, rng.CHECK, "relative-offset")
    worst = 0.0
    for axis in range(3):  # x, y, t coordinate columns
        for _ in range(cases):
            q = gen.standard_normal(dim)
            k = gen.standard_normal(dim)
            a = gen.uniform(0.0, 0.5, 3)
            b = gen.uniform(0.0, 0.5, 3)
            s = gen.uniform(0.0, 0.5)
            a2, b2 = a.copy(), b.copy()
            a2[axis] += s
            b2[axis] += s
            coords = np.stack([a, b, a2, b2])
            ang = angle_matrix(coords, part, spec_t, spec_xy)
            dot1 = _rotate(q[None], ang[0:1])[0] @ _rotate(k[None], ang[1:2])[0]
            dot2 = _rotate(q[None], ang[2:3])[0] @ _rotate(k[None], ang[3:4])[0]
            worst = max(worst, abs(dot1 - dot2))
    passed = worst <= 1e-6
    return CheckResult("rotary-relative-offset", passed,
                       f"max |dot diff| {worst:.3g} over {3 * cases} cases "
                       f"(tolerance 1e-6)", time.perf_counter() - start)


def check_rotation_norm_composition(cases: int = 1000) -> CheckResult:
    """Rotation preserves norms (1e-12) and composes additively (1e-9)."""
    start = time.perf_counter()
    gen = rng.stream(11, rng.CHECK, "norm-composition")
    worst_norm = 0.0
    worst_comp = 0.0
    for _ in range(cases):
        pairs = int(gen.integers(1, 17))
        v = gen.standard_normal(2 * pairs)
        theta = gen.uniform(-10.0, 10.0, pairs)
        phi = gen.uniform(-10.0, 10.0, pairs)
        rv = _rotate(v[None], theta[None])[0]
        worst_norm = max(worst_norm,
                         abs(np.linalg.norm(rv) - np.linalg.norm(v)))
        once = _rotate(v[None], (theta + phi)[None])[0]
        twice = _rotate(_rotate(v[None], theta[None]), phi[None])[0]
        worst_comp = max(worst_comp, float(np.abs(once - twice).max()))
    passed = worst_norm <= 1e-12 and worst_comp <= 1e-9
    return CheckResult("rotation-norm-composition", passed,
                       f"max norm drift {worst_norm:.3g} (tol 1e-12), "
                       f"max composition gap {worst_comp:.3g} (tol 1e-9)",
                       time.perf_counter() - start)


def check_shift_invariance(episodes: int = 50) -> CheckResult:
    """A rigid shift of all normalized coordinates leaves attention logits
    (1e-6) and detection fields (1e-5) unchanged."""
    start = time.perf_counter()
    dec_cfg = DecoderConfig(head_init="random")
    scene_cfg = SceneConfig()
    gen = rng.stream(13, rng.CHECK, "shift")
    worst_logit = 0.0
    worst_field = 0.0
    for i in range(episodes):
        decoder = Decoder(dec_cfg, seed=1000 + i)
        frames = generate_episode(replace(
            scene_cfg, seed=rng.derive_seed(17, rng.CHECK, i)))
        shift = gen.uniform(0.001, 0.01, 3)
        mem_a = MemoryQueue([], dec_cfg.mem_capacity, dec_cfg.mem_max_age)
        mem_b = MemoryQueue([], dec_cfg.mem_capacity, dec_cfg.mem_max_age)
        for frame in frames:
            diag_a: list = []
            diag_b: list = []
            out_a = decoder.decode_frame(
                frame.tokens, frame.token_coords, frame.frame_id, mem_a,
                window=scene_cfg.frames, extent=scene_cfg.extent,
                coord_shift=None, collect=diag_a)
            out_b = decoder.decode_frame(
                frame.tokens, frame.token_coords, frame.frame_id, mem_b,
                window=scene_cfg.frames, extent=scene_cfg.extent,
                coord_shift=tuple(shift), collect=diag_b)
            for da, db in zip(diag_a, diag_b):
                worst_logit = max(worst_logit,
                                  float(np.abs(da["logits"] - db["logits"]).max()))
            worst_field = max(
                worst_field,
                float(np.abs(out_a.centers.data - out_b.centers.data).max()),
                float(np.abs(out_a.velocities.data - out_b.velocities.data).max()),
                float(np.abs(out_a.class_probs - out_b.class_probs).max()))
            mem_a = propagate_memory(out_a, mem_a, frame.frame_id)
            mem_b = propagate_memory(out_b, mem_b, frame.frame_id)
    passed = worst_logit <= 1e-6 and worst_field <= 1e-5
    return CheckResult("rigid-shift-invariance", passed,
                       f"max logit drift {worst_logit:.3g} (tol 1e-6), "
                       f"max detection drift {worst_field:.3g} (tol 1e-5) "
                       f"over {episodes} episodes", time.perf_counter() - start)


def tiny_gradient_setup():
    """2-query, 9-token, 2-frame episode on a small but complete decoder."""
    dec_cfg = DecoderConfig(model_dim=16, heads=2, layers=2, n_queries=2,
                            ffn_dim=32, head_init="random",
                            mem_capacity=8, mem_max_age=2)
    scene_cfg = SceneConfig(grid_n=3, frames=2, n_objects=2,
                            token_feature_dim=16, seed=rng.derive_seed(23, rng.CHECK))
    run_cfg = RunConfig(episodes=1, epochs=1, eval_episodes=1)
    decoder = Decoder(dec_cfg, seed=23)
    frames = generate_episode(scene_cfg)

    def loss_fn(tape):
        return run_episode_loss(decoder, frames, scene_cfg, run_cfg, tape)

    return decoder, loss_fn


def check_gradient_fidelity(h: float = 1e-5) -> CheckResult:
    """End-to-end tape gradients match central differences on every parameter."""
    start = time.perf_counter()
    decoder, loss_fn = tiny_gradient_setup()
    err = grad_check_central_diff(loss_fn, decoder.params, h=h)
    passed = err < 1e-4
    n = sum(p.size for p in decoder.params.values())
    return CheckResult("gradient-fidelity", passed,
                       f"max relative error {err:.3g} over {n} parameters "
                       f"(tolerance 1e-4)", time.perf_counter() - start)


def brute_force_best(cost: np.ndarray):
    """Exhaustive minimum over all assignments; returns (total, lex-min pairs).

    Totals are recomputed on the original orientation with row-ascending
    pairs, the same summation the matcher reports, so exact comparison is
    meaningful.
    """
    n, m = cost.shape
    transposed = n > m
    c = cost.T if transposed else cost
    rows, cols = c.shape
    best = None
    best_pairs = None
    for perm in itertools.permutations(range(cols), rows):
        total = float(c[np.arange(rows), list(perm)].sum())
        pairs = sorted((p, r) for r, p in enumerate(perm)) if transposed \
            else [(r, p) for r, p in enumerate(perm)]
        if best is None or total < best - 1e-12 or \
                (abs(total - best) <= 1e-12 and pairs < best_pairs):
            best = total
            best_pairs = pairs
    total = float(cost[[p for p, _ in best_pairs],
                       [g for _, g in best_pairs]].sum()) if best_pairs else 0.0
    return total, best_pairs


def check_matcher_optimality(cases: int = 1000) -> CheckResult:
    """Matcher totals equal the brute-force permutation minimum exactly, and
    the lex-min tie-break pairing agrees. Integer costs in [0, 9]: sums of
    small integers are exact in float64, so ties are real and 'exactly' is
    well defined."""
    start = time.perf_counter()
    gen = rng.stream(29, rng.CHECK, "matcher")
    failures = 0
    detail = ""
    for case in range(cases):
        n = int(gen.integers(1, 7))
        m = int(gen.integers(1, 7))
        cost = gen.integers(0, 10, size=(n, m)).astype(np.float64)
        result = hungarian_match(cost)
        best_total, best_pairs = brute_force_best(cost)
        if result.total_cost != best_total:
            failures += 1
            detail = f"case {case}: total {result.total_cost} vs {best_total}"
        elif result.pairs != best_pairs:
            failures += 1
            detail = f"case {case}: pairs {result.pairs} vs lex-min {best_pairs}"
    passed = failures == 0
    return CheckResult("matcher-optimality", passed,
                       detail or f"{cases} integer matrices up to 6x6, exact "
                                 f"totals and lex-min ties",
                       time.perf_counter() - start)


ALL_CHECKS: List[Callable[[], CheckResult]] = [
    check_rotary_relative_offset,
    check_rotation_norm_composition,
    check_shift_invariance,
    check_gradient_fidelity,
    check_matcher_optimality,
]


def run_all_checks() -> List[CheckResult]:
    return [check() for check in ALL_CHECKS]
