"""Set-prediction loss, streaming training loop, metrics, ablation runner.

Training is streaming: frames of an episode are decoded in order with the
memory queue carried along, the per-frame losses are summed, and one
optimizer step is taken per episode, so gradients flow through the propagated
memory features across the whole episode.

Evaluation reports desk-scale analogs of translation / velocity errors:
mean Euclidean center and velocity error over Hungarian-matched pairs within
a match radius, plus precision/recall, skipping frame 0 where velocity is
unobservable by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional

import numpy as np

from bevrope import numerics, rng
from bevrope.decoder import Decoder, DecoderConfig, FrameOutput, MemoryQueue, \
    propagate_memory
from bevrope.matching import hungarian_match
from bevrope.numerics import ConfigurationError, Matrix, Tape
from bevrope.scenes import SceneConfig, generate_episode


@dataclass(frozen=True)
class RunConfig:
    episodes: int = 200
    epochs: int = 20
    lr: float = 1e-3
    lr_min: float = 1e-5
    seed: int = 0
    eval_episodes: int = 50
    lambda_center: float = 1.0
    lambda_vel: float = 1.0
    lambda_cls: float = 2.0
    score_threshold: float = 0.5
    match_radius: float = 2.0
    ablation_seeds: int = 3
    jobs: int = 1

    def __post_init__(self):
        if self.episodes < 1 or self.epochs < 1 or self.eval_episodes < 1:
            raise ConfigurationError("episodes, epochs, eval_episodes must be positive")
        if self.lr < 0 or self.lr_min < 0:
            raise ConfigurationError("learning rates must be nonnegative")


@dataclass
class MetricsReport:
    variant: str
    seed: str              # seed as text, or "mean"
    center_mae: float      # -1 when no matches
    velocity_mae: float
    precision: float
    recall: float
    matched: int
    predictions: int
    gt_count: int


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    log: List[str]
    epoch_losses: List[float]
    episode_seed_digest: str


# ---------------------------------------------------------------------------
# loss

def detection_loss(output: FrameOutput, gt_centers, gt_velocities,
                   run_cfg: RunConfig) -> Matrix:
    """Matched L1 on centers and velocities plus BCE on class logits.

    The cost matrix shares the loss terms (class cost as 1 - prob); matching
    runs on detached values, the loss itself on tape nodes, so gradients flow
    through the matched predictions only.
    """
    gt_c = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 2)
    gt_v = np.asarray(gt_velocities, dtype=np.float64).reshape(-1, 2)
    n_pred, n_gt = output.centers.rows, gt_c.shape[0]
    targets = np.zeros((n_pred, 1))

    terms = []
    if n_gt:
        pc, pv = output.centers.data, output.velocities.data
        c_center = np.abs(pc[:, None, :] - gt_c[None, :, :]).sum(axis=2)
        c_vel = np.abs(pv[:, None, :] - gt_v[None, :, :]).sum(axis=2)
        c_cls = (1.0 - output.class_probs)[:, None]
        cost = (run_cfg.lambda_center * c_center + run_cfg.lambda_vel * c_vel
                + run_cfg.lambda_cls * c_cls)
        match = hungarian_match(cost)
        p_idx = [p for p, _ in match.pairs]
        g_idx = [g for _, g in match.pairs]
        targets[p_idx] = 1.0

        diff_c = numerics.absval(numerics.sub(
            numerics.gather_rows(output.centers, p_idx), Matrix(gt_c[g_idx])))
        diff_v = numerics.absval(numerics.sub(
            numerics.gather_rows(output.velocities, p_idx), Matrix(gt_v[g_idx])))
        terms.append(numerics.scale(numerics.sum_all(diff_c), run_cfg.lambda_center))
        terms.append(numerics.scale(numerics.sum_all(diff_v), run_cfg.lambda_vel))

    terms.append(numerics.scale(
        numerics.bce_with_logits(output.class_logits, targets), run_cfg.lambda_cls))
    loss = terms[0]
    for t in terms[1:]:
        loss = numerics.add(loss, t)
    return loss


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adaptive-moment estimation; state keyed by parameter name."""

    def __init__(self, params: Dict[str, np.ndarray],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float) -> float:
    """Cosine annealing from lr at step 0 to lr_min at the final step."""
    lo = min(lr_min, lr)
    if total_steps <= 1:
        return lr
    progress = step / (total_steps - 1)
    return lo + 0.5 * (lr - lo) * (1.0 + math.cos(math.pi * progress))


# ---------------------------------------------------------------------------
# training

def episode_seeds(run_cfg: RunConfig) -> List[int]:
    return [rng.derive_seed(run_cfg.seed, rng.EPISODE, i)
            for i in range(run_cfg.episodes)]


def _seed_digest(seeds: List[int]) -> str:
    return f"{rng.derive_seed(0, *seeds):016x}"


def run_episode_loss(decoder: Decoder, frames, scene_cfg: SceneConfig,
                     run_cfg: RunConfig, tape: Optional[Tape]) -> Matrix:
    """Decode all frames with memory carried, summing the per-frame losses."""
    bound = decoder.bind(tape)
    memory = MemoryQueue([], decoder.config.mem_capacity, decoder.config.mem_max_age)
    total = None
    for frame in frames:
        out = decoder.decode_frame(
            frame.tokens, frame.token_coords, frame.frame_id, memory,
            window=scene_cfg.frames, extent=scene_cfg.extent, tape=tape, bound=bound)
        loss = detection_loss(out, frame.gt_centers, frame.gt_velocities, run_cfg)
        total = loss if total is None else numerics.add(total, loss)
        memory = propagate_memory(out, memory, frame.frame_id)
    return total


def train(scene_cfg: SceneConfig, dec_cfg: DecoderConfig,
          run_cfg: RunConfig) -> TrainResult:
    """Streaming training with one Adam step per episode, cosine-annealed lr."""
    decoder = Decoder(dec_cfg, run_cfg.seed)
    adam = Adam(decoder.params)
    seeds = episode_seeds(run_cfg)
    total_steps = run_cfg.episodes * run_cfg.epochs
    log = [f"train variant={dec_cfg.embedding_mode} seed={run_cfg.seed} "
           f"episodes={run_cfg.episodes} epochs={run_cfg.epochs} "
           f"episode_seed_digest={_seed_digest(seeds)}"]
    epoch_losses = []
    step = 0
    for epoch in range(run_cfg.epochs):
        losses = []
        for ep_seed in seeds:
            frames = generate_episode(replace(scene_cfg, seed=ep_seed))
            tape = Tape()
            total = run_episode_loss(decoder, frames, scene_cfg, run_cfg, tape)
            value = total.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, "
                    f"episode seed {ep_seed}; aborting")
            grads = tape.backprop(total)
            adam.step(decoder.params, grads, cosine_lr(step, total_steps,
                                                       run_cfg.lr, run_cfg.lr_min))
            step += 1
            losses.append(value)
        mean_loss = float(np.mean(losses))
        epoch_losses.append(mean_loss)
        log.append(f"epoch {epoch} loss {mean_loss:.17g}")
    return TrainResult(decoder.params, log, epoch_losses, _seed_digest(seeds))


# ---------------------------------------------------------------------------
# evaluation

def match_frame(pred_centers, pred_velocities, pred_probs, gt_centers,
                gt_velocities, run_cfg: RunConfig):
    """One frame's metric accumulation: threshold predictions, Hungarian on
    center L2, drop pairs beyond the match radius.

    Returns (matched, center_err_sum, vel_err_sum, n_pred, n_gt).
    """
    keep = np.flatnonzero(np.asarray(pred_probs) >= run_cfg.score_threshold)
    n_gt = len(gt_centers)
    if keep.size == 0 or n_gt == 0:
        return 0, 0.0, 0.0, int(keep.size), n_gt
    pc = np.asarray(pred_centers)[keep]
    pv = np.asarray(pred_velocities)[keep]
    gc = np.asarray(gt_centers)
    gv = np.asarray(gt_velocities)
    dists = np.sqrt(((pc[:, None, :] - gc[None, :, :]) ** 2).sum(axis=2))
    matched = 0
    center_err = 0.0
    vel_err = 0.0
    for p, g in hungarian_match(dists).pairs:
        if dists[p, g] > run_cfg.match_radius:
            continue
        matched += 1
        center_err += float(dists[p, g])
        vel_err += float(np.linalg.norm(pv[p] - gv[g]))
    return matched, center_err, vel_err, int(keep.size), n_gt


def evaluate(decoder: Decoder, scene_cfg: SceneConfig,
             run_cfg: RunConfig) -> MetricsReport:
    """Pure function of (weights, configs): center/velocity MAE over matched
    pairs, precision and recall at the match radius. Frame 0 is skipped."""
    matched = 0
    n_pred_total = 0
    n_gt_total = 0
    center_err = 0.0
    vel_err = 0.0
    for i in range(run_cfg.eval_episodes):
        ep_seed = rng.derive_seed(run_cfg.seed, rng.EVAL_EPISODE, i)
        frames = generate_episode(replace(scene_cfg, seed=ep_seed))
        memory = MemoryQueue([], decoder.config.mem_capacity,
                             decoder.config.mem_max_age)
        bound = decoder.bind(None)
        for frame in frames:
            out = decoder.decode_frame(
                frame.tokens, frame.token_coords, frame.frame_id, memory,
                window=scene_cfg.frames, extent=scene_cfg.extent, bound=bound)
            if frame.frame_id > 0:
                m, ce, ve, n_pred, n_gt = match_frame(
                    out.centers.data, out.velocities.data, out.class_probs,
                    frame.gt_centers, frame.gt_velocities, run_cfg)
                matched += m
                center_err += ce
                vel_err += ve
                n_pred_total += n_pred
                n_gt_total += n_gt
            memory = propagate_memory(out, memory, frame.frame_id)
    return MetricsReport(
        variant=decoder.config.embedding_mode,
        seed=str(run_cfg.seed),
        center_mae=center_err / matched if matched else -1.0,
        velocity_mae=vel_err / matched if matched else -1.0,
        precision=matched / n_pred_total if n_pred_total else 0.0,
        recall=matched / n_gt_total if n_gt_total else 0.0,
        matched=matched,
        predictions=n_pred_total,
        gt_count=n_gt_total,
    )


def train_and_evaluate(scene_cfg: SceneConfig, dec_cfg: DecoderConfig,
                       run_cfg: RunConfig):
    result = train(scene_cfg, dec_cfg, run_cfg)
    decoder = Decoder(dec_cfg, run_cfg.seed)
    decoder.params = result.params
    report = evaluate(decoder, scene_cfg, run_cfg)
    return result, report


# ---------------------------------------------------------------------------
# ablation

def _one_ablation_run(args):
    scene_cfg, dec_cfg, run_cfg, label = args
    result, report = train_and_evaluate(scene_cfg, dec_cfg, run_cfg)
    report.variant = label
    return label, run_cfg.seed, report, result.episode_seed_digest


def run_ablation(scene_cfg: SceneConfig, run_cfg: RunConfig,
                 variant_configs: Dict[str, DecoderConfig],
                 jobs: int = 1) -> List[MetricsReport]:
    """Train and evaluate each variant on identical episode streams.

    Rows come back per (variant, seed) in variant-then-seed order, followed by
    one mean row per variant. The episode-seed digest is asserted identical
    across variants for every seed.
    """
    tasks = []
    for label, dec_cfg in variant_configs.items():
        for s in range(run_cfg.ablation_seeds):
            rc = replace(run_cfg, seed=run_cfg.seed + s)
            tasks.append((scene_cfg, dec_cfg, rc, label))

    if jobs > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(jobs) as pool:
            outcomes = pool.map(_one_ablation_run, tasks)
    else:
        outcomes = [_one_ablation_run(t) for t in tasks]

    digests: Dict[int, str] = {}
    for label, seed, report, digest in outcomes:
        if seed in digests and digests[seed] != digest:
            raise RuntimeError(
                f"episode stream mismatch across variants at seed {seed}")
        digests[seed] = digest

    per_variant = {label: [r for lbl, _, r, _ in outcomes if lbl == label]
                   for label in variant_configs}
    rows: List[MetricsReport] = []
    for label, group in per_variant.items():
        rows.extend(group)
        undefined = any(r.center_mae < 0 for r in group)
        rows.append(MetricsReport(
            variant=label,
            seed="mean",
            center_mae=-1.0 if undefined else
            float(np.mean([r.center_mae for r in group])),
            velocity_mae=-1.0 if undefined else
            float(np.mean([r.velocity_mae for r in group])),
            precision=float(np.mean([r.precision for r in group])),
            recall=float(np.mean([r.recall for r in group])),
            matched=sum(r.matched for r in group),
            predictions=sum(r.predictions for r in group),
            gt_count=sum(r.gt_count for r in group),
        ))
    return rows
