"""Streaming object-query decoder.

Each frame, a fixed set of queries (grid-anchored, learnable features) runs
through pre-norm decoder layers: hybrid self-attention over [queries ||
memory entries] (memory as keys/values only), cross-attention to the frame's
scene tokens, then a feedforward block. Linear heads on the final features
predict a center offset from the anchor, a velocity, and a class logit.

High-score detections are propagated as memory entries carrying their origin
frame id, so the temporal rotary block sees real frame offsets between a
current query and past observations; that relative age signal is what the
velocity head can exploit. Rotation is applied per head to Q and K only,
never to V.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from bevrope import numerics, rng
from bevrope import kernels
from bevrope.embeddings import (
    ChannelPartition,
    FrequencySpectrum,
    angle_matrix,
    normalize_time,
    rotation_tables,
)
from bevrope.numerics import ConfigurationError, Matrix

EMBEDDING_MODES = (
    "none",
    "learnable",
    "sinusoidal_additive",
    "rope_spatial",
    "mrope_spatiotemporal",
)
_ROTARY_MODES = ("rope_spatial", "mrope_spatiotemporal")


@dataclass
class Detection:
    center: np.ndarray      # extent units
    velocity: np.ndarray    # extent units per frame
    class_prob: float


@dataclass
class QueryState:
    feature: Matrix         # 1 x model_dim
    anchor: np.ndarray      # (2,), extent units
    frame_id: int           # origin frame, kept across propagation
    score: float
    rank: int = 0           # position in its insertion batch; tie-break only
    anchor_node: Optional[Matrix] = None  # 1 x 2 tracked view of the anchor;
    #                                       keeps the coords -> angles path
    #                                       differentiable across frames


@dataclass
class MemoryQueue:
    entries: List[QueryState] = field(default_factory=list)
    capacity: int = 64
    max_age: int = 4

    def ages(self, current_frame: int) -> List[int]:
        return [current_frame - e.frame_id for e in self.entries]


@dataclass(frozen=True)
class DecoderConfig:
    model_dim: int = 64
    heads: int = 4
    layers: int = 2
    n_queries: int = 16
    ffn_dim: int = 128
    embedding_mode: str = "mrope_spatiotemporal"
    pairs_t: int = -1        # -1 = derive from embedding_mode and head_dim
    pairs_x: int = -1
    pairs_y: int = -1
    freq_base: float = 10000.0
    freq_base_t: float = 10000.0
    position_scale: float = 128.0
    time_scale: float = 32.0
    mem_capacity: int = 64
    mem_max_age: int = 4
    rotate_self: int = 1
    rotate_cross: int = 1
    restamp_memory: int = 0  # ablation: stamp memory coords with the current frame
    head_init: str = "zero"
    max_positions: int = 256  # learnable token-table rows

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigurationError("model_dim must be divisible by heads")
        if self.head_dim % 2:
            raise ConfigurationError("head_dim must be even")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ConfigurationError(
                f"embedding_mode must be one of {EMBEDDING_MODES}, "
                f"got {self.embedding_mode!r}")
        if self.head_init not in ("zero", "random"):
            raise ConfigurationError("head_init must be 'zero' or 'random'")
        if min(self.layers, self.n_queries, self.ffn_dim) < 1:
            raise ConfigurationError("layers, n_queries, ffn_dim must be positive")
        self.partition  # validate the pair split eagerly

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    @property
    def partition(self) -> ChannelPartition:
        if self.pairs_t < 0:
            if self.embedding_mode == "rope_spatial":
                return ChannelPartition.spatial_only(self.head_dim)
            return ChannelPartition.default_for(self.head_dim)
        part = ChannelPartition(self.pairs_t, self.pairs_x, self.pairs_y)
        if part.total != self.head_dim // 2:
            raise ConfigurationError(
                f"partition covers {part.total} pairs, head_dim {self.head_dim} "
                f"has {self.head_dim // 2}")
        if self.embedding_mode == "rope_spatial" and part.pairs_t:
            raise ConfigurationError("rope_spatial requires pairs_t = 0")
        return part

    @property
    def spectrum_t(self) -> FrequencySpectrum:
        return FrequencySpectrum(self.partition.pairs_t, self.freq_base_t,
                                 self.time_scale)

    @property
    def spectrum_xy(self) -> FrequencySpectrum:
        return FrequencySpectrum(self.partition.pairs_x, self.freq_base,
                                 self.position_scale)

    @property
    def uses_rotary(self) -> bool:
        return self.embedding_mode in _ROTARY_MODES


class FrameOutput:
    """Per-frame decoder outputs; the Detection list is built on demand."""

    __slots__ = ("features", "centers", "velocities", "class_logits",
                 "class_probs", "_detections")

    def __init__(self, features: Matrix, centers: Matrix, velocities: Matrix,
                 class_logits: Matrix, class_probs: np.ndarray):
        self.features = features          # n_queries x model_dim, post final norm
        self.centers = centers            # n_queries x 2
        self.velocities = velocities      # n_queries x 2
        self.class_logits = class_logits  # n_queries x 1
        self.class_probs = class_probs    # (n_queries,)
        self._detections: Optional[List[Detection]] = None

    @property
    def detections(self) -> List[Detection]:
        if self._detections is None:
            self._detections = [
                Detection(self.centers.data[i].copy(),
                          self.velocities.data[i].copy(),
                          float(self.class_probs[i]))
                for i in range(self.centers.rows)]
        return self._detections


def anchor_grid(n_queries: int, extent: float) -> np.ndarray:
    """Query anchors on a uniform grid over [-extent, extent]^2."""
    side = int(np.ceil(np.sqrt(n_queries)))
    width = 2.0 * extent / side
    line = -extent + (np.arange(side) + 0.5) * width
    xs, ys = np.meshgrid(line, line, indexing="xy")
    return np.stack([xs.ravel(), ys.ravel()], axis=1)[:n_queries].copy()


def rotary_attention(queries: Matrix, query_coords, keys: Matrix, key_coords,
                     values: Matrix, weights, n_heads: int,
                     partition: ChannelPartition,
                     spec_t: FrequencySpectrum, spec_xy: FrequencySpectrum,
                     rotate: bool = True, collect_diag: bool = False,
                     tables=None):
    """Multi-head attention with rotary-rotated Q/K.

    weights is the (wq, wk, wv, wo) projection tuple; coords are normalized
    (x, y, t) rows matching the corresponding feature matrix. Values are
    aggregated unrotated. `tables` short-circuits the per-call cos/sin build
    with precomputed (q_cos, q_sin, k_cos, k_sin).
    """
    wq, wk, wv, wo = weights
    if len(np.asarray(query_coords)) != queries.rows or \
            len(np.asarray(key_coords)) != keys.rows:
        raise ConfigurationError("coordinate count does not match row count")
    if wq.cols != 2 * partition.total * n_heads:
        raise ConfigurationError(
            f"projection width {wq.cols} does not cover {n_heads} heads of "
            f"{2 * partition.total} rotated channels")
    q = numerics.matmul(queries, wq)
    k = numerics.matmul(keys, wk)
    v = numerics.matmul(values, wv)
    if rotate and partition.total:
        if tables is None:
            tables = make_rotation_tables(query_coords, partition, spec_t, spec_xy,
                                          n_heads) + \
                     make_rotation_tables(key_coords, partition, spec_t, spec_xy,
                                          n_heads)
        q = numerics.rotate_pairs(q, tables[0], tables[1])
        k = numerics.rotate_pairs(k, tables[2], tables[3])
    out, diag = numerics.attention_core(q, k, v, n_heads, collect_diag=collect_diag)
    return numerics.matmul(out, wo), diag


def make_rotation_tables(coords, partition, spec_t, spec_xy, n_heads):
    return rotation_tables(
        angle_matrix(np.asarray(coords), partition, spec_t, spec_xy), n_heads)


class Decoder:
    """Weights plus the per-frame forward pass. One instance per run."""

    def __init__(self, config: DecoderConfig, seed: int):
        self.config = config
        self.seed = seed
        self.params = self._init_params()

    # -- parameters ---------------------------------------------------------

    def _draw(self, name: str, shape, scale: float) -> np.ndarray:
        # per-name streams: adding or removing one parameter never shifts
        # the initialization of any other
        return rng.stream(self.seed, rng.INIT, name).standard_normal(shape) * scale

    def _init_params(self) -> dict:
        cfg = self.config
        d, f = cfg.model_dim, cfg.ffn_dim
        proj_scale = 1.0 / np.sqrt(d)
        p: dict[str, np.ndarray] = {}
        p["query_embed"] = self._draw("query_embed", (cfg.n_queries, d), 1.0)
        for layer in range(cfg.layers):
            for blk in ("sa", "ca"):
                for w in ("wq", "wk", "wv", "wo"):
                    name = f"l{layer}.{blk}.{w}"
                    p[name] = self._draw(name, (d, d), proj_scale)
            for ln in ("ln1", "ln2", "ln3"):
                p[f"l{layer}.{ln}.g"] = np.ones((1, d))
                p[f"l{layer}.{ln}.b"] = np.zeros((1, d))
            p[f"l{layer}.ffn.w1"] = self._draw(f"l{layer}.ffn.w1", (d, f), proj_scale)
            p[f"l{layer}.ffn.b1"] = np.zeros((1, f))
            p[f"l{layer}.ffn.w2"] = self._draw(f"l{layer}.ffn.w2", (f, d),
                                               1.0 / np.sqrt(f))
            p[f"l{layer}.ffn.b2"] = np.zeros((1, d))
        p["final_ln.g"] = np.ones((1, d))
        p["final_ln.b"] = np.zeros((1, d))
        for head, width in (("center", 2), ("vel", 2), ("cls", 1)):
            wname, bname = f"head.{head}.w", f"head.{head}.b"
            if cfg.head_init == "zero":
                p[wname] = np.zeros((d, width))
                p[bname] = np.zeros((1, width))
            else:
                p[wname] = self._draw(wname, (d, width), 0.02)
                p[bname] = self._draw(bname, (1, width), 0.02)
        if cfg.embedding_mode == "learnable":
            p["pe.query_table"] = self._draw("pe.query_table", (cfg.n_queries, d), 0.1)
            p["pe.token_table"] = self._draw("pe.token_table", (cfg.max_positions, d), 0.1)
        return p

    def bind(self, tape: Optional[numerics.Tape]) -> dict:
        """Wrap every parameter for one episode; tracked when tape is given."""
        if tape is None:
            return {name: Matrix(arr) for name, arr in self.params.items()}
        return {name: tape.param(name, arr) for name, arr in self.params.items()}

    # -- embedding helpers --------------------------------------------------

    def _sinusoidal_block(self, coords: np.ndarray) -> np.ndarray:
        """Additive sine/cosine embedding split across (t, x, y) like the
        rotary partition, sized to the full model width."""
        cfg = self.config
        part = cfg.partition
        n = coords.shape[0]
        blocks = []
        for pairs, column, spec in (
            (part.pairs_t, 2, cfg.spectrum_t),
            (part.pairs_x, 0, cfg.spectrum_xy),
            (part.pairs_y, 1, cfg.spectrum_xy),
        ):
            dim = 2 * pairs * cfg.heads
            if dim == 0:
                continue
            freqs = spec.base ** (-np.arange(0, dim, 2) / dim)
            args = coords[:, column:column + 1] * spec.position_scale * freqs[None, :]
            block = np.empty((n, dim))
            block[:, 0::2] = np.sin(args)
            block[:, 1::2] = np.cos(args)
            blocks.append(block)
        return np.concatenate(blocks, axis=1)

    def _coords(self, xy: np.ndarray, t_norm, extent: float,
                shift) -> np.ndarray:
        """Normalized (x, y, t) rows; vectorized normalize_bev + normalize_time."""
        out = np.empty((xy.shape[0], 3))
        out[:, :2] = np.clip((xy + extent) / (2.0 * extent), 0.0, 1.0)
        out[:, 2] = t_norm
        if shift is not None:
            out += np.asarray(shift)[None, :]
        return out

    def _memory_angles(self, mem_entries, t_now: float, extent: float,
                       window: int, shift) -> Matrix:
        """Per-pair rotation angles for memory keys, on the tape.

        Memory anchors are predicted centers from earlier frames, so the
        normalize -> scale -> angle chain is built from ops; the temporal
        block uses the (constant) origin frame ids.
        """
        cfg = self.config
        part = cfg.partition
        anchors = numerics.concat_rows([
            e.anchor_node if e.anchor_node is not None else Matrix(e.anchor[None, :])
            for e in mem_entries])
        xy = numerics.clip01(numerics.affine(anchors, 1.0 / (2.0 * extent), 0.5))
        if shift is not None:
            xy = numerics.add_bias(xy, Matrix(np.asarray(shift, dtype=float)[None, :2]))
        blocks = []
        if part.pairs_t:
            t = np.array([t_now if cfg.restamp_memory
                          else normalize_time(e.frame_id, window)
                          for e in mem_entries])
            if shift is not None:
                t = t + np.asarray(shift)[2]
            w_t = cfg.spectrum_t.frequencies() * cfg.spectrum_t.position_scale
            blocks.append(Matrix(t[:, None] * w_t[None, :]))
        if part.pairs_x:
            w_xy = Matrix((cfg.spectrum_xy.frequencies()
                           * cfg.spectrum_xy.position_scale)[None, :])
            blocks.append(numerics.matmul(numerics.slice_cols(xy, 0, 1), w_xy))
            blocks.append(numerics.matmul(numerics.slice_cols(xy, 1, 2), w_xy))
        per_head = numerics.concat_cols(blocks)
        if cfg.heads == 1:
            return per_head
        return numerics.concat_cols([per_head] * cfg.heads)

    # -- forward ------------------------------------------------------------

    def decode_frame(self, tokens: np.ndarray, token_coords: np.ndarray,
                     frame_id: int, memory: MemoryQueue, *, window: int,
                     extent: float, tape: Optional[numerics.Tape] = None,
                     bound: Optional[dict] = None, anchors: Optional[np.ndarray] = None,
                     coord_shift=None, collect: Optional[list] = None) -> FrameOutput:
        """Run the decoder on one frame. `bound` carries tape-bound parameters
        when several frames share a tape; `coord_shift` adds a constant to all
        normalized coordinates (invariance probes)."""
        cfg = self.config
        if tokens.shape[0] == 0:
            raise ConfigurationError("decode_frame needs at least one scene token")
        if tokens.shape[1] != cfg.model_dim:
            raise ConfigurationError(
                f"token width {tokens.shape[1]} != model_dim {cfg.model_dim}")
        b = bound if bound is not None else self.bind(tape)
        if anchors is None:
            anchors = anchor_grid(cfg.n_queries, extent)

        t_now = normalize_time(frame_id, window)
        q_coords = self._coords(anchors, t_now, extent, coord_shift)
        tok_coords = self._coords(token_coords, t_now, extent, coord_shift)

        mem_entries = memory.entries
        if mem_entries:
            mem_xy = np.stack([e.anchor for e in mem_entries])
            mem_t = np.array([
                t_now if cfg.restamp_memory else normalize_time(e.frame_id, window)
                for e in mem_entries])
            mem_coords = self._coords(mem_xy, 0.0, extent, None)
            mem_coords[:, 2] = mem_t
            if coord_shift is not None:
                mem_coords += np.asarray(coord_shift)[None, :]
            kv_coords = np.concatenate([q_coords, mem_coords], axis=0)
        else:
            kv_coords = q_coords

        # input features, positional signal applied per embedding mode
        x = b["query_embed"]
        tok_in = Matrix(tokens)
        mem_in = numerics.concat_rows([e.feature for e in mem_entries]) \
            if mem_entries else None
        if cfg.embedding_mode == "learnable":
            x = numerics.add(x, b["pe.query_table"])
            if tokens.shape[0] > cfg.max_positions:
                raise ConfigurationError(
                    f"{tokens.shape[0]} tokens exceed max_positions "
                    f"{cfg.max_positions}")
            tok_pe = numerics.gather_rows(b["pe.token_table"],
                                          np.arange(tokens.shape[0]))
            tok_in = numerics.add(tok_in, tok_pe)
        elif cfg.embedding_mode == "sinusoidal_additive":
            x = numerics.add(x, Matrix(self._sinusoidal_block(q_coords)))
            tok_in = Matrix(tokens + self._sinusoidal_block(tok_coords))
            if mem_in is not None:
                mem_in = numerics.add(
                    mem_in, Matrix(self._sinusoidal_block(kv_coords[cfg.n_queries:])))

        part, spec_t, spec_xy = cfg.partition, cfg.spectrum_t, cfg.spectrum_xy
        rot_self = cfg.uses_rotary and bool(cfg.rotate_self) and part.total > 0
        rot_cross = cfg.uses_rotary and bool(cfg.rotate_cross) and part.total > 0
        q_tab = ca_tables = mem_angles = None
        if rot_self or rot_cross:
            q_tab = make_rotation_tables(q_coords, part, spec_t, spec_xy, cfg.heads)
            if rot_cross:
                ca_tables = q_tab + make_rotation_tables(
                    tok_coords, part, spec_t, spec_xy, cfg.heads)
        if rot_self and mem_in is not None:
            mem_angles = self._memory_angles(mem_entries, t_now, extent, window,
                                             coord_shift)
        weights = lambda layer, blk: (b[f"l{layer}.{blk}.wq"], b[f"l{layer}.{blk}.wk"],
                                      b[f"l{layer}.{blk}.wv"], b[f"l{layer}.{blk}.wo"])

        for layer in range(cfg.layers):
            ln = lambda tag, m: numerics.layer_norm_affine(
                m, b[f"l{layer}.{tag}.g"], b[f"l{layer}.{tag}.b"])
            wq, wk, wv, wo = weights(layer, "sa")
            xn = ln("ln1", x)
            q = numerics.matmul(xn, wq)
            k_q = numerics.matmul(xn, wk)
            if rot_self:
                q = numerics.rotate_pairs(q, q_tab[0], q_tab[1])
                k_q = numerics.rotate_pairs(k_q, q_tab[0], q_tab[1])
            if mem_in is not None:
                memn = ln("ln1", mem_in)
                k_m = numerics.matmul(memn, wk)
                if rot_self:
                    # memory coordinates are earlier predictions, so their
                    # rotation stays on the tape
                    k_m = numerics.rotate_pairs_by_angles(k_m, mem_angles)
                k = numerics.concat_rows([k_q, k_m])
                v = numerics.concat_rows([numerics.matmul(xn, wv),
                                          numerics.matmul(memn, wv)])
            else:
                k = k_q
                v = numerics.matmul(xn, wv)
            att, diag = numerics.attention_core(q, k, v, cfg.heads,
                                                collect_diag=collect is not None)
            if collect is not None:
                collect.append(diag)
            x = numerics.add(x, numerics.matmul(att, wo))

            xn2 = ln("ln2", x)
            ca, diag = rotary_attention(
                xn2, q_coords, tok_in, tok_coords, tok_in, weights(layer, "ca"),
                cfg.heads, part, spec_t, spec_xy, rotate=rot_cross,
                collect_diag=collect is not None, tables=ca_tables)
            if collect is not None:
                collect.append(diag)
            x = numerics.add(x, ca)

            xn3 = ln("ln3", x)
            h = numerics.gelu(numerics.add_bias(
                numerics.matmul(xn3, b[f"l{layer}.ffn.w1"]), b[f"l{layer}.ffn.b1"]))
            x = numerics.add(x, numerics.add_bias(
                numerics.matmul(h, b[f"l{layer}.ffn.w2"]), b[f"l{layer}.ffn.b2"]))

        final = numerics.layer_norm_affine(x, b["final_ln.g"], b["final_ln.b"])
        return self.prediction_heads(final, anchors, b)

    def prediction_heads(self, features: Matrix, anchors: np.ndarray,
                         bound: dict) -> FrameOutput:
        """Center = anchor + offset head; velocity and class logit are linear."""
        offsets = numerics.add_bias(numerics.matmul(features, bound["head.center.w"]),
                                    bound["head.center.b"])
        centers = numerics.add(Matrix(anchors), offsets)
        velocities = numerics.add_bias(numerics.matmul(features, bound["head.vel.w"]),
                                       bound["head.vel.b"])
        logits = numerics.add_bias(numerics.matmul(features, bound["head.cls.w"]),
                                   bound["head.cls.b"])
        probs = kernels.sigmoid(logits.data)[:, 0].copy()
        return FrameOutput(features, centers, velocities, logits, probs)


def propagate_memory(output: FrameOutput, memory: MemoryQueue,
                     current_frame: int) -> MemoryQueue:
    """Append the frame's top-k detections, evict stale and low-score entries.

    k = capacity / max_age per frame; new entries carry the predicted center
    as anchor and the current frame as origin. Entries whose age exceeds
    max_age are dropped; overflow beyond capacity evicts the lowest scores.
    """
    k = max(1, memory.capacity // memory.max_age)
    survivors = [e for e in memory.entries
                 if current_frame - e.frame_id <= memory.max_age]

    order = np.argsort(-output.class_probs, kind="stable")[:k]
    fresh = [QueryState(feature=numerics.gather_rows(output.features, [int(i)]),
                        anchor=output.centers.data[int(i)].copy(),
                        frame_id=current_frame,
                        score=float(output.class_probs[int(i)]),
                        rank=rank,
                        anchor_node=numerics.gather_rows(output.centers, [int(i)]))
             for rank, i in enumerate(order)]

    entries = survivors + fresh
    if len(entries) > memory.capacity:
        by_score = sorted(entries, key=lambda e: (-e.score, e.frame_id, e.rank))
        keep = set(id(e) for e in by_score[:memory.capacity])
        entries = [e for e in entries if id(e) in keep]
    return MemoryQueue(entries, memory.capacity, memory.max_age)
