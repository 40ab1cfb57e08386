"""Positional embedding kernels.

Covers the whole comparison space: classical sinusoidal vectors, a learnable
position table, and rotary embeddings in which channel pairs of query/key
vectors are rotated by coordinate-proportional angles. The multimodal variant
splits the pairs of each attention head into a temporal block and two spatial
blocks (ground-plane x and y); each block gets its own geometric frequency
vector, so attention logits depend only on per-axis relative offsets.

Coordinates are normalized before use: BEV positions to [0,1]^2 over the
scene extent, frame ids to [0,1] over the episode window. Normalized
coordinates are then multiplied by a position scale so the top rotary
frequency resolves offsets much smaller than the full extent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bevrope import numerics
from bevrope.numerics import ConfigurationError, Matrix


@dataclass(frozen=True)
class FrequencySpectrum:
    """Geometric frequency vector w_i = base^(-i / n_pairs), plus the
    position scale applied to normalized coordinates before rotation."""

    n_pairs: int
    base: float = 10000.0
    position_scale: float = 128.0

    def __post_init__(self):
        if self.n_pairs < 0:
            raise ConfigurationError("n_pairs must be nonnegative")
        if self.base <= 1.0:
            raise ConfigurationError("frequency base must exceed 1")
        if self.position_scale <= 0.0:
            raise ConfigurationError("position_scale must be positive")

    def frequencies(self) -> np.ndarray:
        if self.n_pairs == 0:
            return np.zeros(0)
        return self.base ** (-np.arange(self.n_pairs) / self.n_pairs)


@dataclass(frozen=True)
class ChannelPartition:
    """Split of a head's channel pairs into [temporal | x | y] blocks."""

    pairs_t: int
    pairs_x: int
    pairs_y: int

    def __post_init__(self):
        if min(self.pairs_t, self.pairs_x, self.pairs_y) < 0:
            raise ConfigurationError("pair counts must be nonnegative")
        if self.pairs_x != self.pairs_y:
            raise ConfigurationError(
                f"spatial symmetry requires pairs_x == pairs_y, "
                f"got {self.pairs_x} and {self.pairs_y}")

    @property
    def total(self) -> int:
        return self.pairs_t + self.pairs_x + self.pairs_y

    @staticmethod
    def default_for(head_dim: int) -> "ChannelPartition":
        """Spatially weighted default: a quarter of the pairs temporal,
        the rest split evenly between x and y. (8, 12, 12) at head_dim 64."""
        pairs = _pairs_for(head_dim)
        pairs_t = pairs // 4
        if (pairs - pairs_t) % 2:
            pairs_t += 1
        spatial = (pairs - pairs_t) // 2
        return ChannelPartition(pairs_t, spatial, spatial)

    @staticmethod
    def spatial_only(head_dim: int) -> "ChannelPartition":
        pairs = _pairs_for(head_dim)
        if pairs % 2:
            raise ConfigurationError(
                f"spatial-only split needs an even pair count, got {pairs}")
        return ChannelPartition(0, pairs // 2, pairs // 2)


def _pairs_for(head_dim: int) -> int:
    if head_dim <= 0 or head_dim % 2:
        raise ConfigurationError(f"head_dim must be even and positive, got {head_dim}")
    return head_dim // 2


def _clamp01(v: float) -> float:
    return 0.0 if v < 0.0 else 1.0 if v > 1.0 else float(v)


@dataclass(frozen=True)
class SpatioTemporalCoord:
    """Normalized (x, y, t), each clamped to [0, 1]."""

    x: float
    y: float
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", _clamp01(self.x))
        object.__setattr__(self, "y", _clamp01(self.y))
        object.__setattr__(self, "t", _clamp01(self.t))


@dataclass(frozen=True)
class RotaryAngles:
    """Per-pair rotation angles, laid out [theta_t | theta_x | theta_y]."""

    values: np.ndarray
    partition: ChannelPartition

    def __post_init__(self):
        if self.values.shape != (self.partition.total,):
            raise ConfigurationError(
                f"angle vector length {self.values.shape} does not match "
                f"partition total {self.partition.total}")


# ---------------------------------------------------------------------------
# classical embeddings

def sinusoidal_pe(pos: float, dim: int, base: float = 10000.0) -> np.ndarray:
    """Fixed sine/cosine position vector: channel 2i holds sin(pos * base^(-2i/dim)),
    channel 2i+1 the matching cosine."""
    if dim <= 0 or dim % 2:
        raise ConfigurationError(f"sinusoidal dim must be even and positive, got {dim}")
    freqs = base ** (-np.arange(0, dim, 2) / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(pos * freqs)
    out[1::2] = np.cos(pos * freqs)
    return out


class LearnablePositionTable:
    """Trainable embedding rows indexed by position."""

    def __init__(self, max_positions: int, dim: int, init: np.ndarray):
        if init.shape != (max_positions, dim):
            raise ConfigurationError(
                f"table init shape {init.shape} vs ({max_positions}, {dim})")
        self.max_positions = max_positions
        self.dim = dim
        self.values = np.array(init, dtype=np.float64)


def lookup_learnable(table: Matrix, index: int) -> Matrix:
    """Row lookup that participates in backprop (gradients reach the row)."""
    if not 0 <= index < table.rows:
        raise ConfigurationError(f"index {index} out of range for {table.rows} rows")
    return numerics.gather_rows(table, [index])


# ---------------------------------------------------------------------------
# coordinate normalization

def normalize_bev(x: float, y: float, extent: float) -> tuple[float, float]:
    """Map ground-plane units in [-extent, extent]^2 to [0,1]^2, clamped."""
    if extent <= 0:
        raise ConfigurationError("extent must be positive")
    return (_clamp01((x + extent) / (2.0 * extent)),
            _clamp01((y + extent) / (2.0 * extent)))


def normalize_time(frame_id: int, window: int) -> float:
    """Map an episode-relative frame id to [0,1], clamped."""
    if window < 1:
        raise ConfigurationError("time window must be at least 1")
    return _clamp01(frame_id / window)


# ---------------------------------------------------------------------------
# rotary angles and rotation

def mrope_angles(coord: SpatioTemporalCoord, partition: ChannelPartition,
                 spec_t: FrequencySpectrum, spec_xy: FrequencySpectrum) -> RotaryAngles:
    """Rotation angles for one coordinate: each block is the scaled coordinate
    times its frequency vector."""
    if spec_t.n_pairs != partition.pairs_t:
        raise ConfigurationError(
            f"temporal spectrum has {spec_t.n_pairs} pairs, partition wants "
            f"{partition.pairs_t}")
    if spec_xy.n_pairs != partition.pairs_x:
        raise ConfigurationError(
            f"spatial spectrum has {spec_xy.n_pairs} pairs, partition wants "
            f"{partition.pairs_x}")
    w_t = spec_t.frequencies()
    w_xy = spec_xy.frequencies()
    values = np.concatenate([
        coord.t * spec_t.position_scale * w_t,
        coord.x * spec_xy.position_scale * w_xy,
        coord.y * spec_xy.position_scale * w_xy,
    ])
    return RotaryAngles(values, partition)


def apply_rotation(v: np.ndarray, angles) -> np.ndarray:
    """Rotate consecutive channel pairs (v[2i], v[2i+1]) by angle i."""
    theta = angles.values if isinstance(angles, RotaryAngles) else np.asarray(angles)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (2 * theta.shape[0],):
        raise ConfigurationError(
            f"vector length {v.shape} does not match {theta.shape[0]} angles")
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty_like(v)
    out[0::2] = v[0::2] * c - v[1::2] * s
    out[1::2] = v[0::2] * s + v[1::2] * c
    return out


def angle_matrix(coords: np.ndarray, partition: ChannelPartition,
                 spec_t: FrequencySpectrum, spec_xy: FrequencySpectrum) -> np.ndarray:
    """mrope_angles for a batch: coords (n, 3) as normalized (x, y, t) rows,
    returning (n, partition.total)."""
    coords = np.asarray(coords, dtype=np.float64)
    if spec_t.n_pairs != partition.pairs_t or spec_xy.n_pairs != partition.pairs_x:
        raise ConfigurationError("spectrum lengths do not match partition")
    w_t = spec_t.frequencies() * spec_t.position_scale
    w_xy = spec_xy.frequencies() * spec_xy.position_scale
    return np.concatenate([
        coords[:, 2:3] * w_t[None, :],
        coords[:, 0:1] * w_xy[None, :],
        coords[:, 1:2] * w_xy[None, :],
    ], axis=1)


def rotation_tables(angles: np.ndarray, n_heads: int) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables for a full (n, heads * 2 * pairs) feature matrix.

    Every head sees the same per-pair angles, so the per-head table is tiled
    across the head blocks of the column axis.
    """
    c = np.cos(angles)
    s = np.sin(angles)
    if n_heads > 1:
        c = np.tile(c, (1, n_heads))
        s = np.tile(s, (1, n_heads))
    return np.ascontiguousarray(c), np.ascontiguousarray(s)
