"""Synthetic streaming BEV episodes.

Each episode is a handful of constant-velocity point objects on the ground
plane, observed as a grid of occupancy tokens: channel 0 of every token is a
Gaussian bump around the object centers, the remaining channels are seeded
noise. A single frame therefore carries no velocity information at all; any
velocity skill has to come from temporal modeling.

Episodes are pure functions of (config, seed) via counter-based streams, and
serialize to a plain text format for cross-implementation diffing.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import List

import numpy as np

from bevrope import rng
from bevrope.kernels import raster_gauss
from bevrope.numerics import ConfigurationError


@dataclass(frozen=True)
class SceneConfig:
    extent: float = 50.0
    grid_n: int = 16
    n_objects: int = 1
    frames: int = 8
    speed_min: float = 2.0
    speed_max: float = 3.0
    noise_sigma: float = 0.05
    token_feature_dim: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.grid_n < 2:
            raise ConfigurationError("grid_n must be at least 2")
        if self.frames < 2:
            raise ConfigurationError("frames must be at least 2")
        if not 1 <= self.n_objects <= 8:
            raise ConfigurationError("n_objects must be in [1, 8]")
        if not 0 < self.speed_min <= self.speed_max:
            raise ConfigurationError("need 0 < speed_min <= speed_max")
        if self.speed_max * self.frames >= self.extent:
            raise ConfigurationError("speed_max * frames must stay below the extent")
        if self.token_feature_dim < 1:
            raise ConfigurationError("token_feature_dim must be positive")


@dataclass
class EpisodeFrame:
    frame_id: int
    tokens: np.ndarray        # (grid_n^2, token_feature_dim)
    token_coords: np.ndarray  # (grid_n^2, 2) cell centers, extent units
    gt_centers: np.ndarray    # (n_objects, 2)
    gt_velocities: np.ndarray  # (n_objects, 2), units per frame
    gt_classes: np.ndarray    # (n_objects,), all 1


def cell_centers(config: SceneConfig) -> np.ndarray:
    """Cell centers of the uniform grid over [-extent, extent]^2,
    row-major with x varying fastest."""
    r, n = config.extent, config.grid_n
    width = 2.0 * r / n
    line = -r + (np.arange(n) + 0.5) * width
    xs, ys = np.meshgrid(line, line, indexing="xy")
    return np.ascontiguousarray(np.stack([xs.ravel(), ys.ravel()], axis=1))


def rasterize_tokens(gt_centers: np.ndarray, config: SceneConfig,
                     frame_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Token matrix for one frame: channel 0 is summed Gaussian occupancy
    (sigma = one cell width), the rest seeded noise."""
    coords = cell_centers(config)
    width = 2.0 * config.extent / config.grid_n
    occupancy = raster_gauss(coords, np.ascontiguousarray(gt_centers, dtype=np.float64),
                             width)
    tokens = np.empty((coords.shape[0], config.token_feature_dim))
    tokens[:, 0] = occupancy
    if config.token_feature_dim > 1:
        noise = rng.stream(config.seed, rng.NOISE, frame_id).standard_normal(
            (coords.shape[0], config.token_feature_dim - 1))
        tokens[:, 1:] = noise * config.noise_sigma
    return tokens, coords


_COORD_GRID = 2.0 ** 20  # placements and velocities snap to 2^-20 units so
#                          frame-to-frame center differences are exactly the
#                          velocity in float64 (all intermediates stay exact)


def generate_episode(config: SceneConfig) -> List[EpisodeFrame]:
    """Constant-velocity episode; bitwise-identical for identical config."""
    k = config.n_objects
    r = config.extent
    gen = rng.stream(config.seed, rng.PLACEMENT)
    centers0 = gen.uniform(-r / 2.0, r / 2.0, size=(k, 2))
    headings = gen.uniform(0.0, 2.0 * np.pi, size=k)
    speeds = gen.uniform(config.speed_min, config.speed_max, size=k)
    velocities = np.stack([speeds * np.cos(headings), speeds * np.sin(headings)], axis=1)
    centers0 = np.round(centers0 * _COORD_GRID) / _COORD_GRID
    velocities = np.round(velocities * _COORD_GRID) / _COORD_GRID

    episode = []
    for f in range(config.frames):
        centers = centers0 + f * velocities
        tokens, coords = rasterize_tokens(centers, config, f)
        episode.append(EpisodeFrame(
            frame_id=f,
            tokens=tokens,
            token_coords=coords,
            gt_centers=centers,
            gt_velocities=velocities.copy(),
            gt_classes=np.ones(k, dtype=np.int64),
        ))
    return episode


# ---------------------------------------------------------------------------
# text serialization (17 significant digits, space separated)

def _fmt(values) -> str:
    return " ".join(f"{v:.17g}" for v in values)


def write_episode(path, config: SceneConfig, episode: List[EpisodeFrame]) -> None:
    lines = ["episode " + " ".join(
        f"{f.name}={getattr(config, f.name):.17g}" if isinstance(getattr(config, f.name), float)
        else f"{f.name}={getattr(config, f.name)}"
        for f in fields(config))]
    for frame in episode:
        for i in range(frame.tokens.shape[0]):
            lines.append(f"tok {frame.frame_id} {i} "
                         f"{_fmt(frame.token_coords[i])} {_fmt(frame.tokens[i])}")
        for j in range(frame.gt_centers.shape[0]):
            lines.append(f"gt {frame.frame_id} {j} "
                         f"{_fmt(frame.gt_centers[j])} {_fmt(frame.gt_velocities[j])} "
                         f"{frame.gt_classes[j]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_episode(path) -> tuple[SceneConfig, List[EpisodeFrame]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("episode "):
        raise ConfigurationError(f"{path} is not an episode file")
    kv = dict(item.split("=", 1) for item in lines[0].split()[1:])
    kwargs = {}
    for f in fields(SceneConfig):
        raw = kv[f.name]
        kwargs[f.name] = float(raw) if f.type == "float" else int(raw)
    config = SceneConfig(**kwargs)

    m = config.grid_n * config.grid_n
    frames = {}
    for line in lines[1:]:
        parts = line.split()
        kind, frame_id, idx = parts[0], int(parts[1]), int(parts[2])
        frame = frames.setdefault(frame_id, EpisodeFrame(
            frame_id=frame_id,
            tokens=np.zeros((m, config.token_feature_dim)),
            token_coords=np.zeros((m, 2)),
            gt_centers=np.zeros((config.n_objects, 2)),
            gt_velocities=np.zeros((config.n_objects, 2)),
            gt_classes=np.ones(config.n_objects, dtype=np.int64),
        ))
        values = [float(v) for v in parts[3:]]
        if kind == "tok":
            frame.token_coords[idx] = values[:2]
            frame.tokens[idx] = values[2:]
        elif kind == "gt":
            frame.gt_centers[idx] = values[:2]
            frame.gt_velocities[idx] = values[2:4]
            frame.gt_classes[idx] = int(values[4])
        else:
            raise ConfigurationError(f"unknown record {kind!r} in {path}")
    return config, [frames[f] for f in sorted(frames)]
