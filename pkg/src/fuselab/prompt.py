"""Multiscale visual prompt construction from a synthetic frozen encoder.

A symbolic 16x16 image (one-hot color channels per cell) is mapped to one
feature row per patch by a frozen random linear map plus a fixed 2-D
sinusoidal position code, together with a global token averaging the
patches.  The prompt is built by pooling the 16x16 feature grid at one or
more scales, flattening each pooled grid in raster order, and
concatenating fine-to-coarse in the caller's scale order.  Row-level
metadata remembers which scale and grid cell every prompt row came from,
which is what the drop-mask heatmaps aggregate over later.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .tensor import FLOAT, ShapeError, avg_pool2d, concat_rows, load_tensor, max_pool2d, save_tensor

GRID = 16
SCALES = (1, 2, 4)
POOLS = ("avg", "max")


def prompt_rows(scales) -> int:
    """Total prompt rows for a scale list: sum of (16/s)^2."""
    return sum((GRID // s) ** 2 for s in scales)


@dataclass
class EncoderOutput:
    """Frozen encoder result: per-patch features plus one global feature."""

    patches: np.ndarray  # (256, d_in) raster order over the 16x16 grid
    cls: np.ndarray  # (1, d_in)

    def __post_init__(self):
        if self.patches.ndim != 2 or self.patches.shape[0] != GRID * GRID:
            raise ShapeError(f"patches must be ({GRID * GRID}, d), got {self.patches.shape}")
        if self.cls.shape != (1, self.patches.shape[1]):
            raise ShapeError(f"cls must be (1, {self.patches.shape[1]}), got {self.cls.shape}")


@dataclass
class MultiscalePrompt:
    """Stacked pooled feature rows plus per-row scale/position metadata."""

    features: np.ndarray  # (n_rows, d_in)
    scale_of_row: np.ndarray  # (n_rows,) int
    grid_pos_of_row: np.ndarray  # (n_rows, 2) int, (row, col) at that scale
    pool: str = "avg"

    def __post_init__(self):
        n = self.features.shape[0]
        if self.scale_of_row.shape != (n,) or self.grid_pos_of_row.shape != (n, 2):
            raise ShapeError(
                f"metadata rows must match features ({n}), got "
                f"{self.scale_of_row.shape} and {self.grid_pos_of_row.shape}"
            )

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def scales(self) -> tuple[int, ...]:
        seen = []
        for s in self.scale_of_row:
            if s not in seen:
                seen.append(int(s))
        return tuple(seen)

    def rows_for_scale(self, scale: int) -> np.ndarray:
        return np.flatnonzero(self.scale_of_row == scale)


def _coord_code(positions: np.ndarray, width: int) -> np.ndarray:
    """Sinusoidal code of one integer coordinate into `width` channels."""
    code = np.zeros((positions.size, width), dtype=FLOAT)
    pairs = (width + 1) // 2
    rates = (1.0 / 10000.0) ** (2.0 * np.arange(pairs) / max(width, 1))
    angles = positions[:, None] * rates[None, :]
    code[:, 0::2] = np.sin(angles)
    code[:, 1::2] = np.cos(angles)[:, : width // 2]
    return code


@lru_cache(maxsize=8)
def position_code(d_out: int) -> np.ndarray:
    """Fixed 2-D sinusoidal code for the 16x16 grid, (256, d_out)."""
    rows, cols = np.divmod(np.arange(GRID * GRID), GRID)
    col_width = d_out // 2
    row_width = d_out - col_width
    code = np.concatenate(
        [_coord_code(rows.astype(FLOAT), row_width), _coord_code(cols.astype(FLOAT), col_width)],
        axis=1,
    )
    code.setflags(write=False)
    return code


@lru_cache(maxsize=8)
def _content_map(channels: int, d_out: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / np.sqrt(channels), size=(channels, d_out))
    weights.setflags(write=False)
    return weights


def synthetic_encoder(image: np.ndarray, d_out: int, seed: int) -> EncoderOutput:
    """Deterministic stand-in for a frozen vision tower.

    patches = onehot_content @ W + position_code, with W drawn once from
    the seed; cls = mean over the 256 patch rows.
    """
    if image.ndim != 3 or image.shape[:2] != (GRID, GRID):
        raise ShapeError(f"image must be ({GRID}, {GRID}, c), got {image.shape}")
    channels = image.shape[2]
    if d_out < channels:
        raise ValueError(f"d_out={d_out} must be at least the {channels} content channels")
    content = np.asarray(image, dtype=FLOAT).reshape(GRID * GRID, channels)
    patches = content @ _content_map(channels, d_out, seed) + position_code(d_out)
    cls = np.mean(patches, axis=0, keepdims=True)
    return EncoderOutput(patches=patches, cls=cls)


def expected_cls(channels: int, d_out: int, seed: int) -> np.ndarray:
    """The [cls] feature of the average image, (1, d_out).

    A cell holding the uniform mixture of all colors is the expectation
    of a uniformly random cell, so this equals the mean cls over random
    grids without drawing any."""
    content = np.full((1, channels), 1.0 / channels, dtype=FLOAT)
    return content @ _content_map(channels, d_out, seed) + position_code(d_out).mean(axis=0, keepdims=True)


def build_prompt(enc: EncoderOutput, scales=(1, 2), pool: str = "avg") -> MultiscalePrompt:
    """Pool the patch grid at each scale and stack the flattened results.

    Scale s pools with a s x s kernel (s=1 passes through), so it
    contributes (16/s)^2 rows; rows keep the caller's scale order.
    """
    scales = tuple(int(s) for s in scales)
    if not scales:
        raise ValueError("at least one scale is required")
    if any(s not in SCALES for s in scales):
        raise ValueError(f"scales must come from {SCALES}, got {scales}")
    if len(set(scales)) != len(scales):
        raise ValueError(f"duplicate scales in {scales}")
    if pool not in POOLS:
        raise ValueError(f"pool must be one of {POOLS}, got {pool!r}")
    pool_fn = avg_pool2d if pool == "avg" else max_pool2d
    d_in = enc.patches.shape[1]
    grid = enc.patches.reshape(GRID, GRID, d_in)

    blocks, scale_tags, grid_pos = [], [], []
    for s in scales:
        pooled = grid if s == 1 else pool_fn(grid, s)
        side = GRID // s
        blocks.append(pooled.reshape(side * side, d_in))
        scale_tags.append(np.full(side * side, s, dtype=np.int64))
        r, c = np.divmod(np.arange(side * side), side)
        grid_pos.append(np.stack([r, c], axis=1))

    features = blocks[0]
    for block in blocks[1:]:
        features = concat_rows(features, block)
    return MultiscalePrompt(
        features=features,
        scale_of_row=np.concatenate(scale_tags),
        grid_pos_of_row=np.concatenate(grid_pos),
        pool=pool,
    )


def attach_cls(text_tokens: np.ndarray, cls_embedded: np.ndarray) -> np.ndarray:
    """Prepend the embedded global token: exactly one extra row."""
    if cls_embedded.ndim != 2 or cls_embedded.shape[0] != 1:
        raise ShapeError(f"cls_embedded must be (1, d), got {cls_embedded.shape}")
    if text_tokens.ndim != 2 or text_tokens.shape[1] != cls_embedded.shape[1]:
        raise ShapeError(
            f"text tokens {text_tokens.shape} incompatible with cls {cls_embedded.shape}"
        )
    return concat_rows(cls_embedded, text_tokens)


def save_prompt(path, prompt: MultiscalePrompt) -> None:
    """Write features in the binary tensor format plus a JSON metadata sidecar."""
    path = Path(path)
    save_tensor(path, prompt.features)
    sidecar = {
        "pool": prompt.pool,
        "scale_of_row": prompt.scale_of_row.tolist(),
        "grid_pos_of_row": prompt.grid_pos_of_row.tolist(),
    }
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar))


def load_prompt(path) -> MultiscalePrompt:
    path = Path(path)
    features = load_tensor(path)
    sidecar = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    return MultiscalePrompt(
        features=features,
        scale_of_row=np.asarray(sidecar["scale_of_row"], dtype=np.int64),
        grid_pos_of_row=np.asarray(sidecar["grid_pos_of_row"], dtype=np.int64),
        pool=sidecar["pool"],
    )
