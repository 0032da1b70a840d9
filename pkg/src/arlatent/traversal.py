"""Latent traversals and quantitative checks of attribute control.

A traversal decodes one base code repeatedly while sweeping a single latent
coordinate across a value grid.  Decoded images are re-segmented by snapping
pixels to the generator's region intensity levels, giving a measured area
per step; the rank correlation between swept values and measured areas
quantifies whether the dimension controls the attribute monotonically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ContractError, UndefinedCorrelationError
from .metrics import spearman
from .models import ConvVAE
from .synth import ATTRIBUTE_NAMES, PHASE_CHANNEL, REGION_INTENSITY, DatasetArchive

INTENSITY_BAND = 0.15

_LEVELS = np.array(sorted(REGION_INTENSITY.values()))
_LEVEL_FOR_REGION = {k: v for k, v in REGION_INTENSITY.items() if k != "background"}


@dataclass
class TraversalGrid:
    """Decodes of one base code with coordinate ``dim`` swept over ``values``."""

    base_code: np.ndarray  # (D,)
    dim: int
    values: np.ndarray  # (T,), strictly increasing
    decoded: np.ndarray  # (T, C, H, W) float32

    @property
    def steps(self) -> int:
        return len(self.values)


def traverse(
    model: ConvVAE,
    base_code: np.ndarray,
    dim: int,
    value_range: tuple[float, float] = (-3.0, 3.0),
    steps: int = 9,
) -> TraversalGrid:
    """Decode ``base_code`` with coordinate ``dim`` swept across ``value_range``."""
    base = np.asarray(base_code, dtype=np.float32).reshape(-1)
    if base.shape[0] != model.config.latent_dim:
        raise ContractError(
            f"base code has {base.shape[0]} dims, model expects {model.config.latent_dim}"
        )
    if not (0 <= dim < model.config.latent_dim):
        raise ContractError(f"dim {dim} out of range for latent size {model.config.latent_dim}")
    if steps < 3:
        raise ContractError(f"need at least 3 steps, got {steps}")
    lo, hi = value_range
    if not lo < hi:
        raise ContractError(f"range must be increasing, got {value_range}")
    values = np.linspace(lo, hi, steps, dtype=np.float64)
    grid = np.tile(base, (steps, 1))
    grid[:, dim] = values.astype(np.float32)
    model.eval()
    with torch.no_grad():
        decoded = model.decode(torch.from_numpy(grid)).numpy()
    return TraversalGrid(base_code=base, dim=dim, values=values, decoded=decoded)


def _attribute_region_channel(attribute_name: str) -> tuple[str, int]:
    parts = attribute_name.split("_")
    if len(parts) == 3 and parts[1] == "area" and parts[0] in _LEVEL_FOR_REGION \
            and parts[2] in PHASE_CHANNEL:
        return parts[0], PHASE_CHANNEL[parts[2]]
    raise ContractError(
        f"unknown attribute {attribute_name!r}; expected one of {ATTRIBUTE_NAMES}"
    )


def measure_decoded_attribute(image: np.ndarray, attribute_name: str) -> float:
    """Re-segment a decoded image and count pixels for one named region.

    Each pixel is snapped to the nearest generator intensity level and
    counted when it lands within ``INTENSITY_BAND`` of the region's level.
    On generator output this reproduces the stored attributes exactly.
    """
    region, channel = _attribute_region_channel(attribute_name)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        if channel >= img.shape[0]:
            channel = 0  # single-phase models decode one channel
        plane = img[channel]
    elif img.ndim == 2:
        plane = img
    else:
        raise ContractError(f"expected (H, W) or (C, H, W) image, got shape {img.shape}")
    level = _LEVEL_FOR_REGION[region]
    nearest = _LEVELS[np.argmin(np.abs(plane[..., None] - _LEVELS), axis=-1)]
    mask = (nearest == level) & (np.abs(plane - level) <= INTENSITY_BAND)
    return float(mask.sum())


@dataclass
class MonotonicityResult:
    """Mean rank correlation between swept values and measured areas."""

    score: float
    n_bases: int
    n_degenerate: int = 0  # bases whose measured areas were constant

    def __float__(self) -> float:
        return self.score


def traversal_monotonicity(
    model: ConvVAE,
    dim: int,
    attribute_name: str,
    base_codes: np.ndarray,
    value_range: tuple[float, float] = (-3.0, 3.0),
    steps: int = 9,
) -> MonotonicityResult:
    """Mean spearman(values, measured area) over the given base codes.

    Degenerate traversals (constant measured area, e.g. a collapsed decoder)
    contribute 0 and are counted in ``n_degenerate`` instead of raising.
    """
    base_codes = np.atleast_2d(np.asarray(base_codes, dtype=np.float32))
    scores = []
    degenerate = 0
    for base in base_codes:
        grid = traverse(model, base, dim, value_range, steps)
        measured = np.array(
            [measure_decoded_attribute(img, attribute_name) for img in grid.decoded]
        )
        try:
            scores.append(spearman(grid.values, measured))
        except UndefinedCorrelationError:
            scores.append(0.0)
            degenerate += 1
    return MonotonicityResult(
        score=float(np.mean(scores)), n_bases=len(base_codes), n_degenerate=degenerate
    )


def sample_base_codes(
    model: ConvVAE,
    dataset: DatasetArchive,
    n_bases: int,
    seed: int = 0,
    split: str = "test",
) -> np.ndarray:
    """Posterior means of randomly chosen split samples (on-manifold bases)."""
    from .metrics import select_phase_channels

    idx = dataset.split_indices(split)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(idx, size=min(n_bases, len(idx)), replace=False)
    images = select_phase_channels(dataset.images[chosen], model.config.phase)
    model.eval()
    with torch.no_grad():
        mu, _ = model.encode(torch.from_numpy(images))
    return mu.numpy()


# ---------------------------------------------------------------------------
# figure / record emission


def _to_strip(decoded: np.ndarray, channel: int, pad: int = 1) -> np.ndarray:
    steps, _, h, w = decoded.shape
    channel = min(channel, decoded.shape[1] - 1)
    strip = np.ones((h, steps * (w + pad) - pad), dtype=np.float32)
    for t in range(steps):
        strip[:, t * (w + pad) : t * (w + pad) + w] = decoded[t, channel]
    return strip


def save_traversal_report(
    grids: dict[int, TraversalGrid],
    attribute_for_dim: dict[int, str],
    out_dir: str | Path,
    stem: str = "traversal",
) -> tuple[Path, Path]:
    """Write a PNG strip (one row per dim) plus a JSON record of measurements."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    record: dict[str, dict] = {}
    for dim in sorted(grids):
        grid = grids[dim]
        attribute = attribute_for_dim.get(dim)
        channel = _attribute_region_channel(attribute)[1] if attribute else 0
        rows.append(_to_strip(grid.decoded, channel))
        measured = (
            [measure_decoded_attribute(img, attribute) for img in grid.decoded]
            if attribute
            else None
        )
        record[str(dim)] = {
            "attribute": attribute,
            "values": [float(v) for v in grid.values],
            "measured_area": measured,
        }
    pad = 2
    height = sum(r.shape[0] for r in rows) + pad * (len(rows) - 1)
    width = max(r.shape[1] for r in rows)
    canvas = np.ones((height, width), dtype=np.float32)
    y = 0
    for r in rows:
        canvas[y : y + r.shape[0], : r.shape[1]] = r
        y += r.shape[0] + pad
    png_path = out_dir / f"{stem}.png"
    Image.fromarray((np.clip(canvas, 0, 1) * 255).astype(np.uint8)).save(png_path)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(record, indent=2, sort_keys=True))
    return png_path, json_path
