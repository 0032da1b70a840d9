"""Synthetic two-phase shape dataset with exactly countable area attributes.

Each sample is a 2-channel image: channel 0 holds the dilated ("ed") phase
and channel 1 the contracted ("es") phase of the same scene.  A scene is a
large elliptical disc (the "lv" region) wrapped in an elliptical ring (the
"myo" region) with a second elliptical blob (the "rv" region) placed to its
left along the horizontal axis.  Regions are rasterized hard (no
anti-aliasing) at distinct intensity levels, so each of the six area
attributes equals the exact pixel count for its region and channel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import archive as archive_io
from .errors import ContractError, CorruptArchiveError, InvalidConfigError, OutOfBoundsError

GENERATOR_VERSION = "1.0"

REGION_INTENSITY = {"background": 0.0, "myo": 0.6, "rv": 0.8, "lv": 1.0}

ATTRIBUTE_NAMES = (
    "lv_area_ed",
    "lv_area_es",
    "rv_area_ed",
    "rv_area_es",
    "myo_area_ed",
    "myo_area_es",
)

PHASE_CHANNEL = {"ed": 0, "es": 1}

# Pixels this close to the canvas border are off limits for any region.
_BORDER_MARGIN = 1.0


@dataclass(frozen=True)
class ShapeSpec:
    """Geometry of one two-phase scene, in pixel units.

    ``rv_offset`` is the signed horizontal displacement of the rv blob centre
    from the scene centre, measured before rotation; it is negative, keeping
    the blob on a fixed side of the disc.  ``rotation`` rotates the whole
    scene about the centre.
    """

    lv_semiaxes_ed: tuple[float, float]
    lv_semiaxes_es: tuple[float, float]
    myo_thickness_ed: float
    myo_thickness_es: float
    rv_semiaxes_ed: tuple[float, float]
    rv_semiaxes_es: tuple[float, float]
    center: tuple[float, float]
    rv_offset: float
    rotation: float = 0.0

    def validate(self, canvas: tuple[int, int] | None = None) -> None:
        for name in ("lv_semiaxes_ed", "lv_semiaxes_es", "rv_semiaxes_ed", "rv_semiaxes_es"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise InvalidConfigError(f"{name} must be positive, got {(a, b)}")
        if self.myo_thickness_ed <= 0 or self.myo_thickness_es <= 0:
            raise InvalidConfigError("myo thickness must be positive")
        for ed, es in (
            (self.lv_semiaxes_ed, self.lv_semiaxes_es),
            (self.rv_semiaxes_ed, self.rv_semiaxes_es),
        ):
            if es[0] > ed[0] or es[1] > ed[1]:
                raise InvalidConfigError(
                    f"contracted semi-axes {es} exceed dilated semi-axes {ed}"
                )
        if self.rv_offset >= 0:
            raise InvalidConfigError("rv_offset must be negative (fixed side of the disc)")
        # The rv blob must clear the outer ring in both phases.  Both shapes
        # are axis-aligned in the unrotated frame with centres on the same
        # horizontal line, so disjoint x-strips guarantee disjoint regions.
        for phase in ("ed", "es"):
            lv_a = getattr(self, f"lv_semiaxes_{phase}")[0]
            outer_a = lv_a + getattr(self, f"myo_thickness_{phase}")
            rv_a = getattr(self, f"rv_semiaxes_{phase}")[0]
            if abs(self.rv_offset) < outer_a + rv_a:
                raise InvalidConfigError(
                    f"rv blob overlaps the ring at {phase}: |offset| "
                    f"{abs(self.rv_offset):.2f} < {outer_a + rv_a:.2f}"
                )
        if canvas is not None:
            self._check_canvas(canvas)

    def _check_canvas(self, canvas: tuple[int, int]) -> None:
        height, width = canvas
        row0, col0 = self.center
        cos_t, sin_t = math.cos(self.rotation), math.sin(self.rotation)

        def rotated_extent(a: float, b: float) -> tuple[float, float]:
            # Half-extent of a rotated ellipse along image columns / rows.
            return (
                math.hypot(a * cos_t, b * sin_t),
                math.hypot(a * sin_t, b * cos_t),
            )

        for phase in ("ed", "es"):
            lv_a, lv_b = getattr(self, f"lv_semiaxes_{phase}")
            t = getattr(self, f"myo_thickness_{phase}")
            rv_a, rv_b = getattr(self, f"rv_semiaxes_{phase}")
            pieces = [
                ((row0, col0), rotated_extent(lv_a + t, lv_b + t)),
                (
                    (row0 + self.rv_offset * sin_t, col0 + self.rv_offset * cos_t),
                    rotated_extent(rv_a, rv_b),
                ),
            ]
            for (r, c), (ext_c, ext_r) in pieces:
                if (
                    r - ext_r < _BORDER_MARGIN
                    or r + ext_r > height - 1 - _BORDER_MARGIN
                    or c - ext_c < _BORDER_MARGIN
                    or c + ext_c > width - 1 - _BORDER_MARGIN
                ):
                    raise OutOfBoundsError(
                        f"{phase} scene exceeds {height}x{width} canvas "
                        f"(centre {(r, c)}, extent {(ext_r, ext_c)})"
                    )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SampleRecord:
    """One rasterized sample: 2-channel image plus exact area attributes."""

    image: np.ndarray  # (2, H, W) float32 in [0, 1]
    attributes: dict[str, float]
    spec: ShapeSpec
    id: int

    def attribute_vector(self) -> np.ndarray:
        return np.array([self.attributes[k] for k in ATTRIBUTE_NAMES], dtype=np.float32)


@dataclass
class VariationConfig:
    """Uniform sampling ranges for every ShapeSpec degree of freedom.

    Ranges are inclusive ``(low, high)`` pairs; a zero-width range pins the
    field.  Contraction factors scale "ed" values down to "es" values and
    must stay within (0, 1]; the ring thickening factor scales thickness up
    at the contracted phase.
    """

    lv_semiaxis_a: tuple[float, float] = (6.5, 9.5)
    lv_semiaxis_b: tuple[float, float] = (5.5, 8.5)
    lv_contraction: tuple[float, float] = (0.55, 0.85)
    myo_thickness: tuple[float, float] = (1.5, 3.0)
    myo_thickening: tuple[float, float] = (1.05, 1.30)
    rv_semiaxis_a: tuple[float, float] = (3.5, 6.0)
    rv_semiaxis_b: tuple[float, float] = (5.0, 8.5)
    rv_contraction: tuple[float, float] = (0.55, 0.90)
    rv_gap: tuple[float, float] = (1.0, 3.0)
    center_jitter: tuple[float, float] = (-2.0, 2.0)
    rotation: tuple[float, float] = (-0.15, 0.15)

    _FACTOR_FIELDS = ("lv_contraction", "rv_contraction")

    def validate(self) -> None:
        for name, (lo, hi) in self.ranges().items():
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise InvalidConfigError(f"empty or non-finite range for {name}: {(lo, hi)}")
        for name in self._FACTOR_FIELDS:
            lo, hi = getattr(self, name)
            if lo <= 0 or hi > 1.0:
                raise InvalidConfigError(
                    f"{name} must lie in (0, 1] so contracted shapes stay inside "
                    f"dilated ones, got {(lo, hi)}"
                )
        for name in ("lv_semiaxis_a", "lv_semiaxis_b", "rv_semiaxis_a", "rv_semiaxis_b",
                     "myo_thickness", "myo_thickening", "rv_gap"):
            lo, _ = getattr(self, name)
            if lo <= 0:
                raise InvalidConfigError(f"{name} must be positive, got low end {lo}")

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {k: tuple(v) for k, v in asdict(self).items()}

    def to_dict(self) -> dict:
        return {k: list(v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "VariationConfig":
        known = {f: tuple(v) for f, v in d.items()}
        try:
            return cls(**known)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown variation field: {exc}") from exc


def scaled_variation(canvas: tuple[int, int] = (64, 64), shrink: float = 0.9) -> VariationConfig:
    """Default variation ranges rescaled to a canvas other than 64x64.

    Length-type ranges scale with the canvas; dimensionless factors do not.
    When shrinking, sizes are additionally reduced by ``shrink`` so the fixed
    1-pixel border margin is preserved.
    """
    factor = min(canvas) / 64.0
    scale = factor if factor >= 1.0 else factor * shrink
    base = VariationConfig()

    def s(rng: tuple[float, float]) -> tuple[float, float]:
        return (rng[0] * scale, rng[1] * scale)

    return VariationConfig(
        lv_semiaxis_a=s(base.lv_semiaxis_a),
        lv_semiaxis_b=s(base.lv_semiaxis_b),
        lv_contraction=base.lv_contraction,
        myo_thickness=s(base.myo_thickness),
        myo_thickening=base.myo_thickening,
        rv_semiaxis_a=s(base.rv_semiaxis_a),
        rv_semiaxis_b=s(base.rv_semiaxis_b),
        rv_contraction=base.rv_contraction,
        rv_gap=s(base.rv_gap),
        center_jitter=s(base.center_jitter),
        rotation=base.rotation,
    )


def sample_shape_spec(
    rng_seed: int | list[int],
    variation: VariationConfig | None = None,
    canvas: tuple[int, int] = (64, 64),
) -> ShapeSpec:
    """Draw one ShapeSpec; a pure function of (seed, variation, canvas).

    Field draws happen in a fixed order so equal seeds give equal specs.
    """
    variation = variation or VariationConfig()
    variation.validate()
    rng = np.random.default_rng(rng_seed)

    def draw(lo_hi: tuple[float, float]) -> float:
        lo, hi = lo_hi
        return float(lo) if lo == hi else float(rng.uniform(lo, hi))

    height, width = canvas
    row0 = height / 2.0 + draw(variation.center_jitter)
    col0 = width / 2.0 + draw(variation.center_jitter)
    rotation = draw(variation.rotation)
    lv_a = draw(variation.lv_semiaxis_a)
    lv_b = draw(variation.lv_semiaxis_b)
    lv_f = draw(variation.lv_contraction)
    t_ed = draw(variation.myo_thickness)
    t_es = t_ed * draw(variation.myo_thickening)
    rv_a = draw(variation.rv_semiaxis_a)
    rv_b = draw(variation.rv_semiaxis_b)
    rv_f = draw(variation.rv_contraction)
    gap = draw(variation.rv_gap)
    offset = -(max(lv_a + t_ed, lv_a * lv_f + t_es) + rv_a + gap)

    spec = ShapeSpec(
        lv_semiaxes_ed=(lv_a, lv_b),
        lv_semiaxes_es=(lv_a * lv_f, lv_b * lv_f),
        myo_thickness_ed=t_ed,
        myo_thickness_es=t_es,
        rv_semiaxes_ed=(rv_a, rv_b),
        rv_semiaxes_es=(rv_a * rv_f, rv_b * rv_f),
        center=(row0, col0),
        rv_offset=offset,
        rotation=rotation,
    )
    spec.validate(canvas)
    return spec


def _region_masks(
    spec: ShapeSpec, canvas: tuple[int, int], phase: str
) -> dict[str, np.ndarray]:
    height, width = canvas
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    y = rows - spec.center[0]
    x = cols - spec.center[1]
    cos_t, sin_t = math.cos(spec.rotation), math.sin(spec.rotation)
    u = x * cos_t + y * sin_t
    v = -x * sin_t + y * cos_t

    lv_a, lv_b = getattr(spec, f"lv_semiaxes_{phase}")
    t = getattr(spec, f"myo_thickness_{phase}")
    rv_a, rv_b = getattr(spec, f"rv_semiaxes_{phase}")

    lv = (u / lv_a) ** 2 + (v / lv_b) ** 2 <= 1.0
    outer = (u / (lv_a + t)) ** 2 + (v / (lv_b + t)) ** 2 <= 1.0
    rv = ((u - spec.rv_offset) / rv_a) ** 2 + (v / rv_b) ** 2 <= 1.0
    # Priority keeps regions disjoint even for hand-built specs that skip
    # validation; validated specs never overlap.
    myo = outer & ~lv
    rv = rv & ~outer
    return {"lv": lv, "myo": myo, "rv": rv}


def rasterize(spec: ShapeSpec, canvas: tuple[int, int] = (64, 64), sample_id: int = 0) -> SampleRecord:
    """Rasterize one spec to a 2-channel image with exact pixel-count areas."""
    if canvas[0] < 32 or canvas[1] < 32:
        raise ContractError(f"canvas must be at least 32x32, got {canvas}")
    spec.validate(canvas)
    image = np.zeros((2, canvas[0], canvas[1]), dtype=np.float32)
    attributes: dict[str, float] = {}
    for phase, channel in PHASE_CHANNEL.items():
        masks = _region_masks(spec, canvas, phase)
        for region, mask in masks.items():
            image[channel][mask] = REGION_INTENSITY[region]
            attributes[f"{region}_area_{phase}"] = float(mask.sum())
    return SampleRecord(image=image, attributes=attributes, spec=spec, id=sample_id)


@dataclass
class DatasetArchive:
    """In-memory dataset: aligned image and attribute matrices plus splits."""

    images: np.ndarray  # (N, 2, H, W) float32
    attributes: np.ndarray  # (N, M) float32, raw pixel counts
    attribute_names: tuple[str, ...]
    splits: dict[str, np.ndarray]  # disjoint int64 index arrays covering [0, N)
    seed: int
    generator_version: str = GENERATOR_VERSION
    attr_min: np.ndarray = field(default=None)  # type: ignore[assignment]
    attr_max: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.attr_min is None:
            self.attr_min = self.attributes.min(axis=0) if len(self.attributes) else np.zeros(0)
        if self.attr_max is None:
            self.attr_max = self.attributes.max(axis=0) if len(self.attributes) else np.zeros(0)
        self.attr_min = np.asarray(self.attr_min, dtype=np.float32)
        self.attr_max = np.asarray(self.attr_max, dtype=np.float32)

    @property
    def n_samples(self) -> int:
        return self.images.shape[0]

    @property
    def canvas(self) -> tuple[int, int]:
        return self.images.shape[2], self.images.shape[3]

    def normalized_attributes(self) -> np.ndarray:
        """Min-max normalized attributes using the stored constants."""
        span = self.attr_max - self.attr_min
        if np.any(span <= 0):
            raise InvalidConfigError("constant attribute column; cannot normalize")
        return (self.attributes - self.attr_min) / span

    def split_indices(self, split: str) -> np.ndarray:
        if split not in self.splits:
            raise ContractError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return self.splits[split]

    def fingerprint_source(self) -> dict:
        return {
            "seed": self.seed,
            "generator_version": self.generator_version,
            "attribute_names": list(self.attribute_names),
        }


def split_sizes(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Integer split sizes: floor val/test, remainder goes to train."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise InvalidConfigError(f"split fractions must sum to 1, got {fractions}")
    if any(f < 0 for f in fractions):
        raise InvalidConfigError(f"split fractions must be non-negative, got {fractions}")
    n_val = int(math.floor(n * fractions[1]))
    n_test = int(math.floor(n * fractions[2]))
    n_train = n - n_val - n_test
    for size, frac, name in ((n_train, fractions[0], "train"), (n_val, fractions[1], "val"),
                             (n_test, fractions[2], "test")):
        if frac > 0 and size == 0:
            raise InvalidConfigError(f"n={n} too small to populate the {name} split")
    return n_train, n_val, n_test


def generate_dataset(
    n: int,
    seed: int,
    canvas: tuple[int, int] = (64, 64),
    split_fractions: tuple[float, float, float] = (0.7, 0.15, 0.15),
    variation: VariationConfig | None = None,
) -> DatasetArchive:
    """Generate ``n`` samples reproducibly from ``seed``.

    Sample ``i`` is a pure function of ``(seed, i)``, so generation may be
    sharded across workers over disjoint id ranges and reassembled.
    """
    if n < 10:
        raise InvalidConfigError(f"need at least 10 samples, got {n}")
    variation = variation or VariationConfig()
    variation.validate()
    n_train, n_val, n_test = split_sizes(n, split_fractions)

    images = np.zeros((n, 2, canvas[0], canvas[1]), dtype=np.float32)
    attributes = np.zeros((n, len(ATTRIBUTE_NAMES)), dtype=np.float32)
    for i in range(n):
        record = generate_sample(seed, i, canvas, variation)
        images[i] = record.image
        attributes[i] = record.attribute_vector()

    perm = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(n)
    splits = {
        "train": np.sort(perm[:n_train]).astype(np.int64),
        "val": np.sort(perm[n_train : n_train + n_val]).astype(np.int64),
        "test": np.sort(perm[n_train + n_val :]).astype(np.int64),
    }
    return DatasetArchive(
        images=images,
        attributes=attributes,
        attribute_names=ATTRIBUTE_NAMES,
        splits=splits,
        seed=seed,
    )


# Distinct sub-stream tags so sample draws and the split permutation never share a stream.
_SAMPLE_STREAM = 0
_SPLIT_STREAM = 1


def generate_sample(
    dataset_seed: int,
    sample_id: int,
    canvas: tuple[int, int] = (64, 64),
    variation: VariationConfig | None = None,
) -> SampleRecord:
    """Generate sample ``sample_id`` of the dataset keyed by ``dataset_seed``.

    Pure in ``(dataset_seed, sample_id)``: workers holding disjoint id ranges
    can generate in parallel and results reassemble byte-identically.
    """
    spec = sample_shape_spec([dataset_seed, _SAMPLE_STREAM, sample_id], variation, canvas)
    return rasterize(spec, canvas, sample_id=sample_id)


def save_archive(dataset: DatasetArchive, path: str | Path) -> Path:
    """Persist a dataset in the shared array-archive format."""
    metadata = {
        "kind": "dataset",
        "attribute_names": list(dataset.attribute_names),
        "splits": {k: v.tolist() for k, v in dataset.splits.items()},
        "seed": int(dataset.seed),
        "generator_version": dataset.generator_version,
        "attr_min": [float(v) for v in dataset.attr_min],
        "attr_max": [float(v) for v in dataset.attr_max],
        "region_intensity": REGION_INTENSITY,
    }
    arrays = {
        "images": dataset.images.astype(np.float32),
        "attributes": dataset.attributes.astype(np.float32),
    }
    return archive_io.save_array_archive(path, arrays, metadata)


def load_archive(path: str | Path) -> DatasetArchive:
    """Load a dataset archive, verifying payload integrity."""
    arrays, metadata = archive_io.load_array_archive(path)
    try:
        images = arrays["images"]
        attributes = arrays["attributes"]
        names = tuple(metadata["attribute_names"])
        splits = {k: np.asarray(v, dtype=np.int64) for k, v in metadata["splits"].items()}
        seed = int(metadata["seed"])
        version = metadata["generator_version"]
        attr_min = np.asarray(metadata["attr_min"], dtype=np.float32)
        attr_max = np.asarray(metadata["attr_max"], dtype=np.float32)
    except KeyError as exc:
        raise CorruptArchiveError(f"dataset archive missing field: {exc}") from exc
    if images.shape[0] != attributes.shape[0]:
        raise CorruptArchiveError(
            f"row mismatch: {images.shape[0]} images vs {attributes.shape[0]} attribute rows"
        )
    covered = np.sort(np.concatenate(list(splits.values())))
    if len(covered) != images.shape[0] or not np.array_equal(covered, np.arange(images.shape[0])):
        raise CorruptArchiveError("split lists must disjointly cover all samples")
    return DatasetArchive(
        images=images,
        attributes=attributes,
        attribute_names=names,
        splits=splits,
        seed=seed,
        generator_version=version,
        attr_min=attr_min,
        attr_max=attr_max,
    )


def dataset_fingerprint(path: str | Path) -> str:
    """Content hash of a saved dataset archive."""
    return archive_io.archive_fingerprint(path)
