"""Reconstruction and latent-interpretability metrics.

Reconstruction: windowed structural similarity (SSIM) and the deterministic
perceptual feature distance (PFD).  Latent side: per-attribute maximum
absolute rank correlation (SCC), best single-dimension regression fit
(Interpretability), the gap between the two most predictive dimensions
(SAP), and Modularity (does each latent dimension depend on one attribute
only).  All latent metrics operate on a table of codes aligned with
attribute rows.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.ndimage import correlate1d
from scipy.stats import rankdata

from .errors import (
    ContractError,
    UndefinedCorrelationError,
    UndefinedMetricError,
)
from .perceptual import default_stack
from .synth import DatasetArchive

MODULARITY_ACTIVITY_THRESHOLD = 0.01


# ---------------------------------------------------------------------------
# structural similarity


def _gaussian_kernel(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window, dtype=np.float64) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _local_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # Separable Gaussian filtering; borders are cropped afterwards so the
    # padding mode never reaches the reported values.
    out = correlate1d(img, kernel, axis=-1, mode="constant")
    out = correlate1d(out, kernel, axis=-2, mode="constant")
    pad = (len(kernel) - 1) // 2
    return out[..., pad:-pad, pad:-pad]


def ssim(x, y, window: int = 11, data_range: float = 1.0, sigma: float = 1.5) -> float:
    """Mean local SSIM with a Gaussian window; symmetric in (x, y).

    Accepts (H, W), (C, H, W) or (B, C, H, W) arrays; channels and batch are
    averaged.  Constants follow the standard choice C1=(0.01 L)^2,
    C2=(0.03 L)^2 for data range L.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ContractError(f"shape mismatch: {x.shape} vs {y.shape}")
    if data_range <= 0:
        raise ContractError(f"data_range must be > 0, got {data_range}")
    if x.ndim < 2 or x.ndim > 4:
        raise ContractError(f"expected 2-4 dims, got {x.ndim}")
    if x.shape[-1] < window or x.shape[-2] < window:
        raise ContractError(
            f"image {x.shape[-2]}x{x.shape[-1]} smaller than window {window}"
        )
    kernel = _gaussian_kernel(window, sigma)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mu_x = _local_mean(x, kernel)
    mu_y = _local_mean(y, kernel)
    xx = _local_mean(x * x, kernel) - mu_x**2
    yy = _local_mean(y * y, kernel) - mu_y**2
    xy = _local_mean(x * y, kernel) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    return float(ssim_map.mean())


def perceptual_feature_distance(x, y) -> float:
    """Deterministic multi-scale feature distance; 0 iff the inputs match."""
    from .perceptual import perceptual_feature_distance as _pfd

    return _pfd(x, y)


# ---------------------------------------------------------------------------
# rank correlation and the latent-space metrics


def spearman(u, v) -> float:
    """Spearman rank correlation with average ranks for ties."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise ContractError(f"expected equal-length vectors, got {u.shape} vs {v.shape}")
    if len(u) < 3:
        raise ContractError(f"need at least 3 points, got {len(u)}")
    ru = rankdata(u, method="average")
    rv = rankdata(v, method="average")
    su = ru.std()
    sv = rv.std()
    if su == 0 or sv == 0:
        raise UndefinedCorrelationError("rank correlation of a constant vector is undefined")
    rho = ((ru - ru.mean()) * (rv - rv.mean())).mean() / (su * sv)
    return float(np.clip(rho, -1.0, 1.0))


@dataclass
class CodesTable:
    """Latent codes aligned with attributes for interpretability metrics."""

    codes: np.ndarray  # (N, D)
    attributes: np.ndarray  # (N, M)
    attribute_names: tuple[str, ...]
    regularized_dim_map: dict[int, int] | None = None  # attribute index -> latent dim

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.float64)
        self.attributes = np.asarray(self.attributes, dtype=np.float64)
        if self.codes.ndim != 2 or self.attributes.ndim != 2:
            raise ContractError("codes and attributes must be matrices")
        if self.codes.shape[0] != self.attributes.shape[0]:
            raise ContractError(
                f"row mismatch: {self.codes.shape[0]} codes vs "
                f"{self.attributes.shape[0]} attribute rows"
            )
        if self.codes.shape[0] < 10:
            raise ContractError(f"need at least 10 samples, got {self.codes.shape[0]}")
        if len(self.attribute_names) != self.attributes.shape[1]:
            raise ContractError("attribute_names must match attribute columns")

    @property
    def n_dims(self) -> int:
        return self.codes.shape[1]

    @property
    def n_attributes(self) -> int:
        return self.attributes.shape[1]


def _spearman_matrix(codes: CodesTable) -> np.ndarray:
    """rho[k, j] = spearman(codes dim k, attribute j)."""
    d, m = codes.n_dims, codes.n_attributes
    rho = np.zeros((d, m))
    code_ranks = np.stack([rankdata(codes.codes[:, k], method="average") for k in range(d)])
    attr_ranks = np.stack([rankdata(codes.attributes[:, j], method="average") for j in range(m)])
    attr_std = attr_ranks.std(axis=1)
    if np.any(attr_std == 0):
        bad = codes.attribute_names[int(np.argmax(attr_std == 0))]
        raise UndefinedCorrelationError(f"attribute {bad!r} is constant")
    code_std = code_ranks.std(axis=1)
    centered_codes = code_ranks - code_ranks.mean(axis=1, keepdims=True)
    centered_attrs = attr_ranks - attr_ranks.mean(axis=1, keepdims=True)
    for k in range(d):
        if code_std[k] == 0:
            rho[k] = 0.0  # inactive (constant) dimension carries no ordering
            continue
        rho[k] = (centered_codes[k] @ centered_attrs.T) / (
            len(code_ranks[k]) * code_std[k] * attr_std
        )
    return rho


def scc_metric(codes: CodesTable) -> float:
    """Mean over attributes of the best |rank correlation| over dimensions."""
    return float(np.mean(scc_per_attribute(codes)))


def scc_per_attribute(codes: CodesTable) -> np.ndarray:
    rho = _spearman_matrix(codes)
    return np.abs(rho).max(axis=0)


def _univariate_r2_matrix(codes: CodesTable) -> np.ndarray:
    """score[k, j]: held-out R^2 of predicting attribute j from dim k alone.

    Fit on the first half of the rows, score on the second, clip to [0, 1].
    """
    n = codes.codes.shape[0]
    n_fit = n // 2
    if n_fit < 5 or n - n_fit < 5:
        raise ContractError(f"need at least 5 samples per half, got {n} total")
    z_fit, z_eval = codes.codes[:n_fit], codes.codes[n_fit:]
    a_fit, a_eval = codes.attributes[:n_fit], codes.attributes[n_fit:]
    d, m = codes.n_dims, codes.n_attributes
    scores = np.zeros((d, m))
    for j in range(m):
        ss_tot = np.sum((a_eval[:, j] - a_eval[:, j].mean()) ** 2)
        if ss_tot == 0:
            raise UndefinedCorrelationError(
                f"attribute {codes.attribute_names[j]!r} constant on the held-out half"
            )
        for k in range(d):
            zk = z_fit[:, k]
            var = zk.var()
            if var == 0:
                continue  # constant regressor predicts nothing
            slope = np.cov(zk, a_fit[:, j], ddof=0)[0, 1] / var
            intercept = a_fit[:, j].mean() - slope * zk.mean()
            pred = slope * z_eval[:, k] + intercept
            r2 = 1.0 - np.sum((a_eval[:, j] - pred) ** 2) / ss_tot
            scores[k, j] = min(max(r2, 0.0), 1.0)
    return scores


def _group_means(per_attribute: np.ndarray, names: tuple[str, ...]) -> dict[str, float]:
    groups: dict[str, list[float]] = {"ed": [], "es": []}
    for value, name in zip(per_attribute, names):
        for suffix in groups:
            if name.endswith(f"_{suffix}"):
                groups[suffix].append(float(value))
    return {k: float(np.mean(v)) if v else float("nan") for k, v in groups.items()}


def interpretability_score(
    codes: CodesTable,
) -> tuple[float, np.ndarray, dict[str, float]]:
    """(mean, per-attribute, per-phase-group means) of the best single-dim fit."""
    scores = _univariate_r2_matrix(codes)
    per_attribute = scores.max(axis=0)
    return (
        float(per_attribute.mean()),
        per_attribute,
        _group_means(per_attribute, codes.attribute_names),
    )


def sap_metric(codes: CodesTable) -> float:
    """Mean gap between the two most predictive dimensions per attribute."""
    if codes.n_dims < 2:
        raise ContractError("need at least 2 latent dimensions")
    scores = np.sort(_univariate_r2_matrix(codes), axis=0)
    return float(np.mean(scores[-1, :] - scores[-2, :]))


def modularity_metric(
    codes: CodesTable, threshold: float = MODULARITY_ACTIVITY_THRESHOLD
) -> float:
    """Mean over active dimensions of 1 - off-template dependence mass.

    Dependence is squared rank correlation; a dimension is active when its
    best dependence exceeds ``threshold``.  A single-attribute table is 1.0
    by convention (there is no off-template mass to spread).
    """
    if codes.n_attributes == 1:
        return 1.0
    dep = _spearman_matrix(codes) ** 2
    theta = dep.max(axis=1)
    active = theta > threshold
    if not np.any(active):
        raise UndefinedMetricError(
            f"no latent dimension exceeds the activity threshold {threshold}"
        )
    m = codes.n_attributes
    scores = []
    for k in np.flatnonzero(active):
        j_star = int(np.argmax(dep[k]))
        off = np.delete(dep[k], j_star)
        deviation = np.sum(off**2) / (theta[k] ** 2 * (m - 1))
        scores.append(1.0 - deviation)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# whole-model evaluation


@dataclass
class MetricsReport:
    """Reconstruction and latent metrics for one model on one split."""

    ssim_all: float
    ssim_ed: float | None
    ssim_es: float | None
    pfd_all: float
    pfd_ed: float | None
    pfd_es: float | None
    scc: float
    modularity: float
    sap: float
    interp_all: float
    interp_edv: float
    interp_esv: float
    per_attribute: dict = field(default_factory=dict)
    n_samples: int = 0
    split: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source: str | Path) -> "MetricsReport":
        text = Path(source).read_text() if Path(str(source)).is_file() else str(source)
        return cls(**json.loads(text))


def encode_dataset(
    model, dataset: DatasetArchive, split: str, batch_size: int = 128
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior means and reconstructions from means for a dataset split."""
    idx = dataset.split_indices(split)
    images = select_phase_channels(dataset.images[idx], model.config.phase)
    model.eval()
    codes = []
    recons = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = torch.from_numpy(images[start : start + batch_size])
            mu, _ = model.encode(batch)
            codes.append(mu.numpy())
            recons.append(model.decode(mu).numpy())
    return np.concatenate(codes), np.concatenate(recons)


def select_phase_channels(images: np.ndarray, phase: str) -> np.ndarray:
    if phase == "both":
        return images
    from .synth import PHASE_CHANNEL

    ch = PHASE_CHANNEL[phase]
    return images[:, ch : ch + 1]


def evaluate_model(
    model,
    dataset: DatasetArchive,
    split: str = "test",
    batch_size: int = 128,
    regularized: bool = False,
) -> MetricsReport:
    """Encode a split, reconstruct it, and compute the full metric table."""
    idx = dataset.split_indices(split)
    images = select_phase_channels(dataset.images[idx], model.config.phase)
    codes, recons = encode_dataset(model, dataset, split, batch_size)

    stack = default_stack()

    def pfd(a: np.ndarray, b: np.ndarray) -> float:
        with torch.no_grad():
            return float(stack(torch.from_numpy(a), torch.from_numpy(b)))

    two_phase = model.config.phase == "both"
    ssim_all = ssim(images, recons)
    pfd_all = pfd(images, recons)
    if two_phase:
        ssim_ed = ssim(images[:, 0:1], recons[:, 0:1])
        ssim_es = ssim(images[:, 1:2], recons[:, 1:2])
        pfd_ed = pfd(images[:, 0:1], recons[:, 0:1])
        pfd_es = pfd(images[:, 1:2], recons[:, 1:2])
    else:
        ssim_ed = ssim_all if model.config.phase == "ed" else None
        ssim_es = ssim_all if model.config.phase == "es" else None
        pfd_ed = pfd_all if model.config.phase == "ed" else None
        pfd_es = pfd_all if model.config.phase == "es" else None

    dim_map = None
    if regularized:
        dim_map = {j: j for j in range(min(model.config.num_regularized_dims,
                                           len(dataset.attribute_names)))}
    table = CodesTable(
        codes=codes,
        attributes=dataset.attributes[idx],
        attribute_names=tuple(dataset.attribute_names),
        regularized_dim_map=dim_map,
    )
    scc_attr = scc_per_attribute(table)
    interp_mean, interp_attr, interp_groups = interpretability_score(table)
    r2 = _univariate_r2_matrix(table)
    sap_attr = np.sort(r2, axis=0)[-1, :] - np.sort(r2, axis=0)[-2, :]

    per_attribute = {
        name: {
            "scc": float(scc_attr[j]),
            "interpretability": float(interp_attr[j]),
            "sap": float(sap_attr[j]),
        }
        for j, name in enumerate(dataset.attribute_names)
    }
    return MetricsReport(
        ssim_all=ssim_all,
        ssim_ed=ssim_ed,
        ssim_es=ssim_es,
        pfd_all=pfd_all,
        pfd_ed=pfd_ed,
        pfd_es=pfd_es,
        scc=float(scc_attr.mean()),
        modularity=modularity_metric(table),
        sap=float(sap_attr.mean()),
        interp_all=interp_mean,
        interp_edv=interp_groups["ed"],
        interp_esv=interp_groups["es"],
        per_attribute=per_attribute,
        n_samples=len(idx),
        split=split,
    )
