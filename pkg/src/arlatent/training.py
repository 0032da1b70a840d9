"""Training orchestration for all four methods.

``beta_vae`` and ``attri_vae`` jointly update encoder and decoder with a
single optimizer on the plain total loss.  ``sivae`` and ``ar_sivae`` use
two optimizers and alternate per batch: first the decoder is frozen and the
encoder steps on its objective (with the attribute regularizer for
``ar_sivae``), then the encoder is frozen and the decoder steps on its
objective.  Everything is deterministic given (config, seed, dataset): data
order comes from a seeded permutation stream and all noise from seeded
generators, so two runs produce byte-identical loss logs.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .errors import InvalidConfigError, TrainingDivergedError
from .losses import (
    _scalar,
    LossBreakdown,
    LossWeights,
    attribute_total_loss,
    attrivae_total_loss,
    gaussian_kl,
    reconstruction_loss,
    sivae_decoder_loss,
    sivae_encoder_loss,
)
from .metrics import select_phase_channels
from .models import ConvVAE, ModelConfig, build_model, reparameterize, save_checkpoint
from .perceptual import PerceptualDistance
from .synth import DatasetArchive

VAE_FAMILY = frozenset({"beta_vae", "attri_vae"})
SIVAE_FAMILY = frozenset({"sivae", "ar_sivae"})
REGULARIZED_METHODS = frozenset({"attri_vae", "ar_sivae"})
METHODS = tuple(sorted(VAE_FAMILY | SIVAE_FAMILY))

_DEFAULT_LR = {"vae": 5e-5, "sivae": 2e-4}

# Sub-stream tags deriving independent RNG streams from one run seed.
_SHUFFLE_STREAM = 11
_VAL_NOISE_OFFSET = 0x5EED


@dataclass
class TrainConfig:
    method: str = "ar_sivae"
    epochs: int = 150
    patience: int | None = None  # early-stop horizon; None -> min(30, epochs)
    batch_size: int = 32
    lr_encoder: float | None = None
    lr_decoder: float | None = None
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 0
    device: str = "cpu"
    regularize_on: str = "sample"  # apply the attribute loss to z ("sample") or mu ("mean")

    def validate(self) -> None:
        if self.method not in METHODS:
            raise InvalidConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 0:
            raise InvalidConfigError(f"epochs must be >= 0, got {self.epochs}")
        patience = self.resolved_patience()
        if patience < 0 or patience > self.epochs:
            raise InvalidConfigError(
                f"patience must lie in [0, epochs], got {patience} with epochs {self.epochs}"
            )
        if self.batch_size < 2:
            raise InvalidConfigError(f"batch_size must be >= 2 (pairwise losses), got {self.batch_size}")
        for name in ("lr_encoder", "lr_decoder"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise InvalidConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.regularize_on not in ("sample", "mean"):
            raise InvalidConfigError(f"regularize_on must be sample|mean, got {self.regularize_on!r}")
        if self.checkpoint_every < 0:
            raise InvalidConfigError("checkpoint_every must be >= 0")
        self.weights.validate()

    def resolved_patience(self) -> int:
        return min(30, self.epochs) if self.patience is None else self.patience

    def resolved_lr(self) -> tuple[float, float]:
        default = _DEFAULT_LR["vae" if self.method in VAE_FAMILY else "sivae"]
        lr_e = default if self.lr_encoder is None else self.lr_encoder
        lr_d = default if self.lr_decoder is None else self.lr_decoder
        return lr_e, lr_d

    def effective_weights(self) -> LossWeights:
        """Weights with gamma_reg forced to 0 for unregularized methods."""
        if self.method in REGULARIZED_METHODS:
            return self.weights
        return replace(self.weights, gamma_reg=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights.from_dict(d["weights"])
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown train field: {exc}") from exc
        cfg.validate()
        return cfg


@dataclass
class TrainState:
    epoch: int = 0
    steps: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    stopped_early: bool = False
    history: list[dict] = field(default_factory=list)


@dataclass
class FitResult:
    model: ConvVAE
    state: TrainState
    manifest: dict
    run_dir: Path | None = None


@dataclass
class _Context:
    """Everything a training step needs besides the batch itself."""

    model: ConvVAE
    weights: LossWeights
    s: float
    pixels: float  # channels * H * W: converts pixel-mean losses to pixel sums
    generator: torch.Generator
    perceptual: PerceptualDistance | None
    regularize_on: str
    num_regularized_dims: int
    device: torch.device

    def noise(self, shape: tuple[int, ...]) -> torch.Tensor:
        return torch.randn(shape, generator=self.generator).to(self.device)

    def reparam(self, mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
        return reparameterize(mu, logvar, eps=self.noise(tuple(mu.shape)))

    def regularizer_input(self, mu: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return z if self.regularize_on == "sample" else mu


class _Aggregator:
    """Sample-weighted mean of loss breakdowns over an epoch."""

    def __init__(self):
        self.total = 0
        self.sums: dict[str, float] = {}
        self.per_attr: np.ndarray | None = None

    def add(self, breakdown: LossBreakdown, count: int) -> None:
        d = breakdown.to_dict()
        per_attr = np.array(d.pop("per_attribute"), dtype=np.float64)
        for k, v in d.items():
            self.sums[k] = self.sums.get(k, 0.0) + v * count
        if per_attr.size:
            self.per_attr = (per_attr * count if self.per_attr is None
                             else self.per_attr + per_attr * count)
        self.total += count

    def mean(self) -> LossBreakdown:
        if self.total == 0:
            return LossBreakdown()
        means = {k: v / self.total for k, v in self.sums.items()}
        per_attr = tuple() if self.per_attr is None else tuple(self.per_attr / self.total)
        return LossBreakdown(per_attribute=per_attr, **means)


def _batches(order: np.ndarray, batch_size: int):
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        if len(chunk) >= 2:  # pairwise losses need at least one pair
            yield chunk


def _vae_batch_loss(
    ctx: _Context, xb: torch.Tensor, ab: torch.Tensor | None, cfg: TrainConfig
) -> tuple[torch.Tensor, LossBreakdown]:
    mu, logvar = ctx.model.encode(xb)
    z = ctx.reparam(mu, logvar)
    recon = ctx.model.decode(z)
    weights = cfg.effective_weights()
    total, breakdown = attrivae_total_loss(
        xb,
        recon,
        mu,
        logvar,
        ctx.regularizer_input(mu, z),
        ab,
        weights,
        num_regularized_dims=ctx.num_regularized_dims,
        perceptual=ctx.perceptual,
    )
    if not breakdown.is_finite():
        raise TrainingDivergedError("non-finite loss", breakdown.to_dict())
    return total, breakdown


def train_epoch_vae(
    ctx: _Context,
    optimizer: torch.optim.Optimizer,
    x_train: torch.Tensor,
    attrs_train: torch.Tensor | None,
    order: np.ndarray,
    cfg: TrainConfig,
    state: TrainState,
) -> LossBreakdown:
    """One joint-update pass over the training split (beta_vae / attri_vae)."""
    agg = _Aggregator()
    for idx in _batches(order, cfg.batch_size):
        xb = x_train[idx]
        ab = attrs_train[idx] if attrs_train is not None else None
        total, breakdown = _vae_batch_loss(ctx, xb, ab, cfg)
        optimizer.zero_grad(set_to_none=True)
        total.backward()
        optimizer.step()
        state.steps += 1
        agg.add(breakdown, len(idx))
    return agg.mean()


def sivae_encoder_phase(
    ctx: _Context,
    optimizer: torch.optim.Optimizer,
    xb: torch.Tensor,
    ab: torch.Tensor | None,
    cfg: TrainConfig,
    z_prior: torch.Tensor,
) -> tuple[LossBreakdown, dict[str, float]]:
    """Encoder update with the decoder frozen; fakes are decoded prior draws."""
    weights = cfg.effective_weights()
    model = ctx.model
    model.set_trainable("decoder", False)
    try:
        mu, logvar = model.encode(xb)
        z = ctx.reparam(mu, logvar)
        recon = model.decode(z)
        recon_real = reconstruction_loss(xb, recon, weights.alpha_pl, ctx.perceptual)
        kl_real = gaussian_kl(mu, logvar)

        fake = model.decode(z_prior).detach()
        mu_f, logvar_f = model.encode(fake)
        z_f = ctx.reparam(mu_f, logvar_f)
        fake_recon = model.decode(z_f)
        recon_fake = reconstruction_loss(fake, fake_recon, weights.alpha_pl, ctx.perceptual)
        kl_fake = gaussian_kl(mu_f, logvar_f)

        if weights.gamma_reg > 0:
            attr_total, per_attr = attribute_total_loss(
                ctx.regularizer_input(mu, z), ab, weights.delta, ctx.num_regularized_dims
            )
        else:
            attr_total, per_attr = torch.zeros((), device=xb.device), ()

        loss = sivae_encoder_loss(
            recon_real * ctx.pixels,
            kl_real,
            recon_fake * ctx.pixels,
            kl_fake,
            weights,
            ctx.s,
            attr_total,
        )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    finally:
        model.set_trainable("decoder", True)
    breakdown = LossBreakdown(
        recon_real=_scalar(recon_real),
        kl_real=_scalar(kl_real),
        recon_fake=_scalar(recon_fake),
        kl_fake=_scalar(kl_fake),
        attr_total=_scalar(attr_total),
        encoder_total=_scalar(loss),
        per_attribute=per_attr,
    )
    if not breakdown.is_finite():
        raise TrainingDivergedError("non-finite encoder loss", breakdown.to_dict())
    return breakdown, {"encoder_total": _scalar(loss)}


def sivae_decoder_phase(
    ctx: _Context,
    optimizer: torch.optim.Optimizer,
    xb: torch.Tensor,
    cfg: TrainConfig,
    z_prior: torch.Tensor,
) -> float:
    """Decoder update with the encoder frozen; fakes re-decoded fresh."""
    weights = cfg.effective_weights()
    model = ctx.model
    model.set_trainable("encoder", False)
    try:
        mu, logvar = model.encode(xb)
        z = ctx.reparam(mu, logvar)
        recon = model.decode(z)
        recon_real = reconstruction_loss(xb, recon, weights.alpha_pl, ctx.perceptual)

        fake = model.decode(z_prior)
        mu_f, logvar_f = model.encode(fake)
        kl_fake = gaussian_kl(mu_f, logvar_f)
        z_f = ctx.reparam(mu_f, logvar_f).detach()
        fake_recon = model.decode(z_f)
        recon_fake = reconstruction_loss(fake.detach(), fake_recon, weights.alpha_pl, ctx.perceptual)

        loss = sivae_decoder_loss(
            recon_real * ctx.pixels, recon_fake * ctx.pixels, kl_fake, weights, ctx.s
        )
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
    finally:
        model.set_trainable("encoder", True)
    total = _scalar(loss)
    if not math.isfinite(total):
        raise TrainingDivergedError("non-finite decoder loss", {"decoder_total": total})
    return total


def train_epoch_sivae(
    ctx: _Context,
    enc_opt: torch.optim.Optimizer,
    dec_opt: torch.optim.Optimizer,
    x_train: torch.Tensor,
    attrs_train: torch.Tensor | None,
    order: np.ndarray,
    cfg: TrainConfig,
    state: TrainState,
) -> LossBreakdown:
    """One two-phase adversarial pass over the training split."""
    agg = _Aggregator()
    for idx in _batches(order, cfg.batch_size):
        xb = x_train[idx]
        ab = attrs_train[idx] if attrs_train is not None else None
        z_prior = ctx.noise((len(idx), ctx.model.config.latent_dim))
        breakdown, _ = sivae_encoder_phase(ctx, enc_opt, xb, ab, cfg, z_prior)
        state.steps += 1
        decoder_total = sivae_decoder_phase(ctx, dec_opt, xb, cfg, z_prior)
        state.steps += 1
        breakdown.decoder_total = decoder_total
        agg.add(breakdown, len(idx))
    return agg.mean()


def _validation_breakdown(
    ctx: _Context,
    x_val: torch.Tensor,
    attrs_val: torch.Tensor | None,
    cfg: TrainConfig,
    val_seed: int,
) -> tuple[float, LossBreakdown]:
    """Monitored validation loss plus the full loss breakdown.

    VAE family: the training total.  Adversarial family: the real-data part
    of the encoder objective (attribute + scaled reconstruction + KL terms).
    The exponential fake term is logged but excluded from the monitored
    value: it measures the decoder's current strength, not encoder quality,
    and drifts upward as fakes become realistic, which would make best-
    checkpoint selection prefer under-trained models.

    Noise is drawn from a generator reseeded with the same value every epoch,
    so epoch-to-epoch differences reflect only parameter changes.
    """
    weights = cfg.effective_weights()
    val_gen = torch.Generator().manual_seed(val_seed)
    val_ctx = replace(ctx, generator=val_gen)
    model = ctx.model
    agg = _Aggregator()
    monitored_sum = 0.0
    monitored_count = 0
    model.eval()
    with torch.no_grad():
        for idx in _batches(np.arange(len(x_val)), cfg.batch_size):
            xb = x_val[idx]
            ab = attrs_val[idx] if attrs_val is not None else None
            if cfg.method in VAE_FAMILY:
                _, breakdown = _vae_batch_loss(val_ctx, xb, ab, cfg)
                monitored = breakdown.encoder_total
            else:
                mu, logvar = model.encode(xb)
                z = val_ctx.reparam(mu, logvar)
                recon = model.decode(z)
                recon_real = reconstruction_loss(xb, recon, weights.alpha_pl, ctx.perceptual)
                kl_real = gaussian_kl(mu, logvar)
                z_prior = val_ctx.noise((len(idx), model.config.latent_dim))
                fake = model.decode(z_prior)
                mu_f, logvar_f = model.encode(fake)
                z_f = val_ctx.reparam(mu_f, logvar_f)
                fake_recon = model.decode(z_f)
                recon_fake = reconstruction_loss(fake, fake_recon, weights.alpha_pl, ctx.perceptual)
                kl_fake = gaussian_kl(mu_f, logvar_f)
                if weights.gamma_reg > 0:
                    attr_total, per_attr = attribute_total_loss(
                        val_ctx.regularizer_input(mu, z), ab, weights.delta,
                        ctx.num_regularized_dims,
                    )
                else:
                    attr_total, per_attr = torch.zeros(()), ()
                total = sivae_encoder_loss(
                    recon_real * ctx.pixels, kl_real, recon_fake * ctx.pixels,
                    kl_fake, weights, ctx.s, attr_total,
                )
                breakdown = LossBreakdown(
                    recon_real=_scalar(recon_real),
                    kl_real=_scalar(kl_real),
                    recon_fake=_scalar(recon_fake),
                    kl_fake=_scalar(kl_fake),
                    attr_total=_scalar(attr_total),
                    encoder_total=_scalar(total),
                    per_attribute=per_attr,
                )
                monitored = float(
                    weights.gamma_reg * _scalar(attr_total)
                    + ctx.s * (
                        weights.beta_rec * _scalar(recon_real) * ctx.pixels
                        + weights.beta_kl * _scalar(kl_real)
                    )
                )
            monitored_sum += monitored * len(idx)
            monitored_count += len(idx)
            agg.add(breakdown, len(idx))
    model.train()
    return monitored_sum / monitored_count, agg.mean()


def _prepare_split(
    dataset: DatasetArchive,
    model_config: ModelConfig,
    split: str,
    device: torch.device,
    with_attrs: bool,
) -> tuple[torch.Tensor, torch.Tensor | None]:
    idx = dataset.split_indices(split)
    images = select_phase_channels(dataset.images[idx], model_config.phase)
    x = torch.from_numpy(np.ascontiguousarray(images)).to(device)
    attrs = None
    if with_attrs:
        attrs = torch.from_numpy(
            dataset.normalized_attributes()[idx].astype(np.float32)
        ).to(device)
    return x, attrs


def _check_dataset_compatibility(
    cfg: TrainConfig, model_config: ModelConfig, dataset: DatasetArchive
) -> None:
    height, width = dataset.canvas
    if height != model_config.image_size or width != model_config.image_size:
        raise InvalidConfigError(
            f"model expects {model_config.image_size}px squares, dataset is {height}x{width}"
        )
    if cfg.method in REGULARIZED_METHODS:
        n_attrs = dataset.attributes.shape[1] if dataset.attributes.ndim == 2 else 0
        if n_attrs == 0:
            raise InvalidConfigError(
                f"method {cfg.method!r} requires attributes, dataset has none"
            )
        if model_config.num_regularized_dims > n_attrs:
            raise InvalidConfigError(
                f"cannot regularize {model_config.num_regularized_dims} dims "
                f"with {n_attrs} attributes"
            )


def fit(
    cfg: TrainConfig,
    model_config: ModelConfig,
    dataset: DatasetArchive,
    run_dir: str | Path | None = None,
    dataset_fingerprint: str | None = None,
) -> FitResult:
    """Train until epochs are exhausted or validation stalls for ``patience``.

    Returns the best-validation model.  When ``run_dir`` is given, writes
    ``config.json``, per-epoch ``losses.jsonl``, periodic ``checkpoints/``,
    the ``best/`` checkpoint and ``manifest.json`` (an ``error.json`` with
    the last breakdown is left behind on divergence).
    """
    cfg.validate()
    model_config.validate()
    _check_dataset_compatibility(cfg, model_config, dataset)

    device = torch.device(cfg.device)
    model = build_model(model_config, cfg.seed).to(device)
    needs_attrs = cfg.method in REGULARIZED_METHODS
    x_train, attrs_train = _prepare_split(dataset, model_config, "train", device, needs_attrs)
    x_val, attrs_val = _prepare_split(dataset, model_config, "val", device, needs_attrs)
    if len(x_train) < 2 or len(x_val) < 1:
        raise InvalidConfigError("train split needs >= 2 samples and val split >= 1")

    perceptual = (
        PerceptualDistance().to(device) if cfg.weights.alpha_pl > 0 else None
    )
    image_shape = tuple(x_train.shape[1:])
    ctx = _Context(
        model=model,
        weights=cfg.effective_weights(),
        s=cfg.weights.resolve_s(image_shape),
        pixels=float(np.prod(image_shape)),
        generator=torch.Generator().manual_seed(cfg.seed),
        perceptual=perceptual,
        regularize_on=cfg.regularize_on,
        num_regularized_dims=model_config.num_regularized_dims if needs_attrs else 0,
        device=device,
    )
    lr_enc, lr_dec = cfg.resolved_lr()
    if cfg.method in VAE_FAMILY:
        optimizer = torch.optim.Adam(model.parameters(), lr=lr_enc)
        enc_opt = dec_opt = None
    else:
        optimizer = None
        enc_opt = torch.optim.Adam(model.encoder.parameters(), lr=lr_enc)
        dec_opt = torch.optim.Adam(model.decoder.parameters(), lr=lr_dec)

    patience = cfg.resolved_patience()
    shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM])
    val_seed = cfg.seed + _VAL_NOISE_OFFSET
    state = TrainState()
    best_params = copy.deepcopy(model.state_dict())

    run_dir = Path(run_dir) if run_dir is not None else None
    losses_file = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(
            json.dumps(
                {"train": cfg.to_dict(), "model": model_config.to_dict()},
                indent=2,
                sort_keys=True,
            )
        )
        losses_file = (run_dir / "losses.jsonl").open("w")

    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(x_train))
            if cfg.method in VAE_FAMILY:
                train_mean = train_epoch_vae(
                    ctx, optimizer, x_train, attrs_train, order, cfg, state
                )
            else:
                train_mean = train_epoch_sivae(
                    ctx, enc_opt, dec_opt, x_train, attrs_train, order, cfg, state
                )
            val_total, val_mean = _validation_breakdown(ctx, x_val, attrs_val, cfg, val_seed)
            state.epoch = epoch
            record = {
                "epoch": epoch,
                "steps": state.steps,
                "train": train_mean.to_dict(),
                "val": val_mean.to_dict(),
                "val_total": val_total,
            }
            state.history.append(record)
            if losses_file is not None:
                losses_file.write(json.dumps(record, sort_keys=True) + "\n")
                losses_file.flush()
            if val_total < state.best_val_loss:
                state.best_val_loss = val_total
                state.best_epoch = epoch
                state.epochs_since_improvement = 0
                best_params = copy.deepcopy(model.state_dict())
            else:
                state.epochs_since_improvement += 1
            if run_dir is not None and cfg.checkpoint_every > 0 and epoch % cfg.checkpoint_every == 0:
                save_checkpoint(run_dir / "checkpoints" / f"epoch_{epoch}", model, epoch)
            if patience > 0 and state.epochs_since_improvement >= patience:
                state.stopped_early = True
                break
    except TrainingDivergedError as exc:
        if run_dir is not None:
            (run_dir / "error.json").write_text(
                json.dumps(
                    {"error": str(exc), "epoch": state.epoch + 1, "breakdown": exc.breakdown},
                    indent=2,
                    sort_keys=True,
                )
            )
        raise
    finally:
        if losses_file is not None:
            losses_file.close()

    model.load_state_dict(best_params)
    model.eval()
    manifest = {
        "method": cfg.method,
        "train_config": cfg.to_dict(),
        "model_config": model_config.to_dict(),
        "seed": cfg.seed,
        "dataset_fingerprint": dataset_fingerprint,
        "epochs_trained": state.epoch,
        "best_epoch": state.best_epoch,
        "best_val_loss": state.best_val_loss if state.history else None,
        "stopped_early": state.stopped_early,
        "total_steps": state.steps,
    }
    if run_dir is not None:
        save_checkpoint(
            run_dir / "best",
            model,
            state.best_epoch,
            extra_metadata={"optimizer": {"type": "adam", "lr_encoder": lr_enc, "lr_decoder": lr_dec}},
        )
        (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return FitResult(model=model, state=state, manifest=manifest, run_dir=run_dir)
