"""Convolutional encoder/decoder with a reparameterized Gaussian latent.

The encoder and decoder are independent parameter sets so the trainer can
freeze one while updating the other.  All stochasticity goes through
explicitly passed generators; in evaluation the model is a deterministic
function of its parameters and inputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import archive as archive_io
from .errors import CheckpointNotFoundError, ContractError, InvalidConfigError

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0

_STAGE_FACTORS = (1, 2, 4, 8)  # four stride-2 stages


@dataclass
class ModelConfig:
    latent_dim: int = 16
    channels: int = 2
    image_size: int = 64
    width_multiplier: int = 1
    num_regularized_dims: int = 6
    base_width: int = 32
    phase: str = "both"  # which dataset channels feed the model: both | ed | es

    def validate(self) -> None:
        if self.latent_dim < 1:
            raise InvalidConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not (0 <= self.num_regularized_dims <= self.latent_dim):
            raise InvalidConfigError(
                f"num_regularized_dims must lie in [0, {self.latent_dim}], "
                f"got {self.num_regularized_dims}"
            )
        if self.image_size % 16 != 0 or self.image_size < 16:
            raise InvalidConfigError(
                f"image_size must be a positive multiple of 16, got {self.image_size}"
            )
        if self.channels not in (1, 2):
            raise InvalidConfigError(f"channels must be 1 or 2, got {self.channels}")
        if self.width_multiplier < 1 or self.base_width < 8:
            raise InvalidConfigError("width_multiplier must be >= 1 and base_width >= 8")
        if self.phase not in ("both", "ed", "es"):
            raise InvalidConfigError(f"phase must be both/ed/es, got {self.phase!r}")
        if (self.phase == "both") != (self.channels == 2):
            raise InvalidConfigError("phase 'both' requires channels=2 and vice versa")

    def stage_widths(self) -> tuple[int, ...]:
        w = self.base_width * self.width_multiplier
        return tuple(w * f for f in _STAGE_FACTORS)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            cfg = cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown model field: {exc}") from exc
        cfg.validate()
        return cfg


def _norm(channels: int) -> nn.Module:
    return nn.GroupNorm(min(8, channels), channels)


class ConvEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = config.stage_widths()
        layers: list[nn.Module] = []
        in_ch = config.channels
        for w in widths:
            layers += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), _norm(w), nn.SiLU()]
            in_ch = w
        self.stages = nn.Sequential(*layers)
        feat = widths[-1] * (config.image_size // 16) ** 2
        self.fc_mu = nn.Linear(feat, config.latent_dim)
        self.fc_logvar = nn.Linear(feat, config.latent_dim)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.stages(x).flatten(1)
        mu = self.fc_mu(h)
        logvar = torch.clamp(self.fc_logvar(h), LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar


class ConvDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = config.stage_widths()
        self.spatial = config.image_size // 16
        self.top_width = widths[-1]
        self.fc = nn.Linear(config.latent_dim, widths[-1] * self.spatial**2)
        layers: list[nn.Module] = []
        in_ch = widths[-1]
        for w in reversed(widths[:-1]):
            layers += [nn.ConvTranspose2d(in_ch, w, 4, stride=2, padding=1), _norm(w), nn.SiLU()]
            in_ch = w
        layers += [nn.ConvTranspose2d(in_ch, config.channels, 4, stride=2, padding=1), nn.Sigmoid()]
        self.stages = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.fc(z).reshape(z.shape[0], self.top_width, self.spatial, self.spatial)
        return self.stages(h)


class ConvVAE(nn.Module):
    """Encoder/decoder pair with freeze control per component."""

    def __init__(self, config: ModelConfig):
        config.validate()
        super().__init__()
        self.config = config
        self.encoder = ConvEncoder(config)
        self.decoder = ConvDecoder(config)

    def encode(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        expected = (self.config.channels, self.config.image_size, self.config.image_size)
        if images.ndim != 4 or tuple(images.shape[1:]) != expected:
            raise ContractError(
                f"expected image batch of shape (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {tuple(images.shape)}"
            )
        return self.encoder(images)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ContractError(
                f"expected codes of shape (B, {self.config.latent_dim}), got {tuple(z.shape)}"
            )
        return self.decoder(z)

    def sample_prior(self, n: int, generator: torch.Generator | None = None) -> torch.Tensor:
        z = torch.randn(n, self.config.latent_dim, generator=generator)
        return z.to(next(self.parameters()).device, next(self.parameters()).dtype)

    def set_trainable(self, component: str, flag: bool) -> None:
        if component == "encoder":
            module = self.encoder
        elif component == "decoder":
            module = self.decoder
        else:
            raise ContractError(f"component must be 'encoder' or 'decoder', got {component!r}")
        for p in module.parameters():
            p.requires_grad_(flag)

    def forward(
        self, images: torch.Tensor, generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        mu, logvar = self.encode(images)
        z = reparameterize(mu, logvar, generator=generator)
        return self.decode(z), mu, logvar, z


def reparameterize(
    mu: torch.Tensor,
    logvar: torch.Tensor,
    generator: torch.Generator | None = None,
    eps: torch.Tensor | None = None,
) -> torch.Tensor:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I).

    ``eps`` may be passed explicitly (tests, paired comparisons); otherwise
    it is drawn from ``generator`` so all noise comes from seeded streams.
    """
    if mu.shape != logvar.shape:
        raise ContractError(f"mu/logvar shape mismatch: {tuple(mu.shape)} vs {tuple(logvar.shape)}")
    if eps is None:
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    elif eps.shape != mu.shape:
        raise ContractError(f"eps shape {tuple(eps.shape)} does not match mu {tuple(mu.shape)}")
    return mu + torch.exp(0.5 * logvar) * eps


def build_model(config: ModelConfig, seed: int) -> ConvVAE:
    """Construct a ConvVAE with parameter init drawn from ``seed`` only."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return ConvVAE(config)


def save_checkpoint(
    path: str | Path,
    model: ConvVAE,
    epoch: int,
    extra_metadata: dict | None = None,
) -> Path:
    """Persist model parameters in the shared array-archive format."""
    arrays = {f"param.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    metadata = {
        "kind": "checkpoint",
        "model_config": model.config.to_dict(),
        "epoch": int(epoch),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    return archive_io.save_array_archive(path, arrays, metadata)


def load_checkpoint(path: str | Path) -> tuple[ConvVAE, dict]:
    """Rebuild a model from a checkpoint archive; round-trips bit-exactly."""
    path = Path(path)
    if not (path / archive_io.MANIFEST_NAME).is_file():
        raise CheckpointNotFoundError(f"no checkpoint at {path}")
    arrays, metadata = archive_io.load_array_archive(path)
    config = ModelConfig.from_dict(metadata["model_config"])
    model = ConvVAE(config)
    state = {
        k[len("param.") :]: torch.from_numpy(np.array(v))
        for k, v in arrays.items()
        if k.startswith("param.")
    }
    model.load_state_dict(state, strict=True)
    model.eval()
    return model, metadata
