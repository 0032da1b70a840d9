"""Loss functions for all four training methods.

The attribute regularizer matches a latent dimension's pairwise ordering to
an attribute's pairwise ordering:

    L(z_k, a) = mean_ij | tanh(delta * (z_k_i - z_k_j)) - sgn(a_i - a_j) |

The plain-VAE total is ``recon + beta * KL + gamma_reg * sum_l L(z_l, a_l)``.
The adversarial pair of objectives (encoder / decoder) is, for real images x
and decoded prior draws ("fakes"), with normalizer s and weights beta_*:

    enc = gamma_reg * L_attr + s * (beta_rec * Lr(x) + beta_kl * KL(x))
          + (1/alpha) * exp(-alpha * s * (beta_rec * Lr(fake) + beta_neg * KL(fake)))
    dec = s * beta_rec * Lr(x) + s * (eta * beta_rec * Lr(fake) + beta_kl * KL(fake))

The encoder's exponential term shrinks as fake samples get harder to
reconstruct or embed near the prior, i.e. the encoder is rewarded for
pushing generated samples away; the decoder is rewarded for the opposite.
All reductions are means over the batch; KL sums over latent dims;
reconstruction terms passed to the adversarial losses sum over pixels
(the trainer multiplies mean-form reconstruction by the pixel count).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch

from .errors import ContractError, InvalidConfigError, TrainingDivergedError
from .perceptual import PerceptualDistance, default_stack


@dataclass
class LossWeights:
    """All loss hyperparameters, method-agnostic.

    ``s`` is the adversarial normalizer; ``None`` resolves to
    ``1 / (channels * H * W)`` at training time, which puts the pixel-summed
    reconstruction terms back on a per-pixel scale inside the exponential.
    """

    beta: float = 4.0
    gamma_reg: float = 100.0
    delta: float = 1.0
    alpha: float = 2.0
    eta: float = 1.0
    s: float | None = None
    beta_rec: float = 1.0
    beta_kl: float = 1.0
    beta_neg: float = 1.0
    alpha_pl: float = 0.1

    def validate(self) -> None:
        for name in ("beta", "gamma_reg", "delta", "alpha", "eta", "beta_rec",
                     "beta_kl", "beta_neg", "alpha_pl"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidConfigError(f"weight {name} must be finite and >= 0, got {v}")
        if self.delta <= 0:
            raise InvalidConfigError(f"delta must be > 0, got {self.delta}")
        if self.alpha <= 0:
            raise InvalidConfigError(f"alpha must be > 0, got {self.alpha}")
        if self.s is not None and not (math.isfinite(self.s) and self.s > 0):
            raise InvalidConfigError(f"s must be > 0 when set, got {self.s}")

    def resolve_s(self, image_shape: tuple[int, int, int]) -> float:
        if self.s is not None:
            return float(self.s)
        channels, height, width = image_shape
        return 1.0 / (channels * height * width)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        try:
            w = cls(**d)
        except TypeError as exc:
            raise InvalidConfigError(f"unknown loss weight: {exc}") from exc
        w.validate()
        return w


@dataclass
class LossBreakdown:
    """Per-step (or per-epoch aggregate) loss components."""

    recon_real: float = 0.0
    kl_real: float = 0.0
    recon_fake: float = 0.0
    kl_fake: float = 0.0
    attr_total: float = 0.0
    encoder_total: float = 0.0
    decoder_total: float = 0.0
    per_attribute: tuple[float, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_attribute"] = list(self.per_attribute)
        return d

    def is_finite(self) -> bool:
        values = [self.recon_real, self.kl_real, self.recon_fake, self.kl_fake,
                  self.attr_total, self.encoder_total, self.decoder_total,
                  *self.per_attribute]
        return all(math.isfinite(v) for v in values)


def _scalar(value) -> float:
    """Plain float from a tensor or number without autograd warnings."""
    if torch.is_tensor(value):
        return float(value.detach())
    return float(value)


def pairwise_distance_matrix(values) -> torch.Tensor:
    """M[i, j] = v[i] - v[j]; antisymmetric with a zero diagonal."""
    v = torch.as_tensor(values)
    if v.ndim != 1 or v.numel() < 1:
        raise ContractError(f"expected a non-empty 1-D vector, got shape {tuple(v.shape)}")
    return v[:, None] - v[None, :]


def attribute_reg_loss(z_k, a, delta: float) -> torch.Tensor:
    """Mean absolute mismatch between latent and attribute orderings.

    Averages over all N^2 pairs (the zero diagonal included); bounded in
    [0, 2] and invariant under strictly increasing transforms of ``a``.
    """
    z_k = torch.as_tensor(z_k)
    a = torch.as_tensor(a)
    if z_k.ndim != 1 or a.ndim != 1 or z_k.shape != a.shape:
        raise ContractError(
            f"z_k and a must be equal-length vectors, got {tuple(z_k.shape)} vs {tuple(a.shape)}"
        )
    if z_k.numel() < 2:
        raise ContractError("need at least 2 samples to compare pairwise orderings")
    if delta <= 0:
        raise ContractError(f"delta must be > 0, got {delta}")
    d_k = pairwise_distance_matrix(z_k)
    d_a = pairwise_distance_matrix(a)
    return (torch.tanh(delta * d_k) - torch.sign(d_a)).abs().mean()


def attribute_total_loss(
    z: torch.Tensor, attrs: torch.Tensor, delta: float, num_dims: int | None = None
) -> tuple[torch.Tensor, tuple[float, ...]]:
    """Sum of per-dimension regularizers; dim l is paired with attribute l."""
    if z.ndim != 2 or attrs.ndim != 2 or z.shape[0] != attrs.shape[0]:
        raise ContractError(
            f"z and attrs must be aligned matrices, got {tuple(z.shape)} vs {tuple(attrs.shape)}"
        )
    num_dims = attrs.shape[1] if num_dims is None else num_dims
    if num_dims > z.shape[1] or num_dims > attrs.shape[1]:
        raise ContractError(
            f"cannot regularize {num_dims} dims with {z.shape[1]} latents "
            f"and {attrs.shape[1]} attributes"
        )
    per_attr = [attribute_reg_loss(z[:, l], attrs[:, l], delta) for l in range(num_dims)]
    if not per_attr:
        zero = torch.zeros((), dtype=z.dtype, device=z.device)
        return zero, ()
    total = torch.stack(per_attr).sum()
    return total, tuple(_scalar(v) for v in per_attr)


def gaussian_kl(mu, logvar) -> torch.Tensor:
    """KL(N(mu, exp(logvar)) || N(0, I)): sum over dims, mean over batch."""
    mu = torch.as_tensor(mu)
    logvar = torch.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ContractError(f"mu/logvar shape mismatch: {tuple(mu.shape)} vs {tuple(logvar.shape)}")
    if mu.ndim == 1:  # single sample
        mu = mu[None, :]
        logvar = logvar[None, :]
    per_sample = 0.5 * (torch.exp(logvar) + mu**2 - 1.0 - logvar).sum(dim=-1)
    return per_sample.mean()


def reconstruction_loss(
    x, x_hat, alpha_pl: float = 0.0, perceptual: PerceptualDistance | None = None
) -> torch.Tensor:
    """Pixel-mean squared error plus weighted perceptual feature distance."""
    x = torch.as_tensor(x)
    x_hat = torch.as_tensor(x_hat)
    if x.shape != x_hat.shape:
        raise ContractError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    mse = torch.mean((x - x_hat) ** 2)
    if alpha_pl == 0.0:
        return mse
    stack = perceptual if perceptual is not None else default_stack()
    return mse + alpha_pl * stack(x.float(), x_hat.float())


def attrivae_total_loss(
    x,
    x_hat,
    mu,
    logvar,
    z,
    attrs,
    weights: LossWeights,
    num_regularized_dims: int | None = None,
    perceptual: PerceptualDistance | None = None,
) -> tuple[torch.Tensor, LossBreakdown]:
    """recon + beta * KL + gamma_reg * attribute total; the plain-VAE objective.

    With ``gamma_reg == 0`` this reduces exactly to the unregularized total.
    """
    recon = reconstruction_loss(x, x_hat, weights.alpha_pl, perceptual)
    kl = gaussian_kl(mu, logvar)
    if weights.gamma_reg > 0:
        attrs_t = torch.as_tensor(attrs)
        if attrs_t.shape[1] > torch.as_tensor(z).shape[1]:
            raise ContractError(
                f"{attrs_t.shape[1]} attributes exceed latent size {torch.as_tensor(z).shape[1]}"
            )
        attr_total, per_attr = attribute_total_loss(
            torch.as_tensor(z), attrs_t, weights.delta, num_regularized_dims
        )
        total = recon + weights.beta * kl + weights.gamma_reg * attr_total
    else:
        attr_total, per_attr = torch.zeros((), dtype=recon.dtype), ()
        total = recon + weights.beta * kl
    breakdown = LossBreakdown(
        recon_real=_scalar(recon),
        kl_real=_scalar(kl),
        attr_total=_scalar(attr_total),
        encoder_total=_scalar(total),
        decoder_total=_scalar(total),
        per_attribute=per_attr,
    )
    return total, breakdown


def _check_finite(value: torch.Tensor, label: str, components: dict) -> None:
    if not torch.isfinite(value).all():
        raise TrainingDivergedError(
            f"{label} is non-finite",
            breakdown={k: _scalar(v) for k, v in components.items()},
        )


def sivae_encoder_loss(
    recon_real,
    kl_real,
    recon_fake,
    kl_fake,
    weights: LossWeights,
    s: float,
    attr_total=0.0,
) -> torch.Tensor:
    """Encoder objective: real ELBO pull plus a bounded push on fakes.

    The exponential term lies in (0, 1/alpha]; larger fake losses shrink it,
    so minimizing rewards the encoder for mapping fakes far from the prior.
    """
    recon_real = torch.as_tensor(recon_real)
    kl_real = torch.as_tensor(kl_real)
    recon_fake = torch.as_tensor(recon_fake)
    kl_fake = torch.as_tensor(kl_fake)
    attr_total = torch.as_tensor(attr_total)
    real_term = s * (weights.beta_rec * recon_real + weights.beta_kl * kl_real)
    fake_arg = weights.beta_rec * recon_fake + weights.beta_neg * kl_fake
    exp_term = (1.0 / weights.alpha) * torch.exp(-weights.alpha * s * fake_arg)
    total = weights.gamma_reg * attr_total + real_term + exp_term
    _check_finite(
        total,
        "encoder loss",
        {
            "recon_real": recon_real,
            "kl_real": kl_real,
            "recon_fake": recon_fake,
            "kl_fake": kl_fake,
            "attr_total": attr_total,
            "exp_term": exp_term,
        },
    )
    return total


def sivae_decoder_loss(
    recon_real,
    recon_fake,
    kl_fake,
    weights: LossWeights,
    s: float,
) -> torch.Tensor:
    """Decoder objective: reconstruct real data, make fakes look embeddable."""
    recon_real = torch.as_tensor(recon_real)
    recon_fake = torch.as_tensor(recon_fake)
    kl_fake = torch.as_tensor(kl_fake)
    total = s * weights.beta_rec * recon_real + s * (
        weights.eta * weights.beta_rec * recon_fake + weights.beta_kl * kl_fake
    )
    _check_finite(
        total,
        "decoder loss",
        {"recon_real": recon_real, "recon_fake": recon_fake, "kl_fake": kl_fake},
    )
    return total
