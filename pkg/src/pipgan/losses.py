"""The five objective terms and their weighted total.

All terms are plain functions of tensors so each is independently evaluable
and differentiable. L1-style norms are implemented as means over elements,
keeping the weights resolution-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import CapabilityError

LOG_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Multipliers for (adversarial, cascade, gradient penalty, classification, L1)."""

    xi1: float = 1.0
    xi2: float = 1.0
    xi3: float = 1.0
    xi4: float = 10.0
    xi5: float = 50.0

    def __post_init__(self):
        for name in ("xi1", "xi2", "xi3", "xi4", "xi5"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def as_tuple(self):
        return (self.xi1, self.xi2, self.xi3, self.xi4, self.xi5)


@dataclass(frozen=True)
class LossParts:
    """Individual generator loss values prior to weighting."""

    adversarial: torch.Tensor | float
    cascade: torch.Tensor | float
    gradient_penalty: torch.Tensor | float
    classification: torch.Tensor | float
    l1: torch.Tensor | float


def _clamped_sigmoid(logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(logits).clamp(LOG_EPS, 1.0 - LOG_EPS)


def adversarial_d_loss(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """mean[-log sig(real)] + mean[-log(1 - sig(fake))] over the patch maps."""
    real_term = -torch.log(_clamped_sigmoid(real_logits)).mean()
    fake_term = -torch.log(1.0 - _clamped_sigmoid(fake_logits)).mean()
    return real_term + fake_term


def adversarial_g_loss(fake_logits: torch.Tensor, mode: str = "non_saturating") -> torch.Tensor:
    """Generator adversarial term; the non-saturating form is the default."""
    sig = _clamped_sigmoid(fake_logits)
    if mode == "non_saturating":
        return -torch.log(sig).mean()
    if mode == "saturating":
        return torch.log(1.0 - sig).mean()
    raise ValueError(f"mode must be 'non_saturating' or 'saturating', got {mode!r}")


def classification_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Batch-averaged cross entropy of class logits against target indices."""
    labels = torch.as_tensor(labels, device=logits.device)
    if labels.dim() == 0:
        labels = labels[None]
    if labels.min() < 0 or labels.max() >= logits.shape[-1]:
        raise ValueError(
            f"labels must lie in [0, {logits.shape[-1] - 1}], got range "
            f"[{int(labels.min())}, {int(labels.max())}]"
        )
    return F.cross_entropy(logits, labels.long())


def resolve_lambdas(mode, feature_maps) -> list[float]:
    """Per-stage cascade weights: 'uniform' (1.0 each) or 'inverse_elements'."""
    if isinstance(mode, (list, tuple)):
        if len(mode) != len(feature_maps):
            raise ValueError(f"expected {len(feature_maps)} lambdas, got {len(mode)}")
        if any(v < 0 for v in mode):
            raise ValueError("cascade lambdas must be nonnegative")
        return [float(v) for v in mode]
    if mode == "uniform":
        return [1.0] * len(feature_maps)
    if mode == "inverse_elements":
        return [1.0 / float(f[0].numel()) for f in feature_maps]
    raise ValueError(f"unknown lambda mode {mode!r}")


def cascade_loss(features_fn, target_image, generated_image, lambdas="uniform") -> torch.Tensor:
    """Weighted mean-absolute distance between frozen feature maps of the two images.

    Gradients reach ``generated_image`` through the feature extractor only;
    target features are detached.
    """
    if target_image.shape != generated_image.shape:
        raise ValueError(
            f"target/generated shape mismatch: {tuple(target_image.shape)} vs "
            f"{tuple(generated_image.shape)}"
        )
    target_feats = [f.detach() for f in features_fn(target_image)]
    gen_feats = features_fn(generated_image)
    weights = resolve_lambdas(lambdas, target_feats)
    total = None
    for lam, ft, fg in zip(weights, target_feats, gen_feats):
        term = lam * (ft - fg).abs().mean()
        total = term if total is None else total + term
    return total


def gradient_penalty(discriminate_fn, condition_image, real_candidate, fake_candidate,
                     rng=None, alpha=None, attach_fake=False) -> torch.Tensor:
    """Two-sided unit-norm penalty on candidate-interpolate gradients.

    The interpolate mixes only the candidate images (condition held fixed)
    with per-sample alpha ~ U[0, 1]; the per-sample critic score is the mean
    patch logit. The fake candidate is detached unless ``attach_fake`` asks
    for the literal total-loss coupling.
    """
    real = real_candidate.detach()
    fake = fake_candidate if attach_fake else fake_candidate.detach()
    if alpha is None:
        n = real.shape[0]
        alpha = torch.rand((n,) + (1,) * (real.dim() - 1), generator=rng,
                           dtype=real.dtype, device=real.device)
    # the penalty value itself requires differentiation, so build the graph
    # even when called under torch.no_grad()
    with torch.enable_grad():
        x_hat = (1.0 - alpha) * real + alpha * fake
        if not x_hat.requires_grad:
            x_hat.requires_grad_(True)
        logits = discriminate_fn(condition_image, x_hat)
        score = logits.flatten(1).mean(dim=1)
        grads = torch.autograd.grad(score.sum(), x_hat, create_graph=True)[0]
        norms = grads.flatten(1).norm(2, dim=1)
        return ((norms - 1.0) ** 2).mean()


def l1_loss(target_image: torch.Tensor, generated_image: torch.Tensor) -> torch.Tensor:
    """Mean absolute pixel difference."""
    if target_image.shape != generated_image.shape:
        raise ValueError(
            f"target/generated shape mismatch: {tuple(target_image.shape)} vs "
            f"{tuple(generated_image.shape)}"
        )
    return (target_image - generated_image).abs().mean()


def total_generator_loss(parts: LossParts, weights: LossWeights):
    """xi1*adv + xi2*cascade + xi3*gp + xi4*classification + xi5*l1."""
    return (weights.xi1 * parts.adversarial
            + weights.xi2 * parts.cascade
            + weights.xi3 * parts.gradient_penalty
            + weights.xi4 * parts.classification
            + weights.xi5 * parts.l1)


def ensure_double_backward() -> None:
    """Verify the backend can differentiate through gradients; raise early if not."""
    try:
        x = torch.ones(1, requires_grad=True)
        (g,) = torch.autograd.grad(x * x, x, create_graph=True)
        g.backward()
    except Exception as exc:  # pragma: no cover - depends on backend build
        raise CapabilityError(f"backend lacks double-backward support: {exc}") from exc
