"""Gaussian-mixture latent distribution with one component per class.

Component means are drawn once from a standard normal and then frozen;
covariances are identity matrices (stored implicitly, so every Gaussian
evaluation reduces to a squared distance) and the mixture weights default
to uniform and are never trained. All mixture math stays in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GmmLatent:
    means: np.ndarray        # (K, d), frozen after init
    log_weights: np.ndarray  # (K,), log mixture weights
    seed: int = 0

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def init_latent(n_components: int, dim: int, seed: int = 0,
                weights: np.ndarray | None = None) -> GmmLatent:
    """Draw component means from N(0, I); weights default to uniform."""
    if n_components < 1 or dim < 1:
        raise ConfigError(
            f"need n_components >= 1 and dim >= 1, got K={n_components}, d={dim}")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((n_components, dim))
    if weights is None:
        log_w = np.full(n_components, -np.log(n_components))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n_components,) or np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("weights must be positive and sum to 1")
        log_w = np.log(w)
    return GmmLatent(means=means, log_weights=log_w, seed=seed)


def gaussian_logpdf(z, mean) -> dc.Tensor:
    """log N(z | mean, I) = -d/2 log(2 pi) - ||z - mean||^2 / 2.

    z may be a vector, a batch, or a graph tensor; mean may be a single
    vector or per-row means aligned with a batch.
    """
    zt = dc.as_tensor(z)
    mu = np.asarray(mean, dtype=np.float64)
    d = zt.shape[-1]
    diff = zt - dc.as_tensor(mu)
    if diff.ndim == 1:
        q = dc.sum(diff * diff)
    else:
        q = dc.sum(diff * diff, axis=1)
    return q * (-0.5) + (-0.5 * d * LOG_2PI)


def mixture_logpdf(z, latent: GmmLatent) -> dc.Tensor:
    """log sum_k pi_k N(z | mu_k, I), evaluated with logsumexp.

    Expands the squared distance so a batch against all K components is one
    matrix product; equal to stacking ``gaussian_logpdf`` per component up
    to float roundoff.
    """
    zt = dc.as_tensor(z)
    single = zt.ndim == 1
    if single:
        zt = dc.reshape(zt, (1, zt.shape[0]))
    mu = latent.means
    d = mu.shape[1]
    row_const = latent.log_weights - 0.5 * np.einsum("kd,kd->k", mu, mu) - 0.5 * d * LOG_2PI
    cross = dc.matmul(zt, dc.as_tensor(mu.T))            # (N, K)
    sq = dc.sum(zt * zt, axis=1, keepdims=True)          # (N, 1)
    comp = cross + sq * (-0.5) + dc.as_tensor(row_const)
    out = dc.logsumexp(comp, axis=1)
    return dc.reshape(out, ()) if single else out


def class_conditional_loglik(v, labels, flow_model, latent: GmmLatent) -> dc.Tensor:
    """log p(v | y=k): likelihood under the class's own latent component.

    ``labels`` is one class index for a single vector or an aligned vector
    of indices for a batch (0-based).
    """
    from .flow import flow_forward

    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if lab.min() < 0 or lab.max() >= latent.n_components:
        raise ValueError(
            f"class index outside [0, {latent.n_components}): {lab.min()}..{lab.max()}")
    z, logdet = flow_forward(v, flow_model)
    mu = latent.means[lab[0]] if z.ndim == 1 else latent.means[lab]
    return gaussian_logpdf(z, mu) + logdet


def marginal_loglik(v, flow_model, latent: GmmLatent) -> dc.Tensor:
    """log p(v) through the full mixture; differentiable w.r.t. v."""
    from .flow import flow_forward

    z, logdet = flow_forward(v, flow_model)
    return mixture_logpdf(z, latent) + logdet
