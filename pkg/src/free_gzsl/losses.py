"""Loss terms for the VAE-GAN generator and the feature-refinement module.

All functions take and return graph node ids; every result is a scalar
node of shape (1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, ShapeError
from .models import Bound, discriminate


@dataclass(frozen=True)
class LossWeights:
    lambda_gp: float = 10.0
    lambda_samc: float = 0.5
    lambda_ra: float = 0.001
    gamma: float = 0.8
    delta: float = 1.0

    def __post_init__(self):
        for f in ("lambda_gp", "lambda_samc", "lambda_ra", "delta"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")


def _same(g: Graph, a, b, what):
    if g.shape(a) != g.shape(b):
        raise ShapeError(f"{what}: shapes {g.shape(a)} and {g.shape(b)} differ")


def kl_gaussian(g: Graph, mu: int, log_var: int) -> int:
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over dims, averaged over rows."""
    _same(g, mu, log_var, "kl_gaussian")
    inner = g.sub(g.add_scalar(log_var, 1.0), g.add(g.square(mu), g.exp(log_var)))
    per_row = g.reduce_sum(inner, axis=1)
    return g.scalar_mul(g.reduce_mean(per_row), -0.5)


def recon_loss(g: Graph, x: int, x_hat: int) -> int:
    _same(g, x, x_hat, "recon_loss")
    return g.reduce_mean(g.square(g.sub(x, x_hat)))


def _critic(bm, critic):
    if critic is not None:
        return (bm.graph if isinstance(bm, Bound) else bm), critic
    return bm.graph, lambda x, a: discriminate(bm, x, a)


def gradient_penalty(bm, x_real: int, x_fake: int, a: int, tau, critic=None) -> int:
    """mean((||grad_x' D(x', a)||_2 - 1)^2) at x' = tau x + (1 - tau) x_fake.

    Built through the graph's own gradient nodes, so it is differentiable
    w.r.t. the critic parameters.  ``critic(x, a)`` overrides the model's
    discriminator; ``bm`` may then be a bare Graph.
    """
    g, critic = _critic(bm, critic)
    _same(g, x_real, x_fake, "gradient_penalty")
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    if tau.shape[0] != g.shape(x_real)[0]:
        raise ShapeError(f"gradient_penalty: {tau.shape[0]} mixing weights for batch {g.shape(x_real)[0]}")
    return penalty_at_mix(g, x_real, x_fake, a, g.const(tau.reshape(-1, 1)), critic)


def penalty_at_mix(bm, x_real: int, x_fake: int, a: int, tau_col: int, critic=None) -> int:
    """``gradient_penalty`` with the mixing weights given as a [batch, 1] node."""
    g, critic = _critic(bm, critic)
    _same(g, x_real, x_fake, "gradient_penalty")
    t = g.expand(tau_col, g.shape(x_real))
    x_mix = g.add(x_fake, g.mul(t, g.sub(x_real, x_fake)))
    score = g.reduce_sum(critic(x_mix, a))
    grad = g.backward(score, [x_mix])[x_mix]
    norm = g.l2_norm_rows(grad)
    return g.reduce_mean(g.square(g.add_scalar(norm, -1.0)))


def wgan_d_loss(bm, x: int, x_hat: int, a: int, weights: LossWeights, tau, critic=None) -> int:
    """Critic objective E[D(x_hat)] - E[D(x)] + lambda * GP (minimized)."""
    g, critic = _critic(bm, critic)
    fake = g.reduce_mean(critic(x_hat, a))
    real = g.reduce_mean(critic(x, a))
    gp = gradient_penalty(g, x, x_hat, a, tau, critic)
    return g.add(g.sub(fake, real), g.scalar_mul(gp, weights.lambda_gp))


def wgan_g_loss(bm, x_hat: int, a: int, critic=None) -> int:
    g, critic = _critic(bm, critic)
    return g.neg(g.reduce_mean(critic(x_hat, a)))


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def samc_loss(g: Graph, mu: int, y, y_prime, centers: int, weights: LossWeights) -> int:
    """Self-adaptive margin center loss on encoded features ``mu``.

    mean_i max(0, delta + gamma |mu_i - c_y|^2 - (1 - gamma) |mu_i - c_y'|^2)
    """
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    y_prime = np.asarray(y_prime, dtype=np.int64).reshape(-1)
    n_classes = g.shape(centers)[0]
    if y.shape != y_prime.shape or y.size != g.shape(mu)[0]:
        raise ShapeError(f"samc_loss: {y.size} labels, {y_prime.size} negatives, batch {g.shape(mu)[0]}")
    for lab in (y, y_prime):
        bad = lab[(lab < 0) | (lab >= n_classes)]
        if bad.size:
            raise ValueError(f"samc_loss: labels {sorted(set(bad.tolist()))} have no center row")
    clash = np.flatnonzero(y == y_prime)
    if clash.size:
        raise ValueError(f"samc_loss: y == y' for samples {clash.tolist()[:10]}")

    return samc_from_one_hot(g, mu, g.const(one_hot(y, n_classes)), g.const(one_hot(y_prime, n_classes)),
                             centers, weights)


def samc_from_one_hot(g: Graph, mu: int, pos: int, neg: int, centers: int, weights: LossWeights) -> int:
    """``samc_loss`` with labels given as one-hot [batch, n_classes] nodes (no label checks)."""
    c_y = g.matmul(pos, centers)
    c_neg = g.matmul(neg, centers)
    intra = g.reduce_sum(g.square(g.sub(mu, c_y)), axis=1)
    inter = g.reduce_sum(g.square(g.sub(mu, c_neg)), axis=1)
    pre = g.sub(g.scalar_mul(intra, weights.gamma), g.scalar_mul(inter, 1.0 - weights.gamma))
    hinge = g.relu(g.add_scalar(pre, weights.delta))
    return g.reduce_mean(hinge)


def cyc_loss(g: Graph, a_hat_real: int, a_hat_syn: int, a: int) -> int:
    """E||a_hat_real - a||_1 + E||a_hat_syn - a||_1."""
    _same(g, a_hat_real, a, "cyc_loss")
    _same(g, a_hat_syn, a, "cyc_loss")
    return g.add(l1_term(g, a_hat_real, a), l1_term(g, a_hat_syn, a))


def l1_term(g: Graph, a_hat: int, a: int) -> int:
    _same(g, a_hat, a, "l1_term")
    return g.reduce_mean(g.reduce_sum(g.abs(g.sub(a_hat, a)), axis=1))


def total_loss(g: Graph, vae: int, wgan: int, samc: int, ra: int, weights: LossWeights) -> int:
    """L_V + L_W + lambda_samc * L_SAMC + lambda_ra * L_Ra."""
    out = g.add(vae, wgan)
    out = g.add(out, g.scalar_mul(samc, weights.lambda_samc))
    return g.add(out, g.scalar_mul(ra, weights.lambda_ra))
