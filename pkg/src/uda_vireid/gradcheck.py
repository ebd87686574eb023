"""Finite-difference checks of every analytic loss gradient on seeded random instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CenterMemory, l2_normalize
from .losses import (
    cmcc_loss,
    discriminator_loss,
    finite_difference_gradient,
    generator_adversarial_loss,
    memory_contrastive_loss,
    reference_memory,
    relative_error,
    unified_memory,
)

TOLERANCES = {
    "discriminator": 1e-5,
    "generator": 1e-5,
    "contrastive": 1e-5,
    "cmcc_center": 1e-4,
    "cmcc_pairwise": 1e-4,
}


@dataclass(frozen=True)
class CheckResult:
    loss: str
    n_instances: int
    max_relative_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance


def _probs(rng, n):
    return rng.uniform(0.05, 0.95, size=n)


def _discriminator_instance(rng):
    n = int(rng.integers(1, 12))
    p = _probs(rng, n)
    d = rng.integers(0, 2, size=n).astype(np.float64)
    return discriminator_loss(p, d).grad, finite_difference_gradient(lambda q: discriminator_loss(q, d).value, p)


def _generator_instance(rng):
    p = _probs(rng, int(rng.integers(1, 12)))
    return generator_adversarial_loss(p).grad, finite_difference_gradient(lambda q: generator_adversarial_loss(q).value, p)


def _memory(rng, n, dim):
    return CenterMemory(l2_normalize(rng.standard_normal((n, dim))))


def _contrastive_instance(rng):
    dim = int(rng.integers(2, 9))
    n_s, n_t = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    umem = unified_memory(_memory(rng, n_s, dim), _memory(rng, n_t, dim))
    offset = int(rng.choice([0, n_s]))
    n_rows = n_s if offset == 0 else n_t
    x = rng.standard_normal((int(rng.integers(1, 7)), dim))
    y = rng.integers(0, n_rows, size=x.shape[0])
    temp = float(rng.uniform(0.5, 2.0))

    def f(z):
        return memory_contrastive_loss(z, y, umem, offset, temp).value

    return memory_contrastive_loss(x, y, umem, offset, temp).grad, finite_difference_gradient(f, x)


def _cmcc_instance(rng, mode):
    dim = int(rng.integers(2, 7))
    n_ids = int(rng.integers(1, 4))
    ref = reference_memory(*(_memory(rng, int(rng.integers(1, 4)), dim) for _ in range(4)))
    yv = np.concatenate([np.arange(n_ids), rng.integers(-1, n_ids, size=int(rng.integers(0, 4)))])
    yi = np.concatenate([np.arange(n_ids), rng.integers(-1, n_ids, size=int(rng.integers(0, 4)))])
    # moderate temperature and feature scale keep the softmax off the float floor
    tau = float(rng.uniform(0.5, 2.0))
    xv = 0.5 * rng.standard_normal((yv.size, dim))
    xi = 0.5 * rng.standard_normal((yi.size, dim))
    nv = yv.size
    at_x = cmcc_loss(xv, yv, xi, yi, ref, tau, mode)

    # the confidence weight is a constant for differentiation
    def f(z):
        return cmcc_loss(z[:nv], yv, z[nv:], yi, ref, tau, mode, weights=at_x.confidence).value

    return at_x.grad, finite_difference_gradient(f, np.concatenate([xv, xi]))


_BUILDERS = {
    "discriminator": _discriminator_instance,
    "generator": _generator_instance,
    "contrastive": _contrastive_instance,
    "cmcc_center": lambda rng: _cmcc_instance(rng, "center"),
    "cmcc_pairwise": lambda rng: _cmcc_instance(rng, "pairwise"),
}


def run_gradcheck(n_instances: int = 50, seed: int = 0, losses=None) -> list[CheckResult]:
    """Compare analytic and central-difference gradients; one result per loss."""
    names = list(_BUILDERS) if losses is None else list(losses)
    results = []
    for k, name in enumerate(names):
        rng = np.random.default_rng([seed, k])
        worst = 0.0
        for _ in range(n_instances):
            analytic, numeric = _BUILDERS[name](rng)
            worst = max(worst, relative_error(analytic, numeric))
        results.append(CheckResult(name, n_instances, worst, TOLERANCES[name]))
    return results
