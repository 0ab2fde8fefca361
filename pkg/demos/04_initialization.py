#!/usr/bin/env python3
"""Initializing core entries so the reconstructed weights behave.

A reconstructed entry is a sum over all inner-rank paths of products of
core entries. With zero-mean i.i.d. cores the paths are uncorrelated, so
the entry variance is (core variance)^n times the number of paths, and
for many cores the entry distribution is close to normal. The schemes
here pick the per-core scale so the reconstructed entries match a target:

  gaussian-variance-matched  entry variance M^-1/2
  flat-gaussian              |entry| <= B with probability 1 - alpha
  flat-uniform               same target, uniform core entries
"""

import numpy as np

from ttlstm.ttrain import (
    InitScheme,
    ShapeFactorization,
    init_params,
    inverse_normal_cdf,
    new_mps,
    reconstruct,
)

fact = ShapeFactorization((10, 10), (10, 10))
chain = (1, 8, 8, 8, 1)
m = fact.n_cols

print("-- per-entry scales for a 4-core train, ranks 8, M = 100 --")
for kind in InitScheme.KINDS:
    scheme = InitScheme(kind)
    scale = init_params(scheme, m, 4, chain)
    label = "half-width" if kind == InitScheme.FLAT_UNIFORM else "std dev"
    print(f"  {kind:>26}: {label} = {scale:.5f}")

print("\n-- Monte Carlo check of the variance targets --")
print("   (pooled over 100 independent trains: entries within one train")
print("    are correlated through the shared cores)")
quantile = inverse_normal_cdf(0.975)
targets = {
    InitScheme.GAUSSIAN: m ** -0.5,
    InitScheme.FLAT_GAUSSIAN: (m ** -0.5 / quantile) ** 2,
    InitScheme.FLAT_UNIFORM: (m ** -0.5 / quantile) ** 2,
}
rng = np.random.default_rng(0)
for kind in InitScheme.KINDS:
    pooled = np.concatenate([
        reconstruct(new_mps(fact, (1, 8, 8), (8, 8, 1), InitScheme(kind), seed=k))
        .reshape(-1)[rng.choice(10_000, size=100, replace=False)]
        for k in range(100)
    ])
    print(f"  {kind:>26}: empirical var {pooled.var():.4f} (target {targets[kind]:.4f})")

print("\n-- the flatness quantile --")
alpha = 0.05
q = inverse_normal_cdf(1 - alpha / 2)
print(f"  inverse normal CDF at {1 - alpha / 2}: {q:.9f}")
train = new_mps(fact, (1, 8, 8), (8, 8, 1),
                InitScheme(InitScheme.FLAT_GAUSSIAN, bound=0.25, alpha=alpha), seed=7)
w = reconstruct(train)
inside = np.mean(np.abs(w) <= 0.25)
print(f"  flat-gaussian with B=0.25, alpha=0.05: {inside:.1%} of entries inside (-B, B)")
