"""
Lifting 2D tokens into a latent volume
======================================

A forward pass at toy size, plus the shape trace of the full-size model,
which is far too big to run here.
"""

import time

import numpy as np

from fus3dkit.lift3d import (
    FULL_CONFIG,
    LiftConfig,
    LiftModel,
    TokenSet,
    canonical_embedding,
    synthetic_tokens,
    trace_shapes,
)

cfg = LiftConfig()  # extent 4, dim 32, 4 stages x 2 repeats
model = LiftModel(cfg)
init = canonical_embedding(cfg)
tokens = synthetic_tokens(cfg, n_views=2, tokens_per_view=16, seed=1)

t0 = time.perf_counter()
order = []
latent = model.extract(init, tokens, trace=order)
sdf = model.decode(latent)
print(f"{len(order)} blocks in {time.perf_counter() - t0:.3f}s, output grid {sdf.values.shape}")
print("schedule (repeat, stage):", order)

# shuffling the views and tokens changes nothing
flat = [s.reshape(-1, cfg.latent_dim) for s in tokens.stages]
perm = np.random.default_rng(0).permutation(len(flat[0]))
shuffled = TokenSet(tuple(f[perm].reshape(s.shape) for f, s in zip(flat, tokens.stages)))
print("max change after shuffling:", np.abs(model.extract(init, shuffled).tokens - latent.tokens).max())

for name, shape in trace_shapes(FULL_CONFIG, n_views=4, tokens_per_view=1369)[:3] + trace_shapes(FULL_CONFIG, 4, 1369)[-3:]:
    print(f"{name:28s} {shape}")
