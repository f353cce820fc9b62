"""Forward-only volumetric lifting of multi-view 2D tokens into a latent grid.

A grid of position-conditioned embeddings attends to the 2D tokens of one
backbone stage at a time (cross-attention over all views jointly), then to
itself (self-attention). Each attention sits in a pre-norm residual branch.
The stage sequence runs ``n_repeats`` times, so a config with 4 stages and 2
repeats executes 8 blocks. A small convolutional upsampler decodes the latent
grid to SDF values at four times its resolution.

Weights are seeded random draws; nothing here is trained. The module exists
to pin down shapes, determinism and the invariances of the attention
schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .grid import GridSpec, VoxelGrid

__all__ = [
    "LiftConfig",
    "LatentVolume",
    "TokenSet",
    "LiftModel",
    "FULL_CONFIG",
    "schedule",
    "canonical_embedding",
    "synthetic_tokens",
    "extract",
    "decode_sdf",
    "trace_shapes",
]

_LN_EPS = 1e-6


@dataclass(frozen=True)
class LiftConfig:
    latent_extent: int = 4
    latent_dim: int = 32
    n_stages: int = 4
    n_repeats: int = 2
    n_heads: int = 4
    seed: int = 0
    bounds: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if min(self.latent_extent, self.latent_dim, self.n_stages, self.n_repeats, self.n_heads) < 1:
            raise ValidationError("config entries must be positive")
        if self.latent_dim % self.n_heads:
            raise ValidationError(f"latent_dim {self.latent_dim} not divisible by n_heads {self.n_heads}")

    @property
    def n_blocks(self) -> int:
        return self.n_stages * self.n_repeats

    @property
    def decoder_channels(self) -> tuple[int, int]:
        d = self.latent_dim
        return max(d // 2, 4), max(d // 4, 2)

    def grid_spec(self, factor: int = 1) -> GridSpec:
        lo, hi = self.bounds
        return GridSpec.from_bounds(lo, hi, self.latent_extent * factor)


FULL_CONFIG = LiftConfig(latent_extent=16, latent_dim=2048, n_stages=4, n_repeats=2, n_heads=16)


@dataclass(frozen=True)
class LatentVolume:
    """``extent**3`` tokens in storage order (last axis fastest)."""

    tokens: np.ndarray = field(repr=False)
    extent: int
    spec: GridSpec

    def __post_init__(self):
        t = np.asarray(self.tokens)
        if t.ndim != 2 or t.shape[0] != self.extent**3:
            raise ValidationError(f"expected {self.extent ** 3} tokens, got shape {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValidationError("latent tokens must be finite")

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.spec.centers()


@dataclass(frozen=True)
class TokenSet:
    """Per-stage 2D tokens, each stage an array ``(n_views, tokens_per_view, dim)``."""

    stages: tuple

    def __post_init__(self):
        stages = tuple(np.asarray(s, dtype=np.float64) for s in self.stages)
        if not stages:
            raise ValidationError("token set has no stages")
        dims = {s.shape[-1] for s in stages}
        if any(s.ndim != 3 for s in stages) or len(dims) != 1:
            raise ValidationError("every stage must be (views, tokens, dim) with a common dim")
        object.__setattr__(self, "stages", stages)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def dim(self) -> int:
        return self.stages[0].shape[-1]

    def keys(self, stage: int) -> np.ndarray:
        """All views of one stage concatenated into a single key/value sequence."""
        s = self.stages[stage]
        return s.reshape(-1, s.shape[-1])


def schedule(config: LiftConfig) -> list[tuple[int, int]]:
    """``(repeat, stage)`` pairs in execution order."""
    return [(r, b) for r in range(config.n_repeats) for b in range(config.n_stages)]


def _posenc(coords: np.ndarray, dim: int, extent: int) -> np.ndarray:
    # coords in [-1, 1]; lowest frequency keeps sin monotone over the interval
    per_axis = dim // 3
    n_freq = per_axis // 2
    out = np.zeros((len(coords), dim))
    if n_freq == 0:
        return out
    ratio = max(float(extent), 1.0)
    k = np.arange(n_freq)
    freqs = 0.5 * np.pi * ratio ** (k / max(n_freq - 1, 1))
    for a in range(3):
        ang = coords[:, a : a + 1] * freqs
        out[:, a * per_axis : a * per_axis + n_freq] = np.sin(ang)
        out[:, a * per_axis + n_freq : a * per_axis + 2 * n_freq] = np.cos(ang)
    return out


def canonical_embedding(config: LiftConfig) -> LatentVolume:
    """Shared seeded base vector plus a sinusoidal code of each voxel centre."""
    rng = np.random.default_rng([config.seed, 1])
    base = rng.normal(0.0, 0.02, size=config.latent_dim)
    spec = config.grid_spec()
    lo, hi = config.bounds
    coords = (spec.centers() - 0.5 * (lo + hi)) / (0.5 * (hi - lo))
    tokens = base + _posenc(coords, config.latent_dim, config.latent_extent)
    return LatentVolume(tokens, config.latent_extent, spec)


def synthetic_tokens(config: LiftConfig, n_views: int, tokens_per_view: int, seed: int = 0) -> TokenSet:
    rng = np.random.default_rng([seed, 2])
    return TokenSet(
        tuple(rng.normal(size=(n_views, tokens_per_view, config.latent_dim)) for _ in range(config.n_stages))
    )


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + _LN_EPS) * gamma + beta


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


class _Attention:
    def __init__(self, rng, dim: int, heads: int):
        s = 1.0 / np.sqrt(dim)
        self.heads = heads
        self.wq, self.wk, self.wv, self.wo = (rng.normal(0.0, s, size=(dim, dim)) for _ in range(4))
        self.bq, self.bk, self.bv, self.bo = (np.zeros(dim) for _ in range(4))

    def __call__(self, x, kv):
        n, d = x.shape
        h = self.heads
        dh = d // h
        q = (x @ self.wq + self.bq).reshape(n, h, dh).transpose(1, 0, 2)
        k = (kv @ self.wk + self.bk).reshape(len(kv), h, dh).transpose(1, 0, 2)
        v = (kv @ self.wv + self.bv).reshape(len(kv), h, dh).transpose(1, 0, 2)
        logits = q @ k.transpose(0, 2, 1) / np.sqrt(dh)
        logits -= logits.max(axis=-1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=-1, keepdims=True)
        out = (w @ v).transpose(1, 0, 2).reshape(n, d)
        return out @ self.wo + self.bo


class _Norm:
    def __init__(self, dim: int):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)

    def __call__(self, x):
        return _layer_norm(x, self.gamma, self.beta)


class _Block:
    """Cross-attention to one stage's tokens followed by volumetric self-attention."""

    def __init__(self, rng, dim: int, heads: int):
        self.norm_q = _Norm(dim)
        self.norm_kv = _Norm(dim)
        self.cross = _Attention(rng, dim, heads)
        self.norm_self = _Norm(dim)
        self.self_attn = _Attention(rng, dim, heads)

    def __call__(self, x, kv, cross: bool = True):
        if cross:
            x = x + self.cross(self.norm_q(x), self.norm_kv(kv))
        h = self.norm_self(x)
        return x + self.self_attn(h, h)


def _upsample2(x, w, b):
    # transposed convolution, kernel 2, stride 2: every voxel spawns a 2^3 block
    e0, e1, e2, _ = x.shape
    y = np.einsum("ijkc,abgcd->iajbkgd", x, w)
    return y.reshape(2 * e0, 2 * e1, 2 * e2, w.shape[-1]) + b


def _conv3(x, w, b):
    # 3x3x3 convolution, zero padding, same size
    n0, n1, n2, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (1, 1), (0, 0)))
    out = np.zeros((n0, n1, n2, w.shape[-1]))
    for a in range(3):
        for c in range(3):
            for g in range(3):
                out += xp[a : a + n0, c : c + n1, g : g + n2] @ w[a, c, g]
    return out + b


class _Decoder:
    def __init__(self, rng, dim: int, channels: tuple[int, int]):
        c1, c2 = channels
        self.up1 = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(2, 2, 2, dim, c1))
        self.conv1 = rng.normal(0.0, 1.0 / np.sqrt(27 * c1), size=(3, 3, 3, c1, c1))
        self.up2 = rng.normal(0.0, 1.0 / np.sqrt(c1), size=(2, 2, 2, c1, c2))
        self.conv2 = rng.normal(0.0, 1.0 / np.sqrt(27 * c2), size=(3, 3, 3, c2, c2))
        self.proj = rng.normal(0.0, 1.0 / np.sqrt(c2), size=(c2, 1))
        self.b1, self.bc1 = np.zeros(c1), np.zeros(c1)
        self.b2, self.bc2 = np.zeros(c2), np.zeros(c2)
        self.bp = np.zeros(1)

    def __call__(self, grid):
        x = _gelu(_upsample2(grid, self.up1, self.b1))
        x = _gelu(_conv3(x, self.conv1, self.bc1))
        x = _gelu(_upsample2(x, self.up2, self.b2))
        x = _gelu(_conv3(x, self.conv2, self.bc2))
        # linear head: no output activation
        return (x @ self.proj + self.bp)[..., 0]


class LiftModel:
    """Seeded weights for every block of the schedule and the decoder."""

    def __init__(self, config: LiftConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 3])
        self.blocks = [_Block(rng, config.latent_dim, config.n_heads) for _ in range(config.n_blocks)]
        self.decoder = _Decoder(rng, config.latent_dim, config.decoder_channels)

    def extract(self, init: LatentVolume, tokens: TokenSet, cross_attention: bool = True, trace=None) -> LatentVolume:
        cfg = self.config
        if tokens.n_stages != cfg.n_stages:
            raise ValidationError(f"expected {cfg.n_stages} token stages, got {tokens.n_stages}")
        if tokens.dim != cfg.latent_dim or init.dim != cfg.latent_dim:
            raise ValidationError(f"token dim {tokens.dim} / latent dim {init.dim} != {cfg.latent_dim}")
        if init.extent != cfg.latent_extent:
            raise ValidationError("latent extent does not match config")
        x = np.array(init.tokens, dtype=np.float64)
        for n, (r, b) in enumerate(schedule(cfg)):
            x = self.blocks[n](x, tokens.keys(b), cross=cross_attention)
            if trace is not None:
                trace.append((r, b))
        return LatentVolume(x, init.extent, init.spec)

    def decode(self, latent: LatentVolume) -> VoxelGrid:
        e = latent.extent
        grid = latent.tokens.reshape(e, e, e, latent.dim)
        return VoxelGrid(self.config.grid_spec(4), self.decoder(grid))


def extract(init: LatentVolume, tokens: TokenSet, config: LiftConfig, **kw) -> LatentVolume:
    return LiftModel(config).extract(init, tokens, **kw)


def decode_sdf(latent: LatentVolume, config: LiftConfig) -> VoxelGrid:
    return LiftModel(config).decode(latent)


def trace_shapes(config: LiftConfig, n_views: int, tokens_per_view: int) -> list[tuple[str, tuple]]:
    """Tensor shapes along the pipeline, computed without allocating weights.

    Used for configurations too large to run, such as :data:`FULL_CONFIG`.
    """
    d, e = config.latent_dim, config.latent_extent
    c1, c2 = config.decoder_channels
    n = e**3
    kv = (n_views * tokens_per_view, d)
    out = [("embedding", (n, d))]
    for r, b in schedule(config):
        q = (n, d)
        heads = (config.n_heads, n, kv[0])
        out.append((f"block r{r} s{b} cross logits", heads))
        out.append((f"block r{r} s{b} cross out", q))
        out.append((f"block r{r} s{b} self logits", (config.n_heads, n, n)))
        out.append((f"block r{r} s{b} out", q))
    out.append(("decoder up1", (2 * e,) * 3 + (c1,)))
    out.append(("decoder up2", (4 * e,) * 3 + (c2,)))
    out.append(("sdf", (4 * e,) * 3))
    return out
