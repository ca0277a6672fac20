"""The hybrid segmentation architecture.

A residual CNN encoder produces feature maps at l+1 resolutions. Each map is
turned into a fixed-count token sequence: the deepest level is flattened
spatially and given a learnable positional embedding (the bridge); shallower
levels pass through a per-position channel-reducing linear (DSL) and a patch
flatten so that every level contributes exactly P_l tokens. The decoder runs
n pre-norm Transformer blocks per level, projecting token width between
levels and adding the matching skip tokens on entry. A final unflatten plus
1x1 convolution yields per-class logits.

Token dimensions per level i (depth l, base width C, reduction m):
    d_l = 2^l * C                      (bridge)
    d_i = (C / m) * 2^(2l - i)          (skip levels, DSL on)
    d_i = 2^i * C * 2^(2(l-i))          (skip levels, DSL off)
Head count is d_i / d_h with d_h fixed to C, so per-head width is constant
across levels. Attention logits are scaled by 1/sqrt(d_i), the full token
size; set scale_by_head_dim for the per-head convention instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .nn import BatchNorm2d, Conv2d, Dropout, Linear, LayerNorm, Module, ModuleList, Parameter
from .rng import RngState
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "LevelDims",
    "derive_dims",
    "SegModel",
    "ResConv",
    "MultiHeadAttention",
    "FeedForward",
    "TransBlock",
    "sdpa",
    "patch_flatten",
    "patch_unflatten",
    "count_params",
    "ParamCount",
]


@dataclass
class ModelConfig:
    width: int = 224
    height: int = 224
    in_channels: int = 3
    classes: int = 2
    levels: int = 3               # l: pooling stages; l+1 resolutions in play
    blocks: int = 3               # n: Transformer blocks per decoder level
    base_channels: int = 64       # C_base
    downsample: int = 8           # m: DSL channel reduction factor
    ffn_factor: int = 2           # f: fixed interior widening of the FFN
    head_dim: Optional[int] = None  # d_h; defaults to base_channels
    dropout: float = 0.1
    alpha: float = 0.5            # cross-entropy weight in the combined loss
    beta: float = 0.5             # soft-Dice weight in the combined loss
    use_skip_connections: bool = True
    use_dsl: bool = True
    scale_by_head_dim: bool = False
    skip_kernel: int = 3          # kernel of the residual shortcut convolution

    def resolved_head_dim(self) -> int:
        return self.head_dim if self.head_dim is not None else self.base_channels


@dataclass
class LevelDims:
    """Fully derived per-level dimension table (index 0 = full resolution)."""

    levels: int
    tokens: int                      # P_l, identical at every decoder level
    spatial: list[tuple[int, int]]   # (W_i, H_i)
    enc_channels: list[int]          # c_i = 2^i * C_base
    dsl_channels: list[Optional[int]]  # c_i / m for i < l when DSL is on
    patch_side: list[int]            # s_i = 2^(l-i)
    token_dim: list[int]             # d_i
    heads: list[int]                 # h_i = d_i / d_h
    head_channels: int               # channels entering the 1x1 prediction conv


def derive_dims(config: ModelConfig) -> LevelDims:
    """Derive the dimension table; raises naming the first violated constraint."""
    c = config
    l = c.levels
    d_h = c.resolved_head_dim()
    div = 2**l
    if c.width % div or c.height % div:
        raise ConfigurationError(
            f"input {c.width}x{c.height} must be divisible by 2^levels = {div}"
        )
    if c.classes < 2:
        raise ConfigurationError(f"classes must be >= 2, got {c.classes}")
    tokens = (c.width // div) * (c.height // div)
    spatial, enc_channels, dsl_channels, patch_side, token_dim, heads = [], [], [], [], [], []
    for i in range(l + 1):
        w_i, h_i = c.width // 2**i, c.height // 2**i
        c_i = 2**i * c.base_channels
        s_i = 2 ** (l - i)
        if i == l:
            d_i = c_i
            dsl_i = None
        elif c.use_dsl:
            if c_i % c.downsample:
                raise ConfigurationError(
                    f"level {i}: encoder channels {c_i} not divisible by downsample factor m={c.downsample}"
                )
            dsl_i = c_i // c.downsample
            d_i = dsl_i * s_i * s_i
        else:
            dsl_i = None
            d_i = c_i * s_i * s_i
        if d_i % d_h:
            raise ConfigurationError(
                f"level {i}: token dim d_{i}={d_i} not divisible by head dim d_h={d_h}"
            )
        spatial.append((w_i, h_i))
        enc_channels.append(c_i)
        dsl_channels.append(dsl_i)
        patch_side.append(s_i)
        token_dim.append(d_i)
        heads.append(d_i // d_h)
    head_channels = token_dim[0] // (patch_side[0] ** 2)
    return LevelDims(
        levels=l,
        tokens=tokens,
        spatial=spatial,
        enc_channels=enc_channels,
        dsl_channels=dsl_channels,
        patch_side=patch_side,
        token_dim=token_dim,
        heads=heads,
        head_channels=head_channels,
    )


# ---------------------------------------------------------------------------
# token <-> map reshaping


def patch_flatten(x: Tensor, patch_side: int) -> Tensor:
    """(N, c, H, W) -> (N, P, c*s*s) tokens over an (H/s) x (W/s) patch grid.

    Tokens are ordered row-major over the grid; within a token, values are
    ordered (patch row, patch column, channel).
    """
    n, c, h, w = x.shape
    s = patch_side
    if h % s or w % s:
        raise ConfigurationError(f"patch_flatten: spatial {h}x{w} not divisible by patch side {s}")
    gh, gw = h // s, w // s
    t = T.reshape(x, (n, c, gh, s, gw, s))
    t = T.transpose(t, (0, 2, 4, 3, 5, 1))  # (n, gh, gw, s, s, c)
    return T.reshape(t, (n, gh * gw, s * s * c))


def patch_unflatten(tokens: Tensor, patch_side: int, height: int, width: int) -> Tensor:
    """Exact inverse of patch_flatten: (N, P, c*s*s) -> (N, c, H, W)."""
    n, p, d = tokens.shape
    s = patch_side
    gh, gw = height // s, width // s
    if gh * gw != p or d % (s * s):
        raise ConfigurationError(
            f"patch_unflatten: tokens {tokens.shape} do not tile {height}x{width} with patch side {s}"
        )
    c = d // (s * s)
    t = T.reshape(tokens, (n, gh, gw, s, s, c))
    t = T.transpose(t, (0, 5, 1, 3, 2, 4))  # (n, c, gh, s, gw, s)
    return T.reshape(t, (n, c, height, width))


# ---------------------------------------------------------------------------
# blocks


class ResConv(Module):
    """Two conv3x3/BN/ReLU stages plus a convolutional shortcut."""

    def __init__(self, c_in: int, c_out: int, skip_kernel: int, rng: RngState):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, 1, rng)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, 1, rng)
        self.bn2 = BatchNorm2d(c_out)
        self.skip_conv = Conv2d(c_in, c_out, skip_kernel, (skip_kernel - 1) // 2, rng)
        self.skip_bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        main = T.relu(self.bn1(self.conv1(x)))
        main = T.relu(self.bn2(self.conv2(main)))
        return main + self.skip_bn(self.skip_conv(x))


class Encoder(Module):
    """ResConv per level with 2x2 max pooling between levels."""

    def __init__(self, config: ModelConfig, dims: LevelDims, rng: RngState):
        super().__init__()
        blocks = []
        c_prev = config.in_channels
        for i in range(config.levels + 1):
            blocks.append(ResConv(c_prev, dims.enc_channels[i], config.skip_kernel, rng))
            c_prev = dims.enc_channels[i]
        self.levels = ModuleList(blocks)

    def forward(self, x: Tensor) -> list[Tensor]:
        outs = [self.levels[0](x)]
        for block in list(self.levels)[1:]:
            outs.append(block(T.max_pool2(outs[-1])))
        return outs


def sdpa(q: Tensor, k: Tensor, v: Tensor, scale_dim: int) -> Tensor:
    """softmax(Q K^T / sqrt(scale_dim)) V over the last two dims."""
    scores = T.matmul(q, T.transpose(k, tuple(range(q.ndim - 2)) + (q.ndim - 1, q.ndim - 2)))
    weights = T.softmax_lastdim(scores * (1.0 / float(np.sqrt(scale_dim))))
    return T.matmul(weights, v)


class MultiHeadAttention(Module):
    """Self-attention: project to Q/K/V, run sdpa per head, concat, project."""

    def __init__(self, d: int, d_h: int, scale_by_head_dim: bool, rng: RngState):
        super().__init__()
        if d % d_h:
            raise ConfigurationError(f"token dim {d} not divisible by head dim {d_h}")
        self.d = d
        self.d_h = d_h
        self.heads = d // d_h
        self.scale_dim = d_h if scale_by_head_dim else d
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)

    def _split(self, x: Tensor, n: int, p: int) -> Tensor:
        t = T.reshape(x, (n, p, self.heads, self.d_h))
        return T.transpose(t, (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        n, p, _ = x.shape
        q = self._split(self.wq(x), n, p)
        k = self._split(self.wk(x), n, p)
        v = self._split(self.wv(x), n, p)
        heads_out = sdpa(q, k, v, self.scale_dim)
        merged = T.reshape(T.transpose(heads_out, (0, 2, 1, 3)), (n, p, self.d))
        return self.wo(merged)


class FeedForward(Module):
    """Position-wise d -> f*d -> d with ReLU and interior dropout."""

    def __init__(self, d: int, factor: int, p_drop: float, rng: RngState):
        super().__init__()
        self.lin1 = Linear(d, factor * d, rng)
        self.drop = Dropout(p_drop, rng)
        self.lin2 = Linear(factor * d, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.lin2(self.drop(T.relu(self.lin1(x))))


class TransBlock(Module):
    """Pre-norm residual block: x + Drop(MHA(Norm x)); then + Drop(FFN(Norm .))."""

    def __init__(self, d: int, d_h: int, factor: int, p_drop: float, scale_by_head_dim: bool, rng: RngState):
        super().__init__()
        self.norm1 = LayerNorm(d)
        self.mha = MultiHeadAttention(d, d_h, scale_by_head_dim, rng)
        self.drop1 = Dropout(p_drop, rng)
        self.norm2 = LayerNorm(d)
        self.ffn = FeedForward(d, factor, p_drop, rng)
        self.drop2 = Dropout(p_drop, rng)

    def forward(self, x: Tensor) -> Tensor:
        x1 = x + self.drop1(self.mha(self.norm1(x)))
        return x1 + self.drop2(self.ffn(self.norm2(x1)))


class SegModel(Module):
    """Complete model: encoder, skip transforms, bridge, decoder, head."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        self.config = config
        self.dims = derive_dims(config)
        init_rng = RngState(seed).spawn("init")
        self.dropout_rng = RngState(seed).spawn("dropout")
        dims = self.dims
        l = config.levels

        self.encoder = Encoder(config, dims, init_rng)
        if config.use_skip_connections and config.use_dsl:
            self.dsl = ModuleList(
                [Linear(dims.enc_channels[i], dims.dsl_channels[i], init_rng) for i in range(l)]
            )
        else:
            self.dsl = ModuleList([])
        self.pos = Parameter(
            RngState(seed).spawn("pos").normal((dims.tokens, dims.token_dim[l]), 0.0, 0.02, dtype=np.float32)
        )
        level_blocks = []
        for i in range(l + 1):
            level_blocks.append(
                ModuleList(
                    [
                        TransBlock(
                            dims.token_dim[i],
                            config.resolved_head_dim(),
                            config.ffn_factor,
                            config.dropout,
                            config.scale_by_head_dim,
                            init_rng,
                        )
                        for _ in range(config.blocks)
                    ]
                )
            )
        self.blocks = ModuleList(level_blocks)
        # projections indexed by source level: projections[i] maps d_i -> d_{i-1}
        self.projections = ModuleList(
            [Linear(dims.token_dim[i], dims.token_dim[i - 1], init_rng) for i in range(l, 0, -1)]
        )
        self.head = Conv2d(dims.head_channels, config.classes, 1, 0, init_rng)
        self._wire_dropout()

    def _wire_dropout(self) -> None:
        # dropout layers share one stream so training draws are reproducible
        for mod in self._iter_modules():
            if isinstance(mod, Dropout):
                mod.rng = self.dropout_rng

    def _projection(self, source_level: int) -> Linear:
        return self.projections[self.config.levels - source_level]

    # -- architecture stages ------------------------------------------------

    def skip_tokens(self, enc_out: Tensor, level: int) -> Tensor:
        """DSL (when enabled) then patch flatten; (N, c_i, H_i, W_i) -> (N, P, d_i)."""
        x = enc_out
        if self.config.use_dsl and len(self.dsl):
            t = T.transpose(x, (0, 2, 3, 1))  # linear acts on the channel vector per position
            t = self.dsl[level](t)
            x = T.transpose(t, (0, 3, 1, 2))
        return patch_flatten(x, self.dims.patch_side[level])

    def bridge(self, enc_out: Tensor) -> Tensor:
        """Spatial flatten of the deepest map plus the positional embedding."""
        tokens = patch_flatten(enc_out, 1)
        return tokens + self.pos

    def decode(self, bridge_tokens: Tensor, skips: Optional[list[Tensor]]) -> Tensor:
        l = self.config.levels
        p_l = self.dims.tokens
        x = bridge_tokens
        for i in range(l, -1, -1):
            if i < l:
                x = self._projection(i + 1)(x)
                if skips is not None:
                    x = x + skips[i]
            assert x.shape[1] == p_l, f"token count {x.shape[1]} != P_l {p_l} at level {i}"
            for block in self.blocks[i]:
                x = block(x)
        return x

    def head_logits(self, decoder_tokens: Tensor) -> Tensor:
        maps = patch_unflatten(
            decoder_tokens, self.dims.patch_side[0], self.config.height, self.config.width
        )
        return self.head(maps)

    def forward(self, x: Tensor) -> Tensor:
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.height or x.shape[3] != cfg.width:
            raise ConfigurationError(
                f"input shape {x.shape} does not match configured (N, {cfg.in_channels}, {cfg.height}, {cfg.width})"
            )
        enc = self.encoder(x)
        skips = None
        if cfg.use_skip_connections:
            skips = [self.skip_tokens(enc[i], i) for i in range(cfg.levels)]
        tokens = self.decode(self.bridge(enc[cfg.levels]), skips)
        return self.head_logits(tokens)


# ---------------------------------------------------------------------------
# closed-form parameter accounting


@dataclass
class ParamCount:
    rows: list[tuple[str, int]] = field(default_factory=list)

    def add(self, name: str, count: int) -> None:
        self.rows.append((name, count))

    def group_totals(self) -> dict[str, int]:
        totals: dict[str, int] = {}
        for name, count in self.rows:
            group = name.split(".", 1)[0]
            totals[group] = totals.get(group, 0) + count
        return totals

    @property
    def total(self) -> int:
        return sum(c for _, c in self.rows)


def _conv_params(c_in: int, c_out: int, k: int) -> int:
    return c_out * c_in * k * k + c_out


def _linear_params(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def count_params(config: ModelConfig) -> ParamCount:
    """Closed-form learnable parameter count; matches the instantiated model exactly."""
    dims = derive_dims(config)
    l = config.levels
    k_skip = config.skip_kernel
    out = ParamCount()

    c_prev = config.in_channels
    for i in range(l + 1):
        c_i = dims.enc_channels[i]
        level = (
            _conv_params(c_prev, c_i, 3) + 2 * c_i      # conv1 + bn1
            + _conv_params(c_i, c_i, 3) + 2 * c_i       # conv2 + bn2
            + _conv_params(c_prev, c_i, k_skip) + 2 * c_i  # skip conv + bn
        )
        out.add(f"encoder.level{i}", level)
        c_prev = c_i

    if config.use_skip_connections and config.use_dsl:
        for i in range(l):
            out.add(f"dsl.level{i}", _linear_params(dims.enc_channels[i], dims.dsl_channels[i]))

    out.add("pos_embedding", dims.tokens * dims.token_dim[l])

    for i in range(l + 1):
        d = dims.token_dim[i]
        per_block = (
            2 * (2 * d)                       # two layer norms
            + 4 * _linear_params(d, d)        # Q, K, V, output projections
            + _linear_params(d, config.ffn_factor * d)
            + _linear_params(config.ffn_factor * d, d)
        )
        out.add(f"transformer.level{i}", config.blocks * per_block)

    for i in range(l, 0, -1):
        out.add(
            f"projection.level{i}to{i - 1}",
            _linear_params(dims.token_dim[i], dims.token_dim[i - 1]),
        )

    out.add("head", _linear_params(dims.head_channels, config.classes))
    return out
