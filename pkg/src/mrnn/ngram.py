"""Densely connected n-gram blocks building the multi-resolution tensor.

Each block runs CONV -> BN -> PReLU -> POOL -> scale over its upstream
input. Block 1 sees the token matrix through a window-1 projection (so
its map is a 1-gram map); block n > 1 convolves the channel-concatenation
of all previous block outputs with the configured window, which grows the
receptive field by one position per block: block n is a (2n-1)-gram map
when the window is 3 and pooling is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from mrnn import autodiff as ad
from mrnn.autodiff import Array, BatchNormState, ConfigError


@dataclass
class ModelConfig:
    """Network geometry: block count N, window ws, feature dim s."""

    n_blocks: int = 6
    window: int = 3
    feat_dim: int = 1024
    pool_width: int = 1

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and positive, got {self.window}")
        if self.feat_dim < 1:
            raise ConfigError(f"feat_dim must be >= 1, got {self.feat_dim}")
        if self.pool_width < 1 or self.pool_width % 2 == 0:
            raise ConfigError(f"pool_width must be odd and positive, got {self.pool_width}")


@dataclass
class GramBlock:
    """Learnables and normalization state for one n-gram block."""

    kernels: Array  # (s, win, c_in)
    bias: Array  # (s,)
    gamma: Array  # (s,)
    beta: Array  # (s,)
    slopes: Array  # (s,)
    scale: Array  # ()
    bn_state: BatchNormState


def block_kernel_shapes(config: ModelConfig, input_dim: int) -> List[Tuple[int, int, int]]:
    """Kernel bank shapes (c_out, win, c_in) under the dense-connectivity rule.

    Block 1 projects the input dimension with window 1; block n > 1 consumes
    the (n-1) * s concatenated upstream channels with the configured window.
    Pure shape computation, nothing is allocated.
    """
    s = config.feat_dim
    shapes = [(s, 1, input_dim)]
    for n in range(2, config.n_blocks + 1):
        shapes.append((s, config.window, (n - 1) * s))
    return shapes


def _glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_blocks(config: ModelConfig, input_dim: int, rng: np.random.Generator) -> List[GramBlock]:
    """Fan-scaled uniform kernels, zero biases, unit scales, fresh BN state.

    Kernels are the only randomized tensors and are drawn in block order,
    so parameterization is bit-reproducible under a fixed generator state.
    """
    blocks = []
    for c_out, win, c_in in block_kernel_shapes(config, input_dim):
        kernels = _glorot_uniform(rng, (c_out, win, c_in), fan_in=win * c_in, fan_out=win * c_out)
        blocks.append(
            GramBlock(
                kernels=ad.parameter(kernels),
                bias=ad.parameter(np.zeros(c_out)),
                gamma=ad.parameter(np.ones(c_out)),
                beta=ad.parameter(np.zeros(c_out)),
                slopes=ad.parameter(np.full(c_out, 0.25)),
                scale=ad.parameter(np.asarray(1.0)),
                bn_state=BatchNormState(c_out),
            )
        )
    return blocks


def _bn_mode(mode: str) -> Tuple[str, bool]:
    # score = batch statistics without touching the running averages,
    # used when ranking candidates mid-training
    if mode == "train":
        return "train", True
    if mode == "score":
        return "train", False
    if mode == "eval":
        return "eval", False
    raise ConfigError(f"mode must be train, score or eval, got {mode!r}")


def gram_block(
    ub: Array,
    block: GramBlock,
    pool_width: int = 1,
    mode: str = "train",
    mask: Optional[np.ndarray] = None,
) -> Array:
    """One block: scale(pool(prelu(bn(conv(ub))))), length preserved."""
    bn_mode, update = _bn_mode(mode)
    y = ad.conv1d_same(ub, block.kernels, block.bias)
    y = ad.batch_norm(y, block.gamma, block.beta, block.bn_state, mode=bn_mode, mask=mask, update_running=update)
    y = ad.prelu(y, block.slopes)
    y = ad.pool_same(y, pool_width)
    y = ad.scale_unit(y, block.scale)
    if mask is not None:
        # keep padded rows exactly zero so downstream convolutions see pads as zeros
        y = y * Array(np.asarray(mask, dtype=np.float64)[:, None])
    return y


def multi_resolution_maps(
    e_matrix: Array,
    blocks: Sequence[GramBlock],
    config: ModelConfig,
    mode: str = "train",
    mask: Optional[np.ndarray] = None,
) -> Array:
    """Run all blocks with dense connections; stack the maps to (N, h, s)."""
    maps: List[Array] = []
    ub = e_matrix
    for block in blocks:
        g_n = gram_block(ub, block, pool_width=config.pool_width, mode=mode, mask=mask)
        maps.append(g_n)
        ub = maps[0] if len(maps) == 1 else ad.concat_channels(*maps)
    return ad.stack_maps(maps)
