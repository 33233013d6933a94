"""Analytical cost accounting for the transformer and its down-sampling
redesign.

Everything is exact: token counts and dims are integers, ratios are
Fractions, and the MAC convention matches the instrumented counter (one
multiply-accumulate per matmul lattice point, elementwise work free), so the
analytic whole-model total equals the counted total of one batch-1 forward
pass bit for bit.

The drop-ratio functions compare one block at (n, d) against the block that
replaces it after a down-sampling step: the conventional design doubles the
dimension (tokens /4, dim x2), the redesigned one expands the dimension by
only r in (1, 2). Bounds come with their applicability domain: the lower
bound 1 - (7/16) r is derived under j = n/d >= 1, so below that it is
reported but not asserted.
"""

from dataclasses import dataclass
from fractions import Fraction

from .errors import DimensionError


@dataclass(frozen=True)
class BlockShape:
    """Token count and width of one attention block, with j = n/d exact."""

    n: int
    d: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.d) != self.d:
            raise DimensionError("token count and dim must be integers")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        if self.n < 1 or self.d < 1:
            raise DimensionError(f"need positive block shape, got n={self.n} d={self.d}")

    @property
    def j(self):
        return Fraction(self.n, self.d)


@dataclass(frozen=True)
class DownsampleDesign:
    """Token reduction by factor^2 with dimension expansion r in (1, 2)."""

    r: Fraction
    factor: int = 2

    def __post_init__(self):
        r = self.r
        if not isinstance(r, Fraction):
            # str() keeps decimal literals exact: 1.25 -> 5/4, 1.1 -> 11/10
            r = Fraction(str(r))
        object.__setattr__(self, "r", r)
        if not (1 < r < 2):
            raise DimensionError(f"dimension expansion {r} outside (1, 2)")
        if self.factor != 2:
            raise DimensionError("only 2x spatial down-sampling is supported")


@dataclass(frozen=True)
class DropRatio:
    """Exact FLOPs drop with its closed-form bound and optional approximation.

    bound_applicable is False when the shape sits outside the domain the
    bound was derived on; holds is still computed there but is informational.
    """

    value: Fraction
    bound: Fraction
    holds: bool
    approximation: Fraction = None
    bound_applicable: bool = True


def block_flops(shape):
    """MACs of one block forward at batch 1: 2n^2 d + 12nd^2 + 6d^2."""
    n, d = shape.n, shape.d
    return 2 * n * n * d + 12 * n * d * d + 6 * d * d


def block_params(d):
    """Parameters of one block: 18d^2 (no biases, non-affine norms)."""
    if d < 1:
        raise DimensionError(f"need positive dim, got {d}")
    return 18 * d * d


def conventional_after_flops(shape):
    """Block cost after a conventional down-sampling step (tokens/4, dim x2).

    Algebraically n^2 d/4 + 12nd^2 + 24d^2, which is block_flops(n/4, 2d).
    """
    if shape.n % 4 != 0:
        raise DimensionError(f"token count {shape.n} not divisible by 4")
    return block_flops(BlockShape(shape.n // 4, 2 * shape.d))


def conventional_drop_ratio(shape):
    """Exact rho = (F - F')/F and its upper bound 7j/(8j + 48)."""
    f = block_flops(shape)
    f_after = conventional_after_flops(shape)
    value = Fraction(f - f_after, f)
    j = shape.j
    bound = 7 * j / (8 * j + 48)
    return DropRatio(value=value, bound=bound, holds=value < bound)


def redesigned_after_flops(shape, design):
    """Block cost after the redesigned step (tokens/4, dim x r), exact.

    r n^2 d/8 + 3n r^2 d^2 + 6 r^2 d^2 as a Fraction; equals
    block_flops(n/4, r d) whenever r d is an integer.
    """
    if shape.n % 4 != 0:
        raise DimensionError(f"token count {shape.n} not divisible by 4")
    n, d, r = shape.n, shape.d, design.r
    return r * n * n * d / 8 + 3 * n * r * r * d * d + 6 * r * r * d * d


def redesigned_drop_ratio(shape, design):
    """Exact rho, the streamlined approximation, and the bound 1 - (7/16) r.

    The approximation 1 - (rj + 24 r^2)/(16 j + 96) drops the O(1/n) terms;
    the bound's derivation needs j >= 1, reflected in bound_applicable.
    """
    f = block_flops(shape)
    f_after = redesigned_after_flops(shape, design)
    value = 1 - f_after / f
    j, r = shape.j, design.r
    approximation = 1 - (r * j + 24 * r * r) / (16 * j + 96)
    bound = 1 - Fraction(7, 16) * r
    return DropRatio(
        value=value,
        bound=bound,
        holds=value > bound,
        approximation=approximation,
        bound_applicable=j >= 1,
    )


# ---------------------------------------------------------------------------
# whole-model accounting


@dataclass(frozen=True)
class StageCost:
    """Block totals of one stage with its drop-ratio analysis (encoder
    stages that feed a down-sampling step carry one, others carry None)."""

    name: str
    tokens: int
    dim: int
    blocks: int
    flops: int
    params: int
    drop: DropRatio = None


@dataclass(frozen=True)
class ModuleCost:
    name: str
    flops: int
    params: int


@dataclass(frozen=True)
class FlopsReport:
    stages: tuple
    modules: tuple
    block_flops_total: int
    block_params_total: int
    total_flops: int
    total_params: int


CONDITION_FREQ_DIM = 256


def model_flops(config):
    """Exact batch-1 forward MACs and parameter counts, module by module.

    Matches the instrumented counter: only matmul lattice points are charged,
    at the shapes the forward pass actually runs.
    """
    p = config.patch_size
    patch_dim = p * p * config.latent_channels
    dims = config.stage_dims
    tokens = config.token_counts
    blocks = config.stage_blocks

    stages = []
    for s in range(5):
        n, d, b = tokens[s], dims[s], blocks[s]
        shape = BlockShape(n, d)
        drop = None
        if s < 2:
            r = Fraction(dims[s + 1], d)
            if 1 < r < 2:
                drop = redesigned_drop_ratio(shape, DownsampleDesign(r))
        stages.append(StageCost(
            name=f"stage{s}",
            tokens=n,
            dim=d,
            blocks=b,
            flops=b * block_flops(shape),
            params=b * block_params(d),
            drop=drop,
        ))

    distinct = sorted(set(dims))
    fd = CONDITION_FREQ_DIM
    cond_flops = sum(fd * d + d * d for d in distinct)
    cond_params = sum(
        (fd * d + d) + (d * d + d) + (config.class_count + 1) * d for d in distinct
    )

    def down(name, n_out, d_in, d_out):
        flops = 2 * d_in * d_in + n_out * 4 * d_in * d_out
        params = (2 * d_in * d_in + 2 * d_in) + (4 * d_in * d_out + d_out) + d_out
        return ModuleCost(name, flops, params)

    def up(name, n_in, d_in, d_out):
        return ModuleCost(name, n_in * d_in * 4 * d_out, d_in * 4 * d_out + 4 * d_out)

    def skip(name, n, d_enc, d_dec):
        flops = 2 * d_enc * d_enc + n * (d_enc + d_dec) * d_dec
        params = (2 * d_enc * d_enc + 2 * d_enc) + ((d_enc + d_dec) * d_dec + d_dec)
        return ModuleCost(name, flops, params)

    modules = (
        ModuleCost("patchify", tokens[0] * patch_dim * dims[0],
                   patch_dim * dims[0] + dims[0]),
        ModuleCost("conditioning", cond_flops, cond_params),
        ModuleCost("input_mask_token", 0, dims[0]),
        down("down0", tokens[1], dims[0], dims[1]),
        down("down1", tokens[2], dims[1], dims[2]),
        up("up0", tokens[2], dims[2], dims[3]),
        skip("skip0", tokens[3], dims[1], dims[3]),
        up("up1", tokens[3], dims[3], dims[4]),
        skip("skip1", tokens[4], dims[0], dims[4]),
        ModuleCost("final", 2 * dims[4] * dims[4] + tokens[0] * dims[4] * patch_dim,
                   (2 * dims[4] * dims[4] + 2 * dims[4]) + (dims[4] * patch_dim + patch_dim)),
    )

    block_f = sum(s.flops for s in stages)
    block_p = sum(s.params for s in stages)
    return FlopsReport(
        stages=tuple(stages),
        modules=modules,
        block_flops_total=block_f,
        block_params_total=block_p,
        total_flops=block_f + sum(m.flops for m in modules),
        total_params=block_p + sum(m.params for m in modules),
    )


def oracle_flops(config, seed=0):
    """Count the MACs of one real batch-1 forward pass of the configured model."""
    import numpy as np

    from .architecture import EdtModel
    from .numerics import OpCounter, Rng, counting, no_grad

    model = EdtModel(config, seed=seed)
    size = config.latent_size
    x = Rng(seed).normal((1, config.latent_channels, size, size), dtype=np.float64)
    counter = OpCounter()
    with counting(counter), no_grad():
        model.forward(x.astype(np.float32), np.array([1]), np.array([0]))
    return counter.mac_count
