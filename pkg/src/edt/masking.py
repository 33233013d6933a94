"""Masked-token training.

Two strategies are implemented over the same network:

* down-sampling masking: random post-merge token positions inside each of
  the two down-sampling modules are replaced by that module's learnable
  placeholder embedding, before the positional-encoding supplement. Blocks
  downstream of the substitution never see the original content.
* input masking: the token grid is masked once, right after patchify,
  before the first stage. Kept as a controlled comparison baseline.

Both return a (full, masked) loss pair computed from one shared noise draw,
so the two terms differ only by the masking itself.
"""

from dataclasses import dataclass

import numpy as np

from .diffusion import forward_diffuse
from .errors import DimensionError
from .numerics import Rng, Tensor, mse, where


@dataclass(frozen=True)
class MaskSpec:
    """Per-module mask-ratio ranges plus the seed that drives sampling."""

    stage1_ratio_range: tuple = (0.4, 0.5)
    stage2_ratio_range: tuple = (0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.stage1_ratio_range, self.stage2_ratio_range):
            if not (0.0 <= lo <= hi < 1.0):
                raise ValueError(f"ratio range [{lo}, {hi}] must satisfy 0 <= lo <= hi < 1")


@dataclass(frozen=True)
class MaskGrid:
    """Boolean flags over one module's post-merge token grid; True = masked."""

    flags: np.ndarray
    grid_side: int
    ratio: float

    @property
    def masked_count(self):
        return int(self.flags.sum())


@dataclass(frozen=True)
class MaskToken:
    """The learnable placeholder shared by all masked positions of a module."""

    vector: Tensor


def sample_mask(grid_side, ratio_range, rng):
    """Draw a mask: ratio uniform in the range, positions uniform w/o replacement.

    The masked count is floor(ratio * n), nudged up to ceil(lo * n) when the
    floor would land below the configured range and an in-range count exists;
    on grids too small for any in-range count the floor stands as-is.
    """
    lo, hi = ratio_range
    n = grid_side * grid_side
    ratio = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    count = int(np.floor(ratio * n))
    lo_count = int(np.ceil(lo * n))
    hi_count = int(np.floor(hi * n))
    if lo_count <= hi_count:
        count = max(count, lo_count)
    flags = np.zeros(n, dtype=bool)
    if count > 0:
        flags[rng.choice(n, size=count, replace=False)] = True
    return MaskGrid(flags=flags, grid_side=grid_side, ratio=ratio)


def apply_mask(tokens, grid, token):
    """Replace masked positions with the placeholder embedding.

    tokens: (B, n, d); grid: MaskGrid over n positions; token: MaskToken or
    the raw (d,) embedding tensor. Unmasked positions pass through bit-exactly,
    masked positions carry the placeholder's bits regardless of prior content.
    """
    vec = token.vector if isinstance(token, MaskToken) else token
    n = tokens.shape[1]
    if grid.flags.shape != (n,):
        raise DimensionError(
            f"mask over {grid.flags.shape[0]} positions applied to {n} tokens"
        )
    if vec.shape != (tokens.shape[2],):
        raise DimensionError(
            f"mask token dim {vec.shape} does not match token dim {tokens.shape[2]}"
        )
    return where(grid.flags[None, :, None], vec, tokens)


def _prediction_loss(model, x_t, t, y, eps, **forward_kw):
    pred = model.forward(x_t, t, y, **forward_kw)
    return mse(pred, eps)


def edt_training_losses(model, sched, x0, y, t, eps, mask_spec, rng=None):
    """(L_full, L_masked) with masking inside both down-sampling modules.

    One (t, eps) draw is shared by both passes, so the masked term differs
    from the full term only through the substituted tokens. Masks come from
    `rng` when given (training advances one across steps); otherwise from a
    fresh stream seeded by mask_spec.seed, making the call deterministic.
    """
    x_t = forward_diffuse(x0, t, eps, sched)
    l_full = _prediction_loss(model, x_t, t, y, eps)
    if rng is None:
        rng = Rng(mask_spec.seed)
    side1, side2 = model.down_grid_sides
    g1 = sample_mask(side1, mask_spec.stage1_ratio_range, rng)
    g2 = sample_mask(side2, mask_spec.stage2_ratio_range, rng)
    l_masked = _prediction_loss(model, x_t, t, y, eps, mask_grids=(g1, g2))
    return l_full, l_masked


def mdt_style_losses(model, sched, x0, y, t, eps, ratio, rng=None):
    """(L_full, L_masked) with masking on the input token grid instead.

    The mask lands after patchify and before the first stage; masked
    positions take the model's dedicated input placeholder embedding.
    """
    x_t = forward_diffuse(x0, t, eps, sched)
    l_full = _prediction_loss(model, x_t, t, y, eps)
    if rng is None:
        rng = Rng(0)
    grid = sample_mask(
        model.config.grid_side, (float(ratio), float(ratio)), rng
    )
    l_masked = _prediction_loss(model, x_t, t, y, eps, input_mask=grid)
    return l_full, l_masked
