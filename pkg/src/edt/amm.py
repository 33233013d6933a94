"""Attention modulation: distance-based score reweighting at inference time.

A square token grid of side N is scored by m_ir = k * exp(cos(f * d_ir)) when
the Euclidean token distance d_ir is at most a radius R, and 0 beyond it.
The frequency is tied to the grid diagonal d_max = (N-1)*sqrt(2) through the
period T = 4*d_max (so f*d_max = pi/2 and the value falls strictly from k*e
at distance 0 to k at d_max). The matrix multiplies post-softmax attention
scores elementwise; rows are deliberately not renormalized afterwards.

Matrices are built once per (N, scale, radius) and cached; construction cost
is negligible next to inference.
"""

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError
from .numerics import Tensor
from .numerics.opcount import add_macs


@dataclass(frozen=True)
class GridGeometry:
    """Square token grid of side N; token i sits at (x, y) with i = N*x + y."""

    N: int

    def __post_init__(self):
        if self.N < 2:
            raise DimensionError("grid side must be at least 2")

    @property
    def token_count(self):
        return self.N * self.N

    def coordinates(self):
        """Arrays (x, y) of the row/column of every token index."""
        i = np.arange(self.token_count)
        return i // self.N, i % self.N


@dataclass(frozen=True)
class AmmParams:
    """Scale and radius, plus grid-derived period/frequency once bound.

    `radius=None` selects the default sqrt((N-1)^2 + 4) when binding to a
    grid. Binding fills d_max, period, and frequency; an unbound instance
    acts as a template reusable across grid sizes.
    """

    scale: float = 0.5
    radius: float | None = None
    d_max: float | None = None
    period: float | None = None
    frequency: float | None = None

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.radius is not None and self.radius <= 0:
            raise ValueError("radius must be positive")

    @property
    def bound(self):
        return self.d_max is not None

    def for_grid(self, grid):
        """Bind to a grid: derive d_max, period T = 4*d_max, f = 2*pi/T."""
        d_max = (grid.N - 1) * math.sqrt(2.0)
        period = 4.0 * d_max
        frequency = 2.0 * math.pi / period
        radius = self.radius
        if radius is None:
            radius = math.sqrt((grid.N - 1) ** 2 + 4)
        return replace(
            self,
            radius=radius,
            d_max=d_max,
            period=period,
            frequency=frequency,
        )


@dataclass(frozen=True)
class ModulationMatrix:
    """The n x n modulation entries plus the parameters that produced them."""

    entries: np.ndarray
    params: AmmParams
    grid: GridGeometry

    @property
    def token_count(self):
        return self.grid.token_count


@dataclass(frozen=True)
class PlacementSchedule:
    """On/off flags for the blocks of each up-sampling (decoder) stage only."""

    stage_flags: tuple

    def __post_init__(self):
        object.__setattr__(
            self,
            "stage_flags",
            tuple(tuple(bool(f) for f in stage) for stage in self.stage_flags),
        )


def default_schedule(decoder_block_counts):
    """Alternate on/off within each decoder stage, starting on.

    Encoder stages carry no flags at all: modulating encoder blocks loses
    quality, so the schedule simply cannot express it.
    """
    counts = list(decoder_block_counts)
    if any(c < 1 for c in counts):
        raise ValueError("each decoder stage needs at least one block")
    return PlacementSchedule(
        tuple(tuple(i % 2 == 0 for i in range(c)) for c in counts)
    )


def distance_matrix(grid):
    """Pairwise Euclidean distances between all token positions."""
    x, y = grid.coordinates()
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    return np.sqrt((dx * dx + dy * dy).astype(np.float64))


def generation_function(d, params):
    """k * exp(cos(f * d)); strictly decreasing on [0, d_max], range [k, k*e]."""
    if not params.bound:
        raise ValueError("params must be bound to a grid (use for_grid)")
    return params.scale * np.exp(np.cos(params.frequency * np.asarray(d, dtype=np.float64)))


_CACHE = {}


def build_amm(grid, params=None):
    """Construct (or fetch from cache) the modulation matrix for a grid.

    Distances and the default radius are both correctly-rounded square roots
    of exact integers, so the boundary case d == R compares equal and stays
    inside the modulated set, as intended.
    """
    if params is None:
        params = AmmParams()
    if not params.bound:
        params = params.for_grid(grid)
    key = (grid.N, params.scale, params.radius)
    cached = _CACHE.get(key)
    if cached is not None:
        return cached

    d = distance_matrix(grid)
    inside = d <= params.radius
    values = generation_function(d, params)
    # cos(f*d) is exactly +-pi/2-bounded on the grid, but the computed phase
    # can land an ulp outside; clip so the advertised [k, k*e] range is exact
    values = np.clip(values, params.scale, params.scale * math.e)
    entries = np.where(inside, values, 0.0)
    matrix = ModulationMatrix(entries=entries, params=params, grid=grid)
    _CACHE[key] = matrix
    return matrix


def modulate(scores, matrix):
    """Hadamard-multiply post-softmax scores by the modulation matrix.

    Accepts a plain array or a Tensor; the two trailing extents must equal
    the matrix size. Adds one MAC per score entry to the active counter.
    Broadcasts over any leading batch/head axes. No renormalization.
    """
    n = matrix.token_count
    data = scores.data if isinstance(scores, Tensor) else np.asarray(scores)
    if data.ndim < 2 or data.shape[-2:] != (n, n):
        raise DimensionError(
            f"score extents {data.shape} do not end in ({n}, {n})"
        )
    add_macs(data.size)
    if isinstance(scores, Tensor):
        return scores * Tensor(matrix.entries.astype(data.dtype, copy=False))
    return data * matrix.entries.astype(data.dtype, copy=False)


def export_amm(matrix, out_path):
    """Write the matrix as row-major CSV plus a JSON sidecar of parameters.

    Returns (csv_path, sidecar_path). The sidecar records N, k, T, f, R.
    """
    out_path = str(out_path)
    sidecar_path = out_path + ".json"
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix.entries:
            writer.writerow([f"{v:.17g}" for v in row])
    p = matrix.params
    with open(sidecar_path, "w") as fh:
        json.dump(
            {
                "N": matrix.grid.N,
                "k": p.scale,
                "T": p.period,
                "f": p.frequency,
                "R": p.radius,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    return out_path, sidecar_path


def load_amm_csv(path):
    """Read back a matrix written by export_amm (round-trip helper)."""
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh)]
    return np.asarray(rows, dtype=np.float64)
