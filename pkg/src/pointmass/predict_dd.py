"""Prediction step for discrete-time linear dynamics.

Two interchangeable predictors propagate a point-mass density through
``x[k+1] = F x[k] + w[k]``:

* :func:`predict_standard` builds the full transition-probability matrix
  row by row and multiplies, costing O(N^2) density evaluations.
* :func:`predict_efficient` places the predictive grid at ``F`` times the
  current grid, which makes the transition matrix constant along index
  offsets, so only its middle row is needed and the update becomes a
  same-size FFT convolution, costing O(N log N).

Both predictors put the predictive density on the transformed grid, so
their outputs are directly comparable; the matrix path is the
correctness reference for the convolution path.  Agreement holds to
rounding when the noise density is negligible beyond half the grid span
per axis (offsets the middle row cannot encode); the inflation helper
widens grids to keep that regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .grid import LatticeGrid, PointMassDensity, reshape_linear
from .models import DiscreteDynamicsModel, GaussianDensity
from .transforms import convolve_fft_nd

__all__ = [
    "TransitionKernel",
    "transformed_grid",
    "transition_matrix",
    "middle_row_kernel",
    "predict_standard",
    "predict_efficient",
    "predict_inflated",
]

_BLOCK_BYTES = 256e6


@dataclass(frozen=True, eq=False)
class TransitionKernel:
    """Middle transition-matrix row reshaped to the physical index space.

    The tensor entry at multi-index ``d`` is the transition density from
    source point ``d`` to the center of the predictive grid, times the
    source cell volume.  With odd counts this encodes every
    offset-dependent transition value the matrix form uses.
    """

    tensor: NDArray[np.float64]
    cell_volume: float

    def __post_init__(self) -> None:
        tensor = np.asarray(self.tensor, dtype=float)
        if any(n % 2 == 0 for n in tensor.shape):
            raise ValueError(f"kernel counts must be odd, got {tensor.shape}")
        if (tensor < 0).any():
            raise ValueError("kernel entries must be nonnegative")
        object.__setattr__(self, "tensor", tensor)


def transformed_grid(grid: LatticeGrid, transition: NDArray) -> LatticeGrid:
    """Predictive grid: every point mapped through the transition matrix.

    Center and basis are premultiplied by ``F``; counts are unchanged, so
    the cell volume scales by ``|det F|``.
    """
    f = np.asarray(transition, dtype=float)
    if abs(np.linalg.det(f)) == 0.0:
        raise ValueError("transition matrix must be nonsingular")
    return LatticeGrid(grid.counts, f @ grid.basis, f @ grid.center)


def _target_rows(
    model: DiscreteDynamicsModel, grid_from: LatticeGrid, targets: NDArray
) -> NDArray:
    """Transition values from every source point to each target point."""
    mapped = grid_from.points @ model.F.T
    diff = targets[..., None, :] - mapped
    return model.noise(diff) * grid_from.cell_volume


def transition_matrix(
    model: DiscreteDynamicsModel,
    grid_from: LatticeGrid,
    grid_to: LatticeGrid,
) -> NDArray[np.float64]:
    """Dense transition-probability matrix between two grids.

    Entry ``(j, i)`` is the noise density at ``x_to[j] - F x_from[i]``
    times the source cell volume.  Intended for moderate sizes; the
    standard predictor streams the same rows without materializing them.
    """
    if grid_from.dim != grid_to.dim or grid_from.dim != model.dim:
        raise ValueError("model and grids must share the state dimension")
    return _target_rows(model, grid_from, grid_to.points)


def _middle_row_kernel(
    model: DiscreteDynamicsModel, grid: LatticeGrid, new_grid: LatticeGrid
) -> TransitionKernel:
    if not grid.all_counts_odd:
        raise ValueError(
            f"the convolution kernel requires odd counts, got {grid.counts}"
        )
    # The predictive center point is its grid center plus a zero offset;
    # adding 0.0 reproduces the same floats new_grid.points stores there.
    target = new_grid.center + 0.0
    row = _target_rows(model, grid, target)
    return TransitionKernel(row.reshape(grid.counts), grid.cell_volume)


def middle_row_kernel(
    model: DiscreteDynamicsModel, grid: LatticeGrid
) -> TransitionKernel:
    """Transition kernel from the middle row of the implied matrix.

    Computed exactly as :func:`transition_matrix` computes the row for
    the predictive center point, then reshaped to the physical tensor,
    so the two agree bit for bit.
    """
    return _middle_row_kernel(model, grid, transformed_grid(grid, model.F))


def _finish(
    grid: LatticeGrid, weights: NDArray, normalized: bool
) -> PointMassDensity:
    pmd = PointMassDensity(grid, weights)
    return pmd.normalized() if normalized else pmd


def predict_standard(
    pmd: PointMassDensity,
    model: DiscreteDynamicsModel,
    *,
    normalized: bool = True,
) -> PointMassDensity:
    """Full matrix-form prediction onto the transformed grid.

    Streams row blocks of the transition matrix against the weight
    vector, so memory stays bounded for large grids.  Gaussian noise
    takes a whitened inner-product path; any other density is evaluated
    blockwise through its callable.
    """
    grid = pmd.grid
    if grid.dim != model.dim:
        raise ValueError("model and density must share the state dimension")
    new_grid = transformed_grid(grid, model.F)
    targets = new_grid.points
    weights = pmd.weights
    n = grid.size

    noise = model.noise
    if isinstance(noise, GaussianDensity):
        scale = math.exp(noise.log_norm) * grid.cell_volume
        w_t = noise.whitener.T
        y_from = (grid.points @ model.F.T) @ w_t
        beta = (y_from * y_from).sum(axis=1)
        block = max(1, int(_BLOCK_BYTES / (16 * n)))
        out = np.empty(n)
        for lo in range(0, n, block):
            t = targets[lo : lo + block] - noise.mean
            y_to = t @ w_t
            alpha = (y_to * y_to).sum(axis=1)
            g = y_to @ y_from.T
            g *= -2.0
            g += alpha[:, None]
            g += beta
            g *= -0.5
            np.exp(g, out=g)
            out[lo : lo + block] = g @ weights
        out *= scale
    else:
        block = max(1, int(_BLOCK_BYTES / (24 * n * grid.dim)))
        out = np.empty(n)
        for lo in range(0, n, block):
            rows = _target_rows(model, grid, targets[lo : lo + block])
            out[lo : lo + block] = rows @ weights
    return _finish(new_grid, out, normalized)


def predict_efficient(
    pmd: PointMassDensity,
    model: DiscreteDynamicsModel,
    *,
    normalized: bool = True,
) -> PointMassDensity:
    """Middle-row FFT-convolution prediction onto the transformed grid.

    Requires odd counts on every axis.  Tiny negative values from FFT
    rounding are clipped to zero before normalization.
    """
    new_grid = transformed_grid(pmd.grid, model.F)
    kernel = _middle_row_kernel(model, pmd.grid, new_grid)
    conv = convolve_fft_nd(kernel.tensor, pmd.physical)
    weights = np.clip(reshape_linear(conv), 0.0, None)
    return _finish(new_grid, weights, normalized)


def predict_inflated(
    pmd: PointMassDensity,
    model: DiscreteDynamicsModel,
    *,
    coverage: float = 3.0,
    normalized: bool = True,
) -> PointMassDensity:
    """Efficient prediction after noise-driven grid enlargement.

    The source grid is inflated so that, after transformation, the
    predictive hull also covers ``coverage`` standard deviations of the
    state noise per axis; the weights are interpolated onto the enlarged
    grid first.  Requires a noise density that exposes its covariance.
    """
    cov = model.noise_covariance
    if cov is None:
        raise ValueError(
            "noise-driven inflation needs a noise density with a "
            "'covariance' attribute"
        )
    f_inv = np.linalg.inv(model.F)
    source_cov = f_inv @ cov @ f_inv.T
    bigger = pmd.grid.inflated(source_cov, coverage)
    if bigger.counts != pmd.grid.counts:
        pmd = pmd.resampled_onto(bigger)
    return predict_efficient(pmd, model, normalized=normalized)
