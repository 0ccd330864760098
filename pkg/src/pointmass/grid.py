"""Lattice grids and point-mass densities.

A lattice grid is an affine lattice in ``n`` dimensions: a center vector
``c`` and a nonsingular basis matrix ``B`` whose i-th column is the step
vector along lattice axis i.  The point with multi-index
``d = (d_1, ..., d_n)``, ``d_i in {0, ..., N_i - 1}``, sits at

    x(d) = c + B @ (d - d_mid),      d_mid_i = (N_i - 1) / 2

so grids with odd per-axis counts have a point exactly at the center.

A point-mass density attaches one nonnegative weight (a density value,
units 1/volume) to every grid point; the represented PDF is piecewise
constant on the cells of the lattice.  The mass of a cell is
``weight * cell_volume`` with ``cell_volume = |det B|``.

Linearization order is row major over the multi-index (axis 1 slowest,
axis n fastest), so the reshape between the linear weight vector and the
``N_1 x ... x N_n`` physical tensor is a pure reinterpretation of the
same buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, IO, Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "LatticeGrid",
    "PointMassDensity",
    "reshape_physical",
    "reshape_linear",
    "save_pmd",
    "load_pmd",
]

#: Unit-mass check tolerance used by :meth:`PointMassDensity.normalized`.
MASS_TOL = 1e-12


def reshape_physical(values: NDArray, counts: Sequence[int]) -> NDArray:
    """Reshape a linear vector of length ``prod(counts)`` to the physical tensor.

    Bijective with :func:`reshape_linear`; no data is copied.
    """
    values = np.asarray(values)
    counts = tuple(int(n) for n in counts)
    n_total = math.prod(counts)
    if values.ndim != 1 or values.shape[0] != n_total:
        raise ValueError(
            f"expected a vector of length {n_total} for counts {counts}, "
            f"got shape {values.shape}"
        )
    return values.reshape(counts)


def reshape_linear(tensor: NDArray) -> NDArray:
    """Inverse of :func:`reshape_physical`: flatten a physical tensor."""
    return np.asarray(tensor).reshape(-1)


def _as_readonly(a: NDArray) -> NDArray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class LatticeGrid:
    """Affine lattice of ``prod(counts)`` points: center plus basis matrix.

    Parameters
    ----------
    counts:
        Points per dimension, all >= 1.
    basis:
        ``(n, n)`` nonsingular matrix; column i is the step along axis i.
    center:
        ``(n,)`` center of the lattice.
    """

    counts: tuple[int, ...]
    basis: NDArray[np.float64]
    center: NDArray[np.float64]

    def __post_init__(self) -> None:
        counts = tuple(int(n) for n in self.counts)
        if not counts or any(n < 1 for n in counts):
            raise ValueError(f"counts must be positive integers, got {counts}")
        n = len(counts)
        basis = _as_readonly(self.basis)
        center = _as_readonly(self.center)
        if basis.shape != (n, n):
            raise ValueError(f"basis must be ({n}, {n}), got {basis.shape}")
        if center.shape != (n,):
            raise ValueError(f"center must be ({n},), got {center.shape}")
        if not (np.isfinite(basis).all() and np.isfinite(center).all()):
            raise ValueError("basis and center must be finite")
        if abs(np.linalg.det(basis)) == 0.0:
            raise ValueError("basis matrix is singular")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "center", center)

    @classmethod
    def axis_aligned(
        cls,
        counts: Sequence[int],
        steps: Sequence[float],
        center: Sequence[float],
    ) -> LatticeGrid:
        """Grid with a diagonal basis built from per-axis step lengths."""
        steps = np.asarray(steps, dtype=float)
        return cls(tuple(counts), np.diag(steps), np.asarray(center, dtype=float))

    @classmethod
    def spanning(
        cls,
        counts: Sequence[int],
        center: Sequence[float],
        half_widths: Sequence[float],
    ) -> LatticeGrid:
        """Axis-aligned grid covering ``center +- half_widths`` per axis."""
        counts = tuple(int(n) for n in counts)
        if any(n < 2 for n in counts):
            raise ValueError("spanning grids need at least 2 points per axis")
        half = np.asarray(half_widths, dtype=float)
        steps = 2.0 * half / (np.asarray(counts) - 1)
        return cls.axis_aligned(counts, steps, center)

    # -- geometry -----------------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def size(self) -> int:
        """Total number of grid points."""
        return math.prod(self.counts)

    @cached_property
    def cell_volume(self) -> float:
        """Volume of one lattice cell, ``|det basis|``."""
        return float(abs(np.linalg.det(self.basis)))

    @cached_property
    def step_lengths(self) -> NDArray[np.float64]:
        """Euclidean length of each basis column (read-only)."""
        return _as_readonly(np.linalg.norm(self.basis, axis=0))

    @cached_property
    def mid(self) -> NDArray[np.float64]:
        """Center multi-index ``(N_i - 1) / 2`` per axis (fractional if even)."""
        return _as_readonly((np.asarray(self.counts) - 1) / 2.0)

    @property
    def all_counts_odd(self) -> bool:
        return all(n % 2 == 1 for n in self.counts)

    @cached_property
    def axis_offsets(self) -> tuple[NDArray[np.float64], ...]:
        """Per-axis index offsets ``arange(N_i) - mid_i`` (read-only)."""
        return tuple(
            _as_readonly(np.arange(n) - m) for n, m in zip(self.counts, self.mid)
        )

    @cached_property
    def _offsets(self) -> NDArray[np.float64]:
        mesh = np.meshgrid(*self.axis_offsets, indexing="ij")
        return _as_readonly(np.stack([m.reshape(-1) for m in mesh], axis=-1))

    @cached_property
    def points(self) -> NDArray[np.float64]:
        """All grid points as an ``(N, n)`` read-only array in linear order."""
        return _as_readonly(self.center + self._offsets @ self.basis.T)

    def point(self, linear_index: int) -> NDArray[np.float64]:
        """Coordinates of the grid point at ``linear_index``."""
        if not 0 <= linear_index < self.size:
            raise IndexError(
                f"linear index {linear_index} out of range [0, {self.size})"
            )
        return self.center + self.basis @ self._offsets[linear_index]

    @property
    def center_index(self) -> int:
        """Linear index of the center point; requires all counts odd."""
        if not self.all_counts_odd:
            raise ValueError("center index requires odd counts on every axis")
        return (self.size - 1) // 2

    def linear_index(self, multi_index: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(multi_index), self.counts))

    def multi_index(self, linear_index: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(linear_index, self.counts))

    def lattice_coordinates(self, x: Sequence[float]) -> NDArray[np.float64]:
        """Map a state-space point to fractional multi-index coordinates."""
        x = np.asarray(x, dtype=float)
        return np.linalg.solve(self.basis, x - self.center) + self.mid

    # -- derived grids ------------------------------------------------------

    def inflated(self, noise_cov: NDArray, coverage: float = 3.0) -> LatticeGrid:
        """Symmetrically add points so the half-span grows by ``coverage``
        noise standard deviations per axis, measured in lattice steps.

        Spacing and center are unchanged and counts stay odd, so the result
        is a strict superset of this grid.  ``noise_cov`` is mapped into
        lattice coordinates through the basis before reading off the
        per-axis standard deviations.
        """
        if not self.all_counts_odd:
            raise ValueError("grid inflation requires odd counts on every axis")
        if coverage <= 0:
            raise ValueError(f"coverage must be positive, got {coverage}")
        cov = np.asarray(noise_cov, dtype=float)
        if cov.shape != (self.dim, self.dim):
            raise ValueError(f"noise covariance must be {(self.dim, self.dim)}")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh((cov + cov.T) / 2).min() < -1e-10:
            raise ValueError("noise covariance must be positive semidefinite")
        inv_basis = np.linalg.inv(self.basis)
        lattice_cov = inv_basis @ cov @ inv_basis.T
        sigmas = np.sqrt(np.clip(np.diag(lattice_cov), 0.0, None))
        extra = [math.ceil(coverage * s) for s in sigmas]
        new_counts = tuple(n + 2 * e for n, e in zip(self.counts, extra))
        return LatticeGrid(new_counts, self.basis, self.center)

    # -- equality -----------------------------------------------------------

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LatticeGrid):
            return NotImplemented
        return (
            self.counts == other.counts
            and np.array_equal(self.basis, other.basis)
            and np.array_equal(self.center, other.center)
        )


@dataclass(frozen=True, eq=False)
class PointMassDensity:
    """A lattice grid plus one nonnegative density weight per point."""

    grid: LatticeGrid
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        weights = _as_readonly(self.weights)
        if weights.shape != (self.grid.size,):
            raise ValueError(
                f"weights must have shape ({self.grid.size},), got {weights.shape}"
            )
        if not np.isfinite(weights).all():
            raise ValueError("weights must be finite")
        if (weights < 0).any():
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_density(
        cls,
        density: Callable[[NDArray], NDArray],
        grid: LatticeGrid,
        *,
        normalized: bool = True,
    ) -> PointMassDensity:
        """Sample an evaluable density on every grid point.

        ``density`` receives an ``(N, n)`` array of points and must return
        the ``(N,)`` nonnegative finite density values.
        """
        values = np.asarray(density(grid.points), dtype=float).reshape(-1)
        if values.shape != (grid.size,):
            raise ValueError(
                f"density returned shape {values.shape}, expected ({grid.size},)"
            )
        if not np.isfinite(values).all():
            raise ValueError("density returned non-finite values on the grid")
        if (values < 0).any():
            raise ValueError("density returned negative values on the grid")
        pmd = cls(grid, values)
        return pmd.normalized() if normalized else pmd

    @property
    def mass(self) -> float:
        """Total probability mass, ``cell_volume * sum(weights)``."""
        return float(self.grid.cell_volume * self.weights.sum())

    @property
    def physical(self) -> NDArray[np.float64]:
        """Weights reshaped to the ``N_1 x ... x N_n`` physical tensor."""
        return reshape_physical(self.weights, self.grid.counts)

    def normalized(self) -> PointMassDensity:
        """Rescale so the total mass is one; idempotent."""
        mass = self.mass
        if mass <= 0.0:
            raise ValueError("cannot normalize a density with zero total mass")
        if abs(mass - 1.0) <= MASS_TOL:
            return self
        return PointMassDensity(self.grid, self.weights / mass)

    def moments(self) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Midpoint-rule mean and covariance of the piecewise-constant PDF."""
        pts = self.grid.points
        masses = self.grid.cell_volume * self.weights
        mean = masses @ pts
        centered = pts - mean
        cov = (centered * masses[:, None]).T @ centered
        cov = (cov + cov.T) / 2.0
        return mean, cov

    def density_at(self, x: Sequence[float]) -> float:
        """Piecewise-constant evaluation: the weight of the cell containing ``x``.

        Cells are half open in lattice coordinates (lower boundary
        inclusive); points outside the grid hull evaluate to zero.
        """
        u = self.grid.lattice_coordinates(x)
        d = np.floor(u + 0.5).astype(int)
        if ((d < 0) | (d >= np.asarray(self.grid.counts))).any():
            return 0.0
        return float(self.weights[self.grid.linear_index(d)])

    def resampled_onto(
        self, target: LatticeGrid, *, normalized: bool = True
    ) -> PointMassDensity:
        """Multilinear interpolation of the weights at the target grid points.

        Targets outside the source hull get weight zero.  Target
        coordinates within 1e-9 of a source node are snapped to it, so
        resampling onto the same grid reproduces the weights exactly.
        """
        if target.dim != self.grid.dim:
            raise ValueError("target grid dimension mismatch")
        coords = np.linalg.solve(
            self.grid.basis, (target.points - self.grid.center).T
        ).T + self.grid.mid
        near = np.rint(coords)
        snap = np.abs(coords - near) < 1e-9
        coords = np.where(snap, near, coords)

        counts = np.asarray(self.grid.counts)
        inside = ((coords >= 0.0) & (coords <= counts - 1)).all(axis=1)
        base = np.floor(coords).astype(int)
        # keep the upper hull boundary in the last interior cell
        base = np.minimum(base, np.maximum(counts - 2, 0))
        frac = coords - base

        tensor = self.physical
        values = np.zeros(target.size)
        for corner in np.ndindex(*(2,) * self.grid.dim):
            idx = base + np.asarray(corner)
            valid = ((idx >= 0) & (idx < counts)).all(axis=1)
            factor = np.where(
                np.asarray(corner, dtype=bool), frac, 1.0 - frac
            ).prod(axis=1)
            contrib = np.zeros(target.size)
            sel = valid & inside
            if sel.any():
                contrib[sel] = tensor[tuple(idx[sel].T)]
            values += factor * contrib
        pmd = PointMassDensity(target, np.clip(values, 0.0, None))
        return pmd.normalized() if normalized else pmd


# -- dump format --------------------------------------------------------------


def save_pmd(pmd: PointMassDensity, path_or_file: str | IO[str]) -> None:
    """Write a point-mass density in the ASCII dump format.

    Header lines ``nx``, ``counts``, ``basis`` (row major), ``center``,
    then ``weights`` followed by the N weights in linear order.  Floats
    are written with 17 significant digits so the round trip is exact.
    """
    close = False
    if isinstance(path_or_file, str):
        fh = open(path_or_file, "w", encoding="ascii")
        close = True
    else:
        fh = path_or_file
    try:
        g = pmd.grid
        fh.write(f"nx {g.dim}\n")
        fh.write("counts " + " ".join(str(n) for n in g.counts) + "\n")
        fh.write("basis " + " ".join(f"{v:.17g}" for v in g.basis.reshape(-1)) + "\n")
        fh.write("center " + " ".join(f"{v:.17g}" for v in g.center) + "\n")
        fh.write("weights\n")
        for w in pmd.weights:
            fh.write(f"{w:.17g}\n")
    finally:
        if close:
            fh.close()


def load_pmd(path_or_file: str | IO[str]) -> PointMassDensity:
    """Read a point-mass density written by :func:`save_pmd`."""
    close = False
    if isinstance(path_or_file, str):
        fh = open(path_or_file, "r", encoding="ascii")
        close = True
    else:
        fh = path_or_file
    try:
        def fields(expected: str) -> list[str]:
            line = fh.readline()
            parts = line.split()
            if not parts or parts[0] != expected:
                raise ValueError(f"malformed dump: expected '{expected}' line")
            return parts[1:]

        nx = int(fields("nx")[0])
        counts = tuple(int(v) for v in fields("counts"))
        if len(counts) != nx:
            raise ValueError("malformed dump: counts length does not match nx")
        basis = np.array([float(v) for v in fields("basis")]).reshape(nx, nx)
        center = np.array([float(v) for v in fields("center")])
        if fields("weights"):
            raise ValueError("malformed dump: 'weights' line must be bare")
        weights = np.array([float(tok) for tok in fh.read().split()])
        grid = LatticeGrid(counts, basis, center)
        return PointMassDensity(grid, weights)
    finally:
        if close:
            fh.close()
