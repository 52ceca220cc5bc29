"""Periodic-box spectral fields: transforms, derivatives, Poisson inversion.

All fields live on a cubic periodic box of side ``box_length`` sampled at
``n**3`` points. The transform convention is fixed once so that norm and
Parseval checks are bit-stable across the code base:

    forward   F[k] = sum_x f(x) exp(-i k.x)        (numpy fftn, unnormalized)
    inverse   f(x) = n**-3 sum_k F[k] exp(+i k.x)

A constant field c therefore has F[0,0,0] = c * n**3, and Parseval reads

    sum_x f(x)**2 == n**-3 sum_k |F[k]|**2.

Differentiation multiplies by i*k with the Nyquist mode forced to zero
(its sign is ambiguous on an even grid). Quadratic nonlinearities are
dealiased with the 2/3 rule via ``Grid.dealias_mask``.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ConservationViolation, ContractViolation, NumericalFault

TWO_PI = 2.0 * np.pi

_AXES = (-3, -2, -1)


class Grid:
    """Cubic periodic grid with precomputed wavenumber meshes.

    Attributes
    ----------
    n : points per axis (power of two, >= 16)
    box_length : physical period of the box
    dx : grid spacing
    modes : per-axis integer mode indices in fft layout [0..n/2-1, -n/2..-1]
    k : (3, n, n, n) physical wavenumbers, 2*pi/box_length * modes
    kd : like k but with the Nyquist mode zeroed; used for differentiation
    k2 : |k|**2 mesh
    dealias_mask : boolean mesh keeping |mode| <= n//3 on every axis
    """

    def __init__(self, n: int, box_length: float = TWO_PI):
        if not isinstance(n, (int, np.integer)) or n < 16 or (n & (n - 1)) != 0:
            raise ConfigError(f"grid size must be a power of two >= 16, got {n!r}")
        if not np.isfinite(box_length) or box_length <= 0:
            raise ConfigError(f"box_length must be positive, got {box_length!r}")
        self.n = int(n)
        self.box_length = float(box_length)
        self.dx = self.box_length / self.n

        self.modes = np.fft.fftfreq(self.n, 1.0 / self.n)  # integer-valued floats
        scale = TWO_PI / self.box_length
        k1 = self.modes * scale
        kd1 = k1.copy()
        kd1[self.n // 2] = 0.0  # Nyquist: sign-ambiguous, never differentiate with it
        self.k1 = k1
        self.k = np.array(np.meshgrid(k1, k1, k1, indexing="ij"))
        self.kd = np.array(np.meshgrid(kd1, kd1, kd1, indexing="ij"))
        self.k2 = np.sum(self.k * self.k, axis=0)
        inv = self.k2.copy()
        inv[0, 0, 0] = 1.0
        self._inv_k2 = 1.0 / inv
        self._inv_k2[0, 0, 0] = 0.0

        cut = self.n // 3
        keep1 = np.abs(self.modes) <= cut
        self.dealias_mask = (
            keep1[:, None, None] & keep1[None, :, None] & keep1[None, None, :]
        )

    @property
    def npoints(self) -> int:
        return self.n**3

    def coordinates(self) -> np.ndarray:
        """(3, n, n, n) mesh of physical point coordinates in [0, box_length)."""
        x1 = np.arange(self.n) * self.dx
        return np.array(np.meshgrid(x1, x1, x1, indexing="ij"))

    def same_as(self, other: "Grid") -> bool:
        return self.n == other.n and self.box_length == other.box_length

    def __repr__(self):
        return f"Grid(n={self.n}, box_length={self.box_length:g})"


def _first_bad_index(arr: np.ndarray):
    bad = ~np.isfinite(arr)
    return tuple(int(i) for i in np.argwhere(bad)[0])


class SpectralField:
    """Scalar (1 component) or vector (3 component) field on a Grid.

    Keeps physical and Fourier representations side by side with validity
    flags; transforms are performed lazily and are idempotent. Data is
    stored with a leading component axis internally; ``phys``/``four``
    return a squeezed view for scalars.
    """

    def __init__(self, grid: Grid, ncomp: int, phys=None, four=None):
        if ncomp not in (1, 3):
            raise ContractViolation(f"fields carry 1 or 3 components, got {ncomp}")
        self.grid = grid
        self.ncomp = ncomp
        self._phys = phys
        self._four = four

    # -- construction -----------------------------------------------------

    @classmethod
    def from_physical(cls, grid: Grid, data) -> "SpectralField":
        data = np.asarray(data, dtype=np.float64)
        data, ncomp = cls._normalize(grid, data)
        return cls(grid, ncomp, phys=data.copy())

    @classmethod
    def from_fourier(cls, grid: Grid, data) -> "SpectralField":
        data = np.asarray(data, dtype=np.complex128)
        data, ncomp = cls._normalize(grid, data)
        return cls(grid, ncomp, four=data.copy())

    @staticmethod
    def _normalize(grid, data):
        n = grid.n
        if data.shape == (n, n, n):
            return data[None], 1
        if data.shape == (1, n, n, n):
            return data, 1
        if data.shape == (3, n, n, n):
            return data, 3
        raise ContractViolation(
            f"field data shape {data.shape} does not match grid n={n}"
        )

    # -- representation access --------------------------------------------

    def has_physical(self) -> bool:
        return self._phys is not None

    def has_fourier(self) -> bool:
        return self._four is not None

    @property
    def phys(self) -> np.ndarray:
        to_physical(self)
        return self._phys[0] if self.ncomp == 1 else self._phys

    @property
    def four(self) -> np.ndarray:
        to_fourier(self)
        return self._four[0] if self.ncomp == 1 else self._four

    def copy(self) -> "SpectralField":
        return SpectralField(
            self.grid,
            self.ncomp,
            None if self._phys is None else self._phys.copy(),
            None if self._four is None else self._four.copy(),
        )


def to_fourier(f: SpectralField) -> SpectralField:
    """Populate the Fourier representation; no-op if already current."""
    if f._four is None:
        if not np.isfinite(f._phys).all():
            idx = _first_bad_index(f._phys)
            raise NumericalFault(
                f"non-finite physical value at component {idx[0]}, point {idx[1:]}"
            )
        f._four = np.fft.fftn(f._phys, axes=_AXES)
    return f


def to_physical(f: SpectralField) -> SpectralField:
    """Populate the physical representation; no-op if already current."""
    if f._phys is None:
        if not np.isfinite(f._four).all():
            idx = _first_bad_index(f._four)
            raise NumericalFault(
                f"non-finite spectral value at component {idx[0]}, mode {idx[1:]}"
            )
        f._phys = np.fft.ifftn(f._four, axes=_AXES).real
    return f


def hermitian_residual(f: SpectralField) -> float:
    """Max deviation from conjugate symmetry F[k] == conj(F[-k]), relative."""
    F = to_fourier(f)._four
    mirrored = F[..., ::-1, ::-1, ::-1]
    mirrored = np.roll(mirrored, (1, 1, 1), axis=_AXES)
    scale = np.abs(F).max()
    if scale == 0.0:
        return 0.0
    return float(np.abs(F - np.conj(mirrored)).max() / scale)


def spectral_derivative(f: SpectralField, axis: int) -> SpectralField:
    """d f / d x_axis via i*k multiplication, axis in {1, 2, 3}.

    The Nyquist mode is zeroed. Works componentwise on vector fields.
    """
    if axis not in (1, 2, 3):
        raise ContractViolation(f"axis must be 1, 2 or 3, got {axis!r}")
    F = to_fourier(f)._four
    kd = f.grid.kd[axis - 1]
    return SpectralField(f.grid, f.ncomp, four=1j * kd * F)


def divergence(f: SpectralField) -> SpectralField:
    """Divergence of a vector field (scalar result)."""
    if f.ncomp != 3:
        raise ContractViolation("divergence requires a 3-component field")
    F = to_fourier(f)._four
    kd = f.grid.kd
    out = 1j * (kd[0] * F[0] + kd[1] * F[1] + kd[2] * F[2])
    return SpectralField(f.grid, 1, four=out[None])


def curl(f: SpectralField) -> SpectralField:
    """Curl of a vector field."""
    if f.ncomp != 3:
        raise ContractViolation("curl requires a 3-component field")
    F = to_fourier(f)._four
    kd = f.grid.kd
    out = np.empty_like(F)
    out[0] = 1j * (kd[1] * F[2] - kd[2] * F[1])
    out[1] = 1j * (kd[2] * F[0] - kd[0] * F[2])
    out[2] = 1j * (kd[0] * F[1] - kd[1] * F[0])
    return SpectralField(f.grid, 3, four=out)


def solve_poisson(rhs: SpectralField, mean_tol: float = 1e-10) -> SpectralField:
    """Solve -laplacian(phi) = rhs on the box; phi has zero mean.

    The right hand side must have (numerically) zero mean: the magnitude of
    mode (0,0,0) may not exceed mean_tol times the l2 norm of all modes.
    """
    if rhs.ncomp != 1:
        raise ContractViolation("solve_poisson expects a scalar field")
    F = to_fourier(rhs)._four[0]
    norm = float(np.linalg.norm(F.ravel()))
    mean_mode = abs(F[0, 0, 0])
    if mean_mode > mean_tol * norm:
        raise ConservationViolation(
            f"poisson right hand side has nonzero mean: |mode0|={mean_mode:.3e} "
            f"> {mean_tol:g} * ||rhs||={norm:.3e}"
        )
    phi = F * rhs.grid._inv_k2
    return SpectralField(rhs.grid, 1, four=phi[None])


# -- quadrature ------------------------------------------------------------


def integrate(values: np.ndarray, grid: Grid) -> float:
    """Box integral of pointwise values: dx**3 * sum. Deterministic."""
    return float(grid.dx**3 * np.sum(values))


def integral_phys(f: SpectralField) -> float:
    """Integral of a scalar field from its physical representation."""
    return integrate(f.phys, f.grid)


def integral_sq_spectral(f: SpectralField) -> float:
    """Integral of |f|**2 evaluated in Fourier space via Parseval."""
    F = to_fourier(f)._four
    g = f.grid
    return float(g.dx**3 * np.sum(np.abs(F) ** 2) / g.npoints)


# -- point evaluation -------------------------------------------------------


def evaluate_modes_at_points(coeffs: np.ndarray, grid: Grid, points) -> np.ndarray:
    """Evaluate Fourier-coefficient arrays exactly at arbitrary box points.

    coeffs: (..., n, n, n) complex in the module's unnormalized-forward
    convention. points: (m, 3). Returns real values with shape (..., m).
    Nyquist coefficients are dropped (their off-grid phase is undefined).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64)) % grid.box_length
    if pts.shape[-1] != 3:
        raise ContractViolation(f"points must be (m, 3), got {pts.shape}")
    C = np.array(coeffs, dtype=np.complex128, copy=True)
    nyq = grid.n // 2
    C[..., nyq, :, :] = 0.0
    C[..., :, nyq, :] = 0.0
    C[..., :, :, nyq] = 0.0
    ph = [np.exp(1j * np.outer(pts[:, d], grid.k1)) for d in range(3)]
    out = np.einsum("...abc,pa,pb,pc->...p", C, ph[0], ph[1], ph[2], optimize=True)
    return out.real / grid.npoints


def evaluate_at_points(f: SpectralField, points) -> np.ndarray:
    """Exact Fourier-series evaluation of a field at points (m, 3)."""
    vals = evaluate_modes_at_points(to_fourier(f)._four, f.grid, points)
    return vals[0] if f.ncomp == 1 else vals


def refine_to_grid(coeffs: np.ndarray, grid: Grid, factor: int = 2) -> np.ndarray:
    """Zero-pad spectra to a factor-refined grid and return physical values.

    coeffs: (..., n, n, n). Returns (..., factor*n, factor*n, factor*n) real.
    Assumes Nyquist-free input (dealiased fields qualify).
    """
    if factor < 1 or int(factor) != factor:
        raise ContractViolation(f"refinement factor must be a positive int, got {factor}")
    n = grid.n
    big = factor * n
    pad = (big - n) // 2
    shifted = np.fft.fftshift(coeffs, axes=_AXES)
    widths = [(0, 0)] * (coeffs.ndim - 3) + [(pad, pad)] * 3
    padded = np.pad(shifted, widths)
    padded = np.fft.ifftshift(padded, axes=_AXES)
    fine = np.fft.ifftn(padded, axes=_AXES).real * factor**3
    return fine


def trilinear_sample(fine: np.ndarray, box_length: float, points) -> np.ndarray:
    """Periodic trilinear interpolation on a uniform fine grid.

    fine: (..., N, N, N) physical values; points: (m, 3). Second-order
    accurate in the fine-grid spacing.
    """
    from scipy.ndimage import map_coordinates

    pts = np.atleast_2d(np.asarray(points, dtype=np.float64)) % box_length
    N = fine.shape[-1]
    coords = (pts * (N / box_length)).T  # (3, m) in index units
    if fine.ndim == 3:
        return map_coordinates(fine, coords, order=1, mode="grid-wrap")
    lead = fine.shape[:-3]
    flat = fine.reshape((-1,) + fine.shape[-3:])
    out = np.stack(
        [map_coordinates(comp, coords, order=1, mode="grid-wrap") for comp in flat]
    )
    return out.reshape(lead + (pts.shape[0],))
