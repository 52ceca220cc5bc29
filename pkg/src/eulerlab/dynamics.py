"""Incompressible Euler dynamics on the periodic box.

Pseudo-spectral evolution of du/dt = P[u x omega] in rotational form, where
P is the solenoidal (Leray) projector and the quadratic product is 2/3-rule
dealiased; the gradient part of the nonlinearity is absorbed by the
projection. Time integration is fixed-step classical RK4 under a CFL guard.

The state also produces every derived field the diagnostics need: vorticity
omega = curl u, the symmetric strain S (6 components), the pressure p from
its Poisson equation, and the pressure Hessian P. The pressure right hand
side is assembled from exact grid products of the velocity gradients, which
makes trace(P) match |omega|**2/2 - S:S pointwise to roundoff.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import CFLViolation, ConfigError, ContractViolation, NumericalFault
from .spectral import (
    Grid,
    SpectralField,
    curl,
    evaluate_modes_at_points,
    integrate,
    to_fourier,
    to_physical,
)

_AXES = (-3, -2, -1)

PRESETS = ("taylor_green", "abc", "random_solenoidal")

#: Tensor component order used throughout: xx, xy, xz, yy, yz, zz.
SYM_COMPONENTS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


class SymTensorField:
    """Symmetric 3x3 tensor field stored as 6 independent components."""

    def __init__(self, grid: Grid, phys6: np.ndarray, four6: np.ndarray | None = None):
        self.grid = grid
        self.phys6 = phys6
        self._four6 = four6

    @property
    def four6(self) -> np.ndarray:
        if self._four6 is None:
            self._four6 = np.fft.fftn(self.phys6, axes=_AXES)
        return self._four6

    def apply(self, vec: np.ndarray) -> np.ndarray:
        """Pointwise matrix-vector product with a (3, n, n, n) field."""
        s = self.phys6
        return np.stack(
            [
                s[0] * vec[0] + s[1] * vec[1] + s[2] * vec[2],
                s[1] * vec[0] + s[3] * vec[1] + s[4] * vec[2],
                s[2] * vec[0] + s[4] * vec[1] + s[5] * vec[2],
            ]
        )

    def trace(self) -> np.ndarray:
        return self.phys6[0] + self.phys6[3] + self.phys6[5]

    def at_point(self, flat_index: int) -> np.ndarray:
        """Full 3x3 matrix at one (flattened) grid point."""
        c = self.phys6.reshape(6, -1)[:, flat_index]
        return np.array(
            [[c[0], c[1], c[2]], [c[1], c[3], c[4]], [c[2], c[4], c[5]]]
        )


class FlowState:
    """Velocity snapshot at one time plus lazily cached derived fields.

    States are treated as immutable: step() returns a new state, and all
    derived-field caches fill on first use and are never invalidated.
    """

    def __init__(self, grid: Grid, u: SpectralField, t: float = 0.0):
        if u.ncomp != 3:
            raise ContractViolation("FlowState requires a 3-component velocity")
        self.grid = grid
        self.u = u
        self.t = float(t)
        self._cache: dict = {}

    @classmethod
    def from_velocity(cls, grid: Grid, u_phys, t: float = 0.0) -> "FlowState":
        return cls(grid, SpectralField.from_physical(grid, u_phys), t)

    def copy(self) -> "FlowState":
        return FlowState(self.grid, self.u.copy(), self.t)

    # -- derived fields ----------------------------------------------------

    def vorticity(self) -> SpectralField:
        if "omega" not in self._cache:
            self._cache["omega"] = curl(self.u)
        return self._cache["omega"]

    def strain(self) -> SymTensorField:
        if "strain" not in self._cache:
            self._cache["strain"] = _strain_from_u_hat(self.grid, to_fourier(self.u)._four)
        return self._cache["strain"]

    def pressure(self) -> SpectralField:
        self._pressure_pair()
        return self._cache["pressure"]

    def pressure_hessian(self) -> SymTensorField:
        self._pressure_pair()
        return self._cache["hessian"]

    def _pressure_pair(self):
        if "pressure" not in self._cache:
            p, P = pressure_and_hessian(self)
            self._cache["pressure"] = p
            self._cache["hessian"] = P

    def max_speed(self) -> float:
        if "umax" not in self._cache:
            u = to_physical(self.u)._phys
            self._cache["umax"] = float(np.sqrt((u * u).sum(axis=0)).max())
        return self._cache["umax"]

    def divergence_ratio(self) -> float:
        """max|div u| / max|grad u|, the solenoidality defect."""
        g = self.grid
        F = to_fourier(self.u)._four
        div = np.fft.ifftn(
            1j * (g.kd[0] * F[0] + g.kd[1] * F[1] + g.kd[2] * F[2])
        ).real
        gmax = 0.0
        for i in range(3):
            for j in range(3):
                gij = np.fft.ifftn(1j * g.kd[j] * F[i]).real
                gmax = max(gmax, float(np.abs(gij).max()))
        if gmax == 0.0:
            return 0.0
        return float(np.abs(div).max() / gmax)


# -- initial conditions ------------------------------------------------------


def init_flow(preset: str, grid: Grid, params: dict | None = None) -> FlowState:
    """Build a divergence-free initial state from a named preset."""
    params = dict(params or {})
    if preset == "taylor_green":
        X = grid.coordinates()
        u = np.stack(
            [
                np.sin(X[0]) * np.cos(X[1]) * np.cos(X[2]),
                -np.cos(X[0]) * np.sin(X[1]) * np.cos(X[2]),
                np.zeros_like(X[0]),
            ]
        )
        return FlowState.from_velocity(grid, u)
    if preset == "abc":
        A = float(params.pop("A", 1.0))
        B = float(params.pop("B", 1.0))
        C = float(params.pop("C", 1.0))
        _reject_extra(params, "abc")
        X = grid.coordinates()
        u = np.stack(
            [
                A * np.sin(X[2]) + C * np.cos(X[1]),
                B * np.sin(X[0]) + A * np.cos(X[2]),
                C * np.sin(X[1]) + B * np.cos(X[0]),
            ]
        )
        return FlowState.from_velocity(grid, u)
    if preset == "random_solenoidal":
        seed = int(params.pop("seed", 0))
        slope = float(params.pop("slope", -5.0 / 3.0))
        cutoff = int(params.pop("cutoff", max(2, grid.n // 8)))
        _reject_extra(params, "random_solenoidal")
        if cutoff < 1 or cutoff > grid.n // 3:
            raise ConfigError(
                f"random_solenoidal cutoff must lie in [1, n//3]={grid.n // 3}, got {cutoff}"
            )
        return _random_solenoidal(grid, seed, slope, cutoff)
    raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")


def _reject_extra(params, preset):
    if params:
        raise ConfigError(f"unknown {preset} parameters: {sorted(params)}")


def _random_solenoidal(grid: Grid, seed: int, slope: float, cutoff: int) -> FlowState:
    rng = np.random.default_rng(seed)
    n = grid.n
    noise = rng.standard_normal((3, n, n, n))
    F = np.fft.fftn(noise, axes=_AXES)  # hermitian by construction
    kmag = np.sqrt(grid.k2) * grid.box_length / (2.0 * np.pi)  # integer radius
    amp = np.zeros_like(kmag)
    band = (kmag > 0.5) & (kmag <= cutoff)
    # |u_k| ~ k**(slope/2) gives an energy spectrum E(k) ~ k**(slope+2)/... ;
    # the slope knob shapes the band, the overall level is normalized below.
    amp[band] = kmag[band] ** (slope / 2.0)
    F *= amp
    F = _project_solenoidal(grid, F)
    F *= grid.dealias_mask
    u = np.fft.ifftn(F, axes=_AXES).real
    speed = np.sqrt((u * u).sum(axis=0)).max()
    if speed > 0:
        u /= speed
    return FlowState.from_velocity(grid, u)


# -- spectral building blocks ------------------------------------------------


def _project_solenoidal(grid: Grid, vec_hat: np.ndarray) -> np.ndarray:
    k = grid.k
    kdotv = k[0] * vec_hat[0] + k[1] * vec_hat[1] + k[2] * vec_hat[2]
    return vec_hat - k * (kdotv * grid._inv_k2)


def _curl_hat(grid: Grid, u_hat: np.ndarray) -> np.ndarray:
    kd = grid.kd
    return np.stack(
        [
            1j * (kd[1] * u_hat[2] - kd[2] * u_hat[1]),
            1j * (kd[2] * u_hat[0] - kd[0] * u_hat[2]),
            1j * (kd[0] * u_hat[1] - kd[1] * u_hat[0]),
        ]
    )


def _nonlinear_rhs(grid: Grid, u_hat: np.ndarray) -> np.ndarray:
    """Dealiased, projected rotational nonlinearity fft(u x omega)."""
    u = np.fft.ifftn(u_hat, axes=_AXES).real
    w = np.fft.ifftn(_curl_hat(grid, u_hat), axes=_AXES).real
    m = np.cross(u, w, axisa=0, axisb=0, axisc=0)
    m_hat = np.fft.fftn(m, axes=_AXES)
    m_hat *= grid.dealias_mask
    m_hat = _project_solenoidal(grid, m_hat)
    m_hat[:, 0, 0, 0] = 0.0  # box momentum is conserved exactly
    return m_hat


def _rk4_stages(grid: Grid, u_hat: np.ndarray, dt: float):
    """One classical RK4 step; returns the four stage fields and u(t+dt).

    The stage fields approximate u at times (t, t+dt/2, t+dt/2, t+dt) and
    let particle integrators advance on the same clock as the solver.
    """
    k1 = _nonlinear_rhs(grid, u_hat)
    s2 = u_hat + 0.5 * dt * k1
    k2 = _nonlinear_rhs(grid, s2)
    s3 = u_hat + 0.5 * dt * k2
    k3 = _nonlinear_rhs(grid, s3)
    s4 = u_hat + dt * k3
    k4 = _nonlinear_rhs(grid, s4)
    u_next = u_hat + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return (u_hat, s2, s3, s4), u_next


def cfl_limit(state: FlowState, cfl: float = 0.5) -> float:
    """Largest admissible dt: cfl * dx / max|u| (inf for a quiescent state)."""
    umax = state.max_speed()
    if umax == 0.0:
        return np.inf
    return cfl * state.grid.dx / umax


def step(state: FlowState, dt: float, cfl: float = 0.5) -> FlowState:
    """Advance one RK4 step of the projected, dealiased dynamics."""
    if not np.isfinite(dt) or dt <= 0:
        raise ContractViolation(f"dt must be positive and finite, got {dt!r}")
    dt_max = cfl_limit(state, cfl)
    if dt > dt_max:
        raise CFLViolation(dt, dt_max)
    u_hat = to_fourier(state.u)._four
    _, u_next = _rk4_stages(state.grid, u_hat, dt)
    if not np.isfinite(u_next).all():
        raise NumericalFault(
            f"non-finite velocity after step from t={state.t:.6g} with dt={dt:g}"
        )
    return FlowState(state.grid, SpectralField(state.grid, 3, four=u_next), state.t + dt)


# -- derived fields ----------------------------------------------------------


def vorticity_field(state: FlowState) -> SpectralField:
    return state.vorticity()


def strain_field(state: FlowState) -> SymTensorField:
    return state.strain()


def _strain_from_u_hat(grid: Grid, u_hat: np.ndarray) -> SymTensorField:
    kd = grid.kd
    four6 = np.stack(
        [
            0.5j * (kd[j] * u_hat[i] + kd[i] * u_hat[j])
            for i, j in SYM_COMPONENTS
        ]
    )
    phys6 = np.fft.ifftn(four6, axes=_AXES).real
    return SymTensorField(grid, phys6, four6)


def pressure_and_hessian(state: FlowState):
    """Pressure from its Poisson equation and its spectral Hessian.

    Solves -laplacian(p) = sum_ij du_i/dx_j du_j/dx_i with the right hand
    side formed from exact grid products (mean removed, asserted tiny), then
    P_ij = -k_i k_j p_hat. Returns (p: SpectralField, P: SymTensorField).
    """
    grid = state.grid
    u_hat = to_fourier(state.u)._four
    kd = grid.kd
    grads = [
        [np.fft.ifftn(1j * kd[j] * u_hat[i], axes=(-3, -2, -1)).real for j in range(3)]
        for i in range(3)
    ]
    rhs = np.zeros((grid.n,) * 3)
    for i in range(3):
        for j in range(3):
            rhs += grads[i][j] * grads[j][i]
    rhs_hat = np.fft.fftn(rhs)
    norm = float(np.linalg.norm(rhs_hat.ravel()))
    mean_mode = abs(rhs_hat[0, 0, 0])
    if norm > 0 and mean_mode > 1e-8 * norm:
        raise NumericalFault(
            f"pressure source has a spurious mean ({mean_mode:.3e} vs ||rhs||={norm:.3e}); "
            "the velocity field is not consistently solenoidal"
        )
    rhs_hat[0, 0, 0] = 0.0
    p_hat = rhs_hat * grid._inv_k2
    p = SpectralField(grid, 1, four=p_hat[None])
    four6 = np.stack([-grid.kd[i] * grid.kd[j] * p_hat for i, j in SYM_COMPONENTS])
    phys6 = np.fft.ifftn(four6, axes=_AXES).real
    return p, SymTensorField(grid, phys6, four6)


# -- integral diagnostics ----------------------------------------------------


def energy(state: FlowState) -> float:
    """Box integral of |u|**2."""
    u = to_physical(state.u)._phys
    return integrate((u * u).sum(axis=0), state.grid)


def helicity(state: FlowState) -> float:
    """Box integral of u . omega."""
    u = to_physical(state.u)._phys
    w = to_physical(state.vorticity())._phys
    return integrate((u * w).sum(axis=0), state.grid)


def enstrophy(state: FlowState) -> float:
    """Box integral of |omega|**2."""
    w = to_physical(state.vorticity())._phys
    return integrate((w * w).sum(axis=0), state.grid)


# -- snapshot format ---------------------------------------------------------

SNAPSHOT_MAGIC = b"EULB1"
_HEADER = "<5sIddI"  # magic, n, box_length, t, ncomp (little-endian)


def save_snapshot(state: FlowState, path) -> None:
    """Write the velocity field in the flat binary snapshot format.

    Layout: magic "EULB1", uint32 n, float64 box_length, float64 t,
    uint32 component count, then row-major float64 field data with the
    component axis outermost. All values little-endian.
    """
    u = to_physical(state.u)._phys
    with open(path, "wb") as fh:
        fh.write(
            struct.pack(
                _HEADER, SNAPSHOT_MAGIC, state.grid.n, state.grid.box_length,
                state.t, u.shape[0],
            )
        )
        fh.write(np.ascontiguousarray(u, dtype="<f8").tobytes())


def load_snapshot(path) -> FlowState:
    """Read a snapshot written by save_snapshot."""
    with open(path, "rb") as fh:
        head = fh.read(struct.calcsize(_HEADER))
        magic, n, box_length, t, ncomp = struct.unpack(_HEADER, head)
        if magic != SNAPSHOT_MAGIC:
            raise ConfigError(f"not a field snapshot: bad magic {magic!r}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    expected = ncomp * n**3
    if data.size != expected:
        raise ConfigError(
            f"snapshot payload has {data.size} values, expected {expected}"
        )
    grid = Grid(n, box_length)
    u = data.reshape(ncomp, n, n, n).astype(np.float64)
    return FlowState.from_velocity(grid, u, t)


# -- point evaluation of derived fields ---------------------------------------


def fields_at_points(state: FlowState, points: np.ndarray) -> dict:
    """Exact evaluation of u, omega, S, P (and derived products) at points.

    Returns a dict with keys 'u', 'w', 's6', 'p6' of shapes (3, m), (3, m),
    (6, m), (6, m). Used by the Lagrangian probe layer.
    """
    grid = state.grid
    u_hat = to_fourier(state.u)._four
    w_hat = _curl_hat(grid, u_hat)
    s_hat = state.strain().four6
    p_hat6 = state.pressure_hessian().four6
    stack = np.concatenate([u_hat, w_hat, s_hat, p_hat6], axis=0)
    vals = evaluate_modes_at_points(stack, grid, points)
    return {"u": vals[0:3], "w": vals[3:6], "s6": vals[6:12], "p6": vals[12:18]}


def sym6_matvec(c6: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product for stacked 6-component symmetric tensors.

    c6: (6, m), v: (3, m) -> (3, m).
    """
    return np.stack(
        [
            c6[0] * v[0] + c6[1] * v[1] + c6[2] * v[2],
            c6[1] * v[0] + c6[3] * v[1] + c6[4] * v[2],
            c6[2] * v[0] + c6[4] * v[1] + c6[5] * v[2],
        ]
    )
