"""Lagrangian probes: particle tracking, material derivatives, invariants.

Probes ride the flow on the same RK4 clock as the field solver: each field
step exposes its four stage velocities and the particle positions advance
through the matching stages, so the coupled system is integrated as one.

Field values along trajectories are obtained either by exact Fourier-series
evaluation at the particle positions (interp="spectral", the default) or by
zero-padding to a 2x refined grid followed by trilinear interpolation
(interp="refined_trilinear", cheaper, second order in the refined spacing).
The exact evaluator is the default because the identity residuals tracked
here sit orders of magnitude below what a trilinear floor allows.

Per sample each probe records omega, S omega, P omega, both eigenframes,
alignment metrics and the cross product omega x (S omega), whose transport
is the bridge between the two alignments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import FlowState, _rk4_stages, cfl_limit, sym6_matvec
from .eigenframe import alignment, decompose
from .errors import CFLViolation, ConfigError, ContractViolation, NumericalFault
from .spectral import (
    Grid,
    evaluate_modes_at_points,
    refine_to_grid,
    to_fourier,
    trilinear_sample,
)

TRAJECTORY_CSV_COLUMNS = (
    "id,t,x1,x2,x3,w1,w2,w3,mu1,mu2,mu3,lamneg,lamzeta,lameta,"
    "cos_s,cos_p,c1,c2,c3,res_eq12,res_eq14,res_ggk"
)

_SCALAR_KEYS = (
    "lam_aligned", "lam_zeta", "lam_eta",
    "cos_s", "cos_p", "rayleigh_s", "rayleigh_p", "res_align_s", "res_align_p",
)
_VEC_KEYS = ("x", "u", "w", "sw", "pw", "s_eigs", "h_eigs", "inv_vec")
_MAT_KEYS = ("s_vecs", "h_vecs")


@dataclass
class ProbeTrajectory:
    """Time-ordered per-probe samples, stored columnar."""

    probe_id: int
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    sw: np.ndarray
    pw: np.ndarray
    s_eigs: np.ndarray
    s_vecs: np.ndarray
    h_eigs: np.ndarray
    h_vecs: np.ndarray
    lam_aligned: np.ndarray
    lam_zeta: np.ndarray
    lam_eta: np.ndarray
    cos_s: np.ndarray
    cos_p: np.ndarray
    rayleigh_s: np.ndarray
    rayleigh_p: np.ndarray
    res_align_s: np.ndarray
    res_align_p: np.ndarray
    inv_vec: np.ndarray

    def __len__(self):
        return self.t.size

    @classmethod
    def from_arrays(cls, t, w, sw, pw, x=None, u=None, s_eigs=None, s_vecs=None,
                    h_eigs=None, h_vecs=None, probe_id=0, **extra):
        """Build a trajectory from raw sample arrays (synthetic data allowed)."""
        t = np.asarray(t, dtype=np.float64)
        T = t.size
        if np.any(np.diff(t) <= 0):
            raise ContractViolation("sample times must be strictly increasing")

        def vec(a):
            return np.full((T, 3), np.nan) if a is None else np.asarray(a, float)

        def mat(a):
            return np.full((T, 3, 3), np.nan) if a is None else np.asarray(a, float)

        def col(name):
            a = extra.get(name)
            return np.full(T, np.nan) if a is None else np.asarray(a, float)

        w, sw, pw = (np.asarray(a, dtype=np.float64) for a in (w, sw, pw))
        inv_vec = extra.get("inv_vec")
        inv_vec = np.cross(w, sw) if inv_vec is None else np.asarray(inv_vec, float)
        return cls(
            probe_id=probe_id, t=t, x=vec(x), u=vec(u), w=w, sw=sw, pw=pw,
            s_eigs=vec(s_eigs), s_vecs=mat(s_vecs), h_eigs=vec(h_eigs),
            h_vecs=mat(h_vecs),
            lam_aligned=col("lam_aligned"), lam_zeta=col("lam_zeta"),
            lam_eta=col("lam_eta"), cos_s=col("cos_s"), cos_p=col("cos_p"),
            rayleigh_s=col("rayleigh_s"), rayleigh_p=col("rayleigh_p"),
            res_align_s=col("res_align_s"), res_align_p=col("res_align_p"),
            inv_vec=inv_vec,
        )


class ProbeSet:
    """A set of Lagrangian probes and their accumulated sample history."""

    def __init__(self, grid: Grid, positions: np.ndarray):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        if positions.size == 0:
            raise ConfigError("probe set is empty")
        if positions.shape[-1] != 3:
            raise ContractViolation(f"positions must be (m, 3), got {positions.shape}")
        if not np.isfinite(positions).all():
            raise ConfigError("probe positions must be finite")
        self.grid = grid
        self.x_unwrapped = positions.copy()
        self.ids = np.arange(positions.shape[0])
        self.weight = grid.box_length**3 / positions.shape[0]
        self.times: list[float] = []
        self._rec: dict[str, list] = {k: [] for k in _SCALAR_KEYS + _VEC_KEYS + _MAT_KEYS}

    @property
    def count(self) -> int:
        return self.ids.size

    @property
    def positions(self) -> np.ndarray:
        """Current positions wrapped into the periodic box."""
        return self.x_unwrapped % self.grid.box_length

    @property
    def n_samples(self) -> int:
        return len(self.times)

    def trajectory(self, i: int) -> ProbeTrajectory:
        if not self.times:
            raise ContractViolation("no samples recorded yet")
        g = {k: np.array(v) for k, v in self._rec.items()}
        return ProbeTrajectory(
            probe_id=int(self.ids[i]),
            t=np.array(self.times),
            **{k: g[k][:, i] for k in _VEC_KEYS + _MAT_KEYS + _SCALAR_KEYS},
        )

    def trajectories(self):
        return [self.trajectory(i) for i in range(self.count)]


def seed_probes(grid_or_state, spec) -> ProbeSet:
    """Create probes from explicit positions or a sampling spec.

    spec may be an (m, 3) array of positions (wrapped into the box), a dict
    {"uniform": m} for m**3 cell centers, or {"random": count, "seed": s}.
    """
    grid = grid_or_state.grid if isinstance(grid_or_state, FlowState) else grid_or_state
    L = grid.box_length
    if isinstance(spec, dict):
        if "uniform" in spec:
            m = int(spec["uniform"])
            if m < 1:
                raise ConfigError(f"uniform probe spec needs m >= 1, got {m}")
            c1 = (np.arange(m) + 0.5) * (L / m)
            X = np.array(np.meshgrid(c1, c1, c1, indexing="ij"))
            pos = X.reshape(3, -1).T
        elif "random" in spec:
            count = int(spec["random"])
            if count < 1:
                raise ConfigError(f"random probe spec needs count >= 1, got {count}")
            rng = np.random.default_rng(int(spec.get("seed", 0)))
            pos = rng.uniform(0.0, L, size=(count, 3))
        else:
            raise ConfigError(f"unknown probe spec keys: {sorted(spec)}")
    else:
        pos = np.atleast_2d(np.asarray(spec, dtype=np.float64)) % L
    return ProbeSet(grid, pos)


# -- advection ----------------------------------------------------------------


def _velocity_at(grid: Grid, u_hat: np.ndarray, pts: np.ndarray, interp: str) -> np.ndarray:
    if interp == "spectral":
        vals = evaluate_modes_at_points(u_hat, grid, pts)
    elif interp == "refined_trilinear":
        fine = refine_to_grid(u_hat, grid, 2)
        vals = trilinear_sample(fine, grid.box_length, pts)
    else:
        raise ConfigError(f"unknown interpolation backend {interp!r}")
    if not np.isfinite(vals).all():
        raise NumericalFault("non-finite interpolated velocity at a probe position")
    return vals.T  # (m, 3)


def _advance_positions(probes: ProbeSet, stages, dt: float, interp: str) -> None:
    grid = probes.grid
    x = probes.x_unwrapped
    v1 = _velocity_at(grid, stages[0], x, interp)
    v2 = _velocity_at(grid, stages[1], x + 0.5 * dt * v1, interp)
    v3 = _velocity_at(grid, stages[2], x + 0.5 * dt * v2, interp)
    v4 = _velocity_at(grid, stages[3], x + dt * v3, interp)
    probes.x_unwrapped = x + (dt / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)


def record_sample(state: FlowState, probes: ProbeSet, interp: str = "spectral") -> None:
    """Append one diagnostic sample for every probe at the state's time."""
    grid = state.grid
    pts = probes.positions
    if interp == "spectral":
        u_hat = to_fourier(state.u)._four
        from .dynamics import _curl_hat

        stack = np.concatenate(
            [u_hat, _curl_hat(grid, u_hat), state.strain().four6,
             state.pressure_hessian().four6], axis=0
        )
        vals = evaluate_modes_at_points(stack, grid, pts)
    elif interp == "refined_trilinear":
        u_hat = to_fourier(state.u)._four
        from .dynamics import _curl_hat

        stack = np.concatenate(
            [u_hat, _curl_hat(grid, u_hat), state.strain().four6,
             state.pressure_hessian().four6], axis=0
        )
        fine = refine_to_grid(stack, grid, 2)
        vals = trilinear_sample(fine, grid.box_length, pts)
    else:
        raise ConfigError(f"unknown interpolation backend {interp!r}")
    if not np.isfinite(vals).all():
        raise NumericalFault(f"non-finite probe sample at t={state.t:.6g}")
    u, w, s6, p6 = vals[0:3], vals[3:6], vals[6:12], vals[12:18]
    sw = sym6_matvec(s6, w)
    pw = sym6_matvec(p6, w)

    m = probes.count
    rec = probes._rec
    s_eigs = np.empty((m, 3)); s_vecs = np.empty((m, 3, 3))
    h_eigs = np.empty((m, 3)); h_vecs = np.empty((m, 3, 3))
    scalars = {k: np.full(m, np.nan) for k in _SCALAR_KEYS}
    for i in range(m):
        S = _mat_from6(s6[:, i])
        P = _mat_from6(p6[:, i])
        sf = decompose(S, "strain")
        hf = decompose(P, "hessian")
        s_eigs[i], s_vecs[i] = sf.eigenvalues, sf.eigenvectors
        h_eigs[i], h_vecs[i] = hf.eigenvalues, hf.eigenvectors
        wi = w[:, i]
        if np.linalg.norm(wi) > 0.0:
            ams = alignment(S, wi, frame=sf)
            amp = alignment(P, wi, frame=hf)
            scalars["cos_s"][i] = ams.best_cosine
            scalars["cos_p"][i] = amp.best_cosine
            scalars["rayleigh_s"][i] = ams.rayleigh
            scalars["rayleigh_p"][i] = amp.rayleigh
            scalars["res_align_s"][i] = ams.residual
            scalars["res_align_p"][i] = amp.residual
            scalars["lam_aligned"][i] = hf.eigenvalues[amp.best_index]
            others = np.delete(hf.eigenvalues, amp.best_index)
            scalars["lam_zeta"][i] = max(others)
            scalars["lam_eta"][i] = min(others)

    probes.times.append(state.t)
    rec["x"].append(pts.copy())
    rec["u"].append(u.T.copy())
    rec["w"].append(w.T.copy())
    rec["sw"].append(sw.T.copy())
    rec["pw"].append(pw.T.copy())
    rec["s_eigs"].append(s_eigs)
    rec["s_vecs"].append(s_vecs)
    rec["h_eigs"].append(h_eigs)
    rec["h_vecs"].append(h_vecs)
    rec["inv_vec"].append(np.cross(w.T, sw.T))
    for k, v in scalars.items():
        rec[k].append(v)


def _mat_from6(c):
    return np.array([[c[0], c[1], c[2]], [c[1], c[3], c[4]], [c[2], c[4], c[5]]])


def simulate_with_probes(state: FlowState, probes: ProbeSet | None, dt: float,
                         n_steps: int, sample_every: int = 1,
                         interp: str = "spectral", cfl: float = 0.5,
                         on_sample=None) -> FlowState:
    """March the flow n_steps and carry probes through the same RK4 stages.

    Diagnostics are recorded at the initial state and then every
    sample_every steps; on_sample(state) is invoked at the same instants.
    """
    if probes is not None and probes.n_samples == 0:
        record_sample(state, probes, interp)
    if on_sample is not None:
        on_sample(state)
    for k in range(1, n_steps + 1):
        dt_max = cfl_limit(state, cfl)
        if dt > dt_max:
            raise CFLViolation(dt, dt_max)
        u_hat = to_fourier(state.u)._four
        stages, u_next = _rk4_stages(state.grid, u_hat, dt)
        if probes is not None:
            _advance_positions(probes, stages, dt, interp)
        if not np.isfinite(u_next).all():
            raise NumericalFault(
                f"non-finite velocity after step from t={state.t:.6g} with dt={dt:g}"
            )
        from .spectral import SpectralField

        state = FlowState(state.grid, SpectralField(state.grid, 3, four=u_next),
                          state.t + dt)
        if k % sample_every == 0:
            if probes is not None:
                record_sample(state, probes, interp)
            if on_sample is not None:
                on_sample(state)
    return state


def advect(probes: ProbeSet, states, sample_every: int = 1,
           interp: str = "spectral") -> ProbeSet:
    """Advect probes through a sequence of consecutive solver states.

    The stage velocities between states[k] and states[k+1] are recomputed
    from states[k], which reproduces the solver's own RK4 stages exactly
    (the stepper is deterministic), so particles ride the same clock.
    """
    states = list(states)
    if len(states) < 2:
        raise ContractViolation("advect needs at least two states")
    if probes.n_samples == 0:
        record_sample(states[0], probes, interp)
    for k in range(len(states) - 1):
        a, b = states[k], states[k + 1]
        if not a.grid.same_as(probes.grid):
            raise ContractViolation("state grid does not match probe grid")
        dt = b.t - a.t
        if dt <= 0:
            raise ContractViolation("states must be strictly increasing in time")
        stages, _ = _rk4_stages(a.grid, to_fourier(a.u)._four, dt)
        _advance_positions(probes, stages, dt, interp)
        if (k + 1) % sample_every == 0:
            record_sample(b, probes, interp)
    return probes


# -- material-derivative identity checks ---------------------------------------


@dataclass
class IdentityReport:
    """Relative residuals of the Lagrangian transport identities.

    r_eq12: |d omega/dt - S omega| residual        (stretching identity)
    r_eq14: |d(S omega)/dt + P omega| residual     (second-derivative identity,
            with d omega/dt rewritten as S omega before differencing)
    r_ggk:  |d(omega x S omega)/dt + omega x P omega| residual
    Pooled values are Frobenius-norm ratios over all interior samples; the
    *_max values are max-norm ratios. Time derivatives use 3-point
    (second-order) differences over samples spaced stride apart.
    """

    r_eq12: float
    r_eq14: float
    r_ggk: float
    r_eq12_max: float
    r_eq14_max: float
    r_ggk_max: float
    fd_order: int
    stride: int
    per_sample: dict = field(repr=False, default_factory=dict)


def _fd3(t: np.ndarray, f: np.ndarray, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Second-order 3-point derivative at interior samples (possibly nonuniform)."""
    idx = np.arange(stride, t.size - stride)
    tm, t0, tp = t[idx - stride], t[idx], t[idx + stride]
    fm, f0, fp = f[idx - stride], f[idx], f[idx + stride]
    h1 = (t0 - tm)[:, None]
    h2 = (tp - t0)[:, None]
    d = (h1**2 * fp - h2**2 * fm + (h2**2 - h1**2) * f0) / (h1 * h2 * (h1 + h2))
    return idx, d


def _pooled(num: np.ndarray, den: np.ndarray) -> float:
    dn = float(np.linalg.norm(den))
    nn = float(np.linalg.norm(num))
    if dn == 0.0:
        return 0.0 if nn == 0.0 else np.inf
    return nn / dn


def _max_ratio(num: np.ndarray, den: np.ndarray) -> float:
    dn = float(np.linalg.norm(den, axis=1).max()) if den.size else 0.0
    nn = float(np.linalg.norm(num, axis=1).max()) if num.size else 0.0
    if dn == 0.0:
        return 0.0 if nn == 0.0 else np.inf
    return nn / dn


def material_derivative_checks(traj: ProbeTrajectory, stride: int = 1) -> IdentityReport:
    """Residuals of the transport identities along one trajectory."""
    T = len(traj)
    if T < 5:
        raise ContractViolation(f"need at least 5 samples, got {T}")
    if T < 2 * stride + 1:
        raise ContractViolation(f"stride {stride} too large for {T} samples")
    idx, dw = _fd3(traj.t, traj.w, stride)
    _, dsw = _fd3(traj.t, traj.sw, stride)
    _, dinv = _fd3(traj.t, np.cross(traj.w, traj.sw), stride)

    num1 = dw - traj.sw[idx]
    den1 = traj.sw[idx]
    num2 = dsw + traj.pw[idx]
    den2 = traj.pw[idx]
    wxpw = np.cross(traj.w[idx], traj.pw[idx])
    num3 = dinv + wxpw
    den3 = wxpw

    def per_sample(num, den):
        out = np.full(T, np.nan)
        nn = np.linalg.norm(num, axis=1)
        dd = np.linalg.norm(den, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.where(dd > 0, nn / dd, np.where(nn == 0, 0.0, np.inf))
        out[idx] = r
        return out

    return IdentityReport(
        r_eq12=_pooled(num1, den1),
        r_eq14=_pooled(num2, den2),
        r_ggk=_pooled(num3, den3),
        r_eq12_max=_max_ratio(num1, den1),
        r_eq14_max=_max_ratio(num2, den2),
        r_ggk_max=_max_ratio(num3, den3),
        fd_order=2,
        stride=stride,
        per_sample={
            "res_eq12": per_sample(num1, den1),
            "res_eq14": per_sample(num2, den2),
            "res_ggk": per_sample(num3, den3),
        },
    )


# -- invariant components -------------------------------------------------------


def invariant_components(traj: ProbeTrajectory, frame_policy: str = "principal_axes",
                         degeneracy_tol: float = 1e-9):
    """Components of omega x (S omega) per sample.

    Under frame_policy="principal_axes" the vector is projected on the
    strain eigenframe with labels kept coherent in time by max-dot-product
    matching against the previous sample; components whose eigenvalue sits
    in a (nearly) degenerate pair are flagged indeterminate for that sample.
    Under "fixed_cartesian" the raw components are returned.

    Returns (c, indeterminate) with shapes (T, 3) and (T, 3).
    """
    T = len(traj)
    if frame_policy == "fixed_cartesian":
        return traj.inv_vec.copy(), np.zeros((T, 3), dtype=bool)
    if frame_policy != "principal_axes":
        raise ConfigError(f"unknown frame_policy {frame_policy!r}")

    c = np.full((T, 3), np.nan)
    indet = np.zeros((T, 3), dtype=bool)
    prev = None
    from itertools import permutations

    for k in range(T):
        vecs = traj.s_vecs[k]
        vals = traj.s_eigs[k]
        if not np.isfinite(vecs).all():
            indet[k] = True
            continue
        if prev is not None:
            best, best_score = None, -np.inf
            for perm in permutations(range(3)):
                score = sum(abs(prev[i] @ vecs[perm[i]]) for i in range(3))
                if score > best_score:
                    best_score, best = score, perm
            vecs = vecs[list(best)]
            vals = vals[list(best)]
            signs = np.sign(np.sum(prev * vecs, axis=1))
            signs[signs == 0] = 1.0
            vecs = vecs * signs[:, None]
        prev = vecs
        scale = max(np.abs(vals).max(), 1e-300)
        for i in range(3):
            gaps = [abs(vals[i] - vals[j]) for j in range(3) if j != i]
            if min(gaps) <= degeneracy_tol * scale:
                indet[k, i] = True
        c[k] = vecs @ traj.inv_vec[k]
    return c, indet


# -- geometry -------------------------------------------------------------------


def hull_volume(probes: ProbeSet) -> float:
    """Convex-hull volume of the probe cloud (unwrapped positions)."""
    from scipy.spatial import ConvexHull

    if probes.count < 4:
        raise ContractViolation("hull volume needs at least 4 probes")
    return float(ConvexHull(probes.x_unwrapped).volume)


# -- export ---------------------------------------------------------------------


def export_trajectories_csv(probes: ProbeSet, path,
                            frame_policy: str = "principal_axes") -> None:
    """Write all trajectories to CSV with the fixed column schema."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_CSV_COLUMNS.split(","))
        for i in range(probes.count):
            traj = probes.trajectory(i)
            T = len(traj)
            c, _ = invariant_components(traj, frame_policy)
            if T >= 5:
                res = material_derivative_checks(traj).per_sample
            else:
                nanarr = np.full(T, np.nan)
                res = {k: nanarr for k in ("res_eq12", "res_eq14", "res_ggk")}
            xw = traj.x % probes.grid.box_length
            for k in range(T):
                row = [traj.probe_id, traj.t[k], *xw[k], *traj.w[k],
                       *traj.s_eigs[k], traj.lam_aligned[k], traj.lam_zeta[k],
                       traj.lam_eta[k], traj.cos_s[k], traj.cos_p[k], *c[k],
                       res["res_eq12"][k], res["res_eq14"][k], res["res_ggk"][k]]
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating))
                                 else v for v in row])
