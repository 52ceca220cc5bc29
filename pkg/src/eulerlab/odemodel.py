"""Reduced Lagrangian blow-up models: per-element ODEs and ensembles.

Each fluid element carries the strain eigenvalue mu felt by its vorticity
under exact double alignment with proportionality lam = c0 * mu**2, which
closes the element dynamics to

    mu' = (c0 - 1) * mu**2,      d log|omega| / dt = mu.

The closed-form solution mu(t) = (c0-1)**-1 / (Tstar - t) loses regularity
at Tstar = t0 + 1/((c0-1) mu0(alpha)), so finite-time blow-up is realized
exactly here (unlike the spectral solver, which only furnishes consistent
fields). Ensemble predictions follow: the first blow-up time T1 is the
infimum of Tstar over elements, the critical time T0 comes from the
discrete enstrophy functionals, and the participation filter keeps the
elements with mu0 >= mu0(beta) (c0-3)/(c0-1).

The vortex-tube scenario evolves all three principal components: the
hessian action is prescribed isotropic in the element frame (the unique
trace-consistent choice, lam = sum(mu_i**2)/3), which makes the alignment
exact for any vorticity direction and freezes omega x (S omega). Setting
alignment_breaking != 0 tilts the hessian so omega x (P omega) != 0 and the
conservation visibly fails, probing the implication in the right direction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    ConfigError,
    ContractViolation,
    HypothesisViolation,
    NumericalFault,
)
from .functionals import SampleFields

#: mu value past which an element is declared numerically blown up.
BLOWUP_THRESHOLD = 1e6
#: elements refuse to step closer than this to their closed-form Tstar.
TSTAR_GUARD = 1e-9


@dataclass
class FluidElement:
    """One ensemble member of the aligned element dynamics."""

    mu0: float
    c0: float
    id: int = 0
    alpha: tuple = (0.0, 0.0, 0.0)
    omega0: float = 1.0
    weight: float = 1.0
    t0: float = 0.0
    t: float = field(default=None)
    mu: float = field(default=None)
    log_omega: float = field(default=None)
    status: str = "regular"
    blowup_time_numeric: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.mu0) or self.mu0 <= 0.0:
            raise HypothesisViolation(
                f"element {self.id}: initial stretching rate mu0 must be positive, "
                f"got {self.mu0!r}"
            )
        if self.omega0 <= 0.0 or self.weight <= 0.0:
            raise ContractViolation("omega0 and weight must be positive")
        self.alpha = tuple(float(a) for a in np.asarray(self.alpha, float).reshape(3))
        if self.t is None:
            self.t = self.t0
        if self.mu is None:
            self.mu = self.mu0
        if self.log_omega is None:
            self.log_omega = float(np.log(self.omega0))

    @property
    def Tstar(self) -> float:
        """Closed-form loss-of-regularity time; infinite when c0 <= 1."""
        if self.c0 <= 1.0:
            return np.inf
        return self.t0 + 1.0 / ((self.c0 - 1.0) * self.mu0)

    @property
    def omega_mag(self) -> float:
        return float(np.exp(self.log_omega))


def closed_form_mu(mu0: float, c0: float, tau) -> np.ndarray:
    """mu at elapsed time tau since t0 along the element."""
    return mu0 / (1.0 - (c0 - 1.0) * mu0 * np.asarray(tau, float))


def closed_form_omega_mag(omega0: float, mu0: float, c0: float, tau) -> np.ndarray:
    """|omega| at elapsed time tau; grows like (Tstar - t)**(-1/(c0-1))."""
    base = 1.0 - (c0 - 1.0) * mu0 * np.asarray(tau, float)
    return omega0 * base ** (-1.0 / (c0 - 1.0))


def element_ode_step(e: FluidElement, dt: float,
                     threshold: float = BLOWUP_THRESHOLD,
                     guard: float = TSTAR_GUARD) -> FluidElement:
    """Advance one element by one RK4 step of the aligned dynamics.

    Vorticity magnitude is integrated in log space so growth near Tstar
    cannot overflow before the mu threshold fires. Stepping past the
    closed-form Tstar is refused outright.
    """
    if e.status != "regular":
        raise ContractViolation(f"element {e.id} has already blown up")
    if not np.isfinite(dt) or dt <= 0.0:
        raise ContractViolation(f"dt must be positive and finite, got {dt!r}")
    if e.t + dt >= e.Tstar - guard:
        raise ContractViolation(
            f"element {e.id}: step to t={e.t + dt:.12g} would reach its "
            f"closed-form blow-up time Tstar={e.Tstar:.12g}"
        )
    a = e.c0 - 1.0

    with np.errstate(over="ignore", invalid="ignore"):
        m1 = a * e.mu**2
        mu2 = e.mu + 0.5 * dt * m1
        m2 = a * mu2**2
        mu3 = e.mu + 0.5 * dt * m2
        m3 = a * mu3**2
        mu4 = e.mu + dt * m3
        m4 = a * mu4**2
        mu_new = e.mu + (dt / 6.0) * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
        dlog = (dt / 6.0) * (e.mu + 2.0 * mu2 + 2.0 * mu3 + mu4)

    out = replace(e, t=e.t + dt, mu=float(mu_new),
                  log_omega=float(e.log_omega + dlog))
    if not np.isfinite(mu_new) or mu_new >= threshold:
        inv_old = 1.0 / e.mu
        inv_new = 0.0 if not np.isfinite(mu_new) else 1.0 / mu_new
        frac = (inv_old - 1.0 / threshold) / max(inv_old - inv_new, 1e-300)
        frac = min(max(frac, 0.0), 1.0)
        out.status = "blown_up"
        out.blowup_time_numeric = e.t + frac * dt
    return out


def run_to_blowup(mu0s, c0: float, t0: float = 0.0, dt: float = 1e-5,
                  threshold: float = BLOWUP_THRESHOLD,
                  guard: float = TSTAR_GUARD) -> np.ndarray:
    """Numeric blow-up times for a batch of elements (lockstep RK4).

    The crossing time within the final step is located by interpolating
    1/mu linearly, which is exact for the underlying dynamics.
    """
    mu0s = np.asarray(mu0s, dtype=np.float64)
    if np.any(mu0s <= 0.0):
        raise HypothesisViolation("all mu0 must be positive")
    if c0 <= 1.0:
        raise ContractViolation("numeric blow-up requires c0 > 1")
    a = c0 - 1.0
    tstar_max = t0 + 1.0 / (a * mu0s.min())
    max_steps = int(np.ceil((tstar_max - t0) / dt)) + 10

    mu = mu0s.copy()
    times = np.full(mu0s.shape, np.nan)
    active = np.ones(mu0s.shape, dtype=bool)
    t = t0
    for _ in range(max_steps):
        if not active.any():
            break
        m = mu[active]
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = a * m**2
            m2 = m + 0.5 * dt * k1
            k2 = a * m2**2
            m3 = m + 0.5 * dt * k2
            k3 = a * m3**2
            m4 = m + dt * k3
            k4 = a * m4**2
            m_new = m + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        crossed = ~np.isfinite(m_new) | (m_new >= threshold)
        if crossed.any():
            inv_old = 1.0 / m[crossed]
            with np.errstate(divide="ignore"):
                inv_new = np.where(np.isfinite(m_new[crossed]),
                                   1.0 / m_new[crossed], 0.0)
            frac = (inv_old - 1.0 / threshold) / np.maximum(inv_old - inv_new, 1e-300)
            frac = np.clip(frac, 0.0, 1.0)
            ids = np.flatnonzero(active)[crossed]
            times[ids] = t + frac * dt
        mu[active] = m_new
        still = np.flatnonzero(active)[~crossed]
        active[:] = False
        active[still] = True
        t += dt
    if np.isnan(times).any():
        raise NumericalFault("some elements failed to reach the blow-up threshold")
    return times


# -- ensemble predictions -------------------------------------------------------


@dataclass
class ElementVerdict:
    id: int
    mu0: float
    Tstar: float
    passes_filter: bool
    blowup_time_numeric: float | None


@dataclass
class BlowupReport:
    """Aggregated ensemble prediction record."""

    T1: float
    T0: float
    mu1_sup: float
    mu_beta: float
    filter_threshold: float
    elements: list[ElementVerdict]
    t0: float
    c0: float
    c: float
    varpi0: float
    v0: float
    beta_element_id: int
    singular: dict | None = None

    def to_json_dict(self) -> dict:
        out = {
            "T1": self.T1,
            "T0": self.T0,
            "mu1_sup": self.mu1_sup,
            "mu_beta": self.mu_beta,
            "filter_threshold": self.filter_threshold,
            "elements": [
                {
                    "id": e.id,
                    "mu0": e.mu0,
                    "Tstar": e.Tstar,
                    "passes_filter": bool(e.passes_filter),
                    "blowup_time_numeric": e.blowup_time_numeric,
                }
                for e in self.elements
            ],
            "t0": self.t0,
            "c0": self.c0,
            "c": self.c,
            "varpi0": self.varpi0,
            "v0": self.v0,
            "beta_element_id": self.beta_element_id,
        }
        if self.singular is not None:
            out["singular"] = self.singular
        return out

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def ensemble_predict(elements, c0: float | None = None, t0: float | None = None,
                     numeric_times=None) -> BlowupReport:
    """Blow-up interval, participation filter and witness element.

    T1 is the infimum of the closed-form per-element times; T0 follows from
    the discrete enstrophy functionals of the ensemble, with the mean-value
    stretching rate mu_beta = varpi0 * v0 locating the witness element. The
    claim T1 < T0 is asserted (it holds whenever c0 > 3).
    """
    elements = list(elements)
    if not elements:
        raise ContractViolation("empty ensemble")
    c0s = {e.c0 for e in elements}
    if len(c0s) != 1:
        raise ContractViolation(f"elements disagree on c0: {sorted(c0s)}")
    ec0 = c0s.pop()
    if c0 is not None and c0 != ec0:
        raise ContractViolation(f"requested c0={c0} but elements carry c0={ec0}")
    c0 = ec0
    if c0 <= 3.0:
        raise ConfigError(f"ensemble predictions require c0 > 3, got {c0!r}")
    t0s = {e.t0 for e in elements}
    if len(t0s) != 1:
        raise ContractViolation(f"elements disagree on t0: {sorted(t0s)}")
    et0 = t0s.pop()
    if t0 is not None and t0 != et0:
        raise ContractViolation(f"requested t0={t0} but elements carry t0={et0}")
    t0 = et0

    mu0 = np.array([e.mu0 for e in elements])
    w = np.array([e.weight for e in elements])
    om2 = np.array([e.omega0 for e in elements]) ** 2
    varpi0 = float(np.sum(w * om2))
    v0 = float(np.sum(w * mu0 * om2) / varpi0**2)
    c = c0 - 3.0
    mu_beta = c * varpi0 * v0 / (c0 - 3.0)  # == varpi0 * v0, kept explicit
    T0 = t0 + 1.0 / (c * varpi0 * v0)
    tstars = np.array([e.Tstar for e in elements])
    i_sup = int(np.argmin(tstars))
    T1 = float(tstars[i_sup])
    mu1_sup = float(mu0.max())
    if not T1 < T0:
        raise NumericalFault(
            f"ensemble inconsistency: T1={T1!r} is not below T0={T0!r}"
        )
    threshold = mu_beta * (c0 - 3.0) / (c0 - 1.0)
    beta_id = int(elements[int(np.argmin(np.abs(mu0 - mu_beta)))].id)

    if numeric_times is None:
        numeric = [e.blowup_time_numeric for e in elements]
    else:
        numeric = [float(x) if x is not None else None for x in numeric_times]

    rows = [
        ElementVerdict(
            id=int(e.id), mu0=float(e.mu0), Tstar=float(e.Tstar),
            passes_filter=bool(e.mu0 >= threshold),
            blowup_time_numeric=numeric[i],
        )
        for i, e in enumerate(elements)
    ]
    return BlowupReport(
        T1=T1, T0=float(T0), mu1_sup=mu1_sup, mu_beta=float(mu_beta),
        filter_threshold=float(threshold), elements=rows, t0=float(t0),
        c0=float(c0), c=float(c), varpi0=varpi0, v0=v0,
        beta_element_id=beta_id,
    )


def singular_point(elements, flow_map=None):
    """Space-time point (x1, T1) where the singular element lands.

    Requires a unique supremum of mu0 over the ensemble; ties make the
    landing point ill-defined and raise. The flow map defaults to the
    identity (pure-ODE mode); otherwise it is called as flow_map(alpha, T1).
    """
    elements = list(elements)
    mu0 = np.array([e.mu0 for e in elements])
    i = int(np.argmax(mu0))
    if np.count_nonzero(mu0 == mu0[i]) > 1:
        raise ContractViolation(
            "ambiguous singular point: the largest initial stretching rate "
            "must be attained by exactly one element"
        )
    T1 = float(elements[i].Tstar)
    alpha = np.asarray(elements[i].alpha, dtype=np.float64)
    x1 = alpha if flow_map is None else np.asarray(flow_map(alpha, T1), float)
    return x1, T1


def ensemble_sample_fields(elements, times) -> list[SampleFields]:
    """Closed-form material samples of the ensemble at the given times.

    All times must precede the earliest element blow-up.
    """
    elements = list(elements)
    times = np.asarray(times, dtype=np.float64)
    tstar_min = min(e.Tstar for e in elements)
    if np.any(times >= tstar_min):
        raise ContractViolation(
            f"samples must precede the first blow-up time {tstar_min:.6g}"
        )
    m = len(elements)
    mu0 = np.array([e.mu0 for e in elements])
    om0 = np.array([e.omega0 for e in elements])
    c0 = elements[0].c0
    t0 = elements[0].t0
    w = np.array([e.weight for e in elements])
    out = []
    for t in times:
        tau = t - t0
        mu = closed_form_mu(mu0, c0, tau)
        om = closed_form_omega_mag(om0, mu0, c0, tau)
        wv = np.zeros((m, 3))
        wv[:, 0] = om
        sw = np.zeros((m, 3))
        sw[:, 0] = mu * om
        pw = np.zeros((m, 3))
        pw[:, 0] = -c0 * mu**2 * om
        out.append(SampleFields(float(t), wv, sw, pw, w.copy(), mu.copy()))
    return out


# -- ensemble file format ---------------------------------------------------------


def load_ensemble(path, c0: float, t0: float = 0.0) -> list[FluidElement]:
    """Read an ensemble spec file: a JSON list of {mu0, position, omega0}.

    A top-level object {"elements": [...]} is accepted too. Optional keys
    per entry: id, weight.
    """
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("elements")
    if not isinstance(data, list) or not data:
        raise ConfigError(f"ensemble file {path} holds no element list")
    elements = []
    for i, row in enumerate(data):
        try:
            elements.append(
                FluidElement(
                    mu0=float(row["mu0"]),
                    c0=float(c0),
                    id=int(row.get("id", i)),
                    alpha=row.get("position", (0.0, 0.0, 0.0)),
                    omega0=float(row.get("omega0", 1.0)),
                    weight=float(row.get("weight", 1.0)),
                    t0=float(t0),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"ensemble file {path}, entry {i}: {exc}") from exc
    return elements


# -- vortex-tube scenario ----------------------------------------------------------


@dataclass
class TubeReport:
    """Time history and conservation audit of the vortex-tube scenario."""

    t: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    c: np.ndarray
    lam: np.ndarray
    c_initial: np.ndarray
    alignment_breaking: float
    max_abs_c1: float
    rel_drift_c2: float
    rel_drift_c3: float
    omega_a_identity_residual_max: float
    omega_a_monotone: bool

    def to_json_dict(self) -> dict:
        return {
            "alignment_breaking": self.alignment_breaking,
            "c_initial": [float(x) for x in self.c_initial],
            "max_abs_c1": self.max_abs_c1,
            "rel_drift_c2": self.rel_drift_c2,
            "rel_drift_c3": self.rel_drift_c3,
            "omega_a_identity_residual_max": self.omega_a_identity_residual_max,
            "omega_a_monotone": bool(self.omega_a_monotone),
            "t_end": float(self.t[-1]),
            "samples": int(self.t.size),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["t", "omega_a", "omega_b", "omega_c", "mu_a", "mu_b", "mu_c",
                 "c1", "c2", "c3", "lam"]
            )
            for i in range(self.t.size):
                writer.writerow(
                    [repr(float(x)) for x in
                     (self.t[i], *self.omega[i], *self.mu[i], *self.c[i], self.lam[i])]
                )


def _tube_rhs(y: np.ndarray, eps: float) -> np.ndarray:
    om = y[:3]
    mu = y[3:]
    lam = np.sum(mu**2) / 3.0
    d = np.array([1.0, 0.0, -1.0])
    dmu = lam - eps * d - mu**2
    dom = mu * om
    return np.concatenate([dom, dmu])


def vortex_tube_scenario(mu_a0: float, mu_b0: float, mu_c0: float, omega0,
                         t_end: float = 2.0, dt: float = 1e-3,
                         alignment_breaking: float = 0.0,
                         sample_every: int = 1) -> TubeReport:
    """Evolve the tube configuration in the strain principal frame.

    Requires mu_b0 == mu_c0 < 0 < mu_a0 with zero trace. Under exact
    alignment (alignment_breaking == 0) the three components of
    omega x (S omega) are conserved; a nonzero tilt injects a
    omega x (P omega) forcing and the invariants drift.
    """
    if not (mu_b0 == mu_c0 < 0.0 < mu_a0):
        raise ConfigError(
            "tube scenario needs mu_b0 == mu_c0 < 0 < mu_a0, got "
            f"({mu_a0!r}, {mu_b0!r}, {mu_c0!r})"
        )
    if abs(mu_a0 + mu_b0 + mu_c0) > 1e-12 * max(abs(mu_a0), 1.0):
        raise ConfigError("tube scenario requires zero trace: mu_a0 + mu_b0 + mu_c0 = 0")
    omega0 = np.asarray(omega0, dtype=np.float64).reshape(3)
    if omega0[2] == 0.0:
        raise ConfigError("tube scenario needs omega_c != 0 for the reconstruction identity")
    if not np.isfinite(t_end) or t_end <= 0 or dt <= 0:
        raise ConfigError("tube scenario needs positive t_end and dt")

    n_steps = int(round(t_end / dt))
    y = np.concatenate([omega0, [mu_a0, mu_b0, mu_c0]])
    eps = float(alignment_breaking)

    ts, oms, mus = [0.0], [y[:3].copy()], [y[3:].copy()]
    for k in range(1, n_steps + 1):
        k1 = _tube_rhs(y, eps)
        k2 = _tube_rhs(y + 0.5 * dt * k1, eps)
        k3 = _tube_rhs(y + 0.5 * dt * k2, eps)
        k4 = _tube_rhs(y + dt * k3, eps)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(y).all():
            raise NumericalFault(f"tube scenario lost finiteness at t={k * dt:.6g}")
        if k % sample_every == 0:
            ts.append(k * dt)
            oms.append(y[:3].copy())
            mus.append(y[3:].copy())

    t = np.array(ts)
    om = np.array(oms)
    mu = np.array(mus)
    c = np.stack(
        [
            om[:, 2] * om[:, 1] * (mu[:, 2] - mu[:, 1]),
            om[:, 0] * om[:, 2] * (mu[:, 0] - mu[:, 2]),
            om[:, 1] * om[:, 0] * (mu[:, 1] - mu[:, 0]),
        ],
        axis=1,
    )
    lam = np.sum(mu**2, axis=1) / 3.0
    c0v = c[0]

    def rel_drift(i):
        return float(np.abs(c[:, i] - c0v[i]).max() / abs(c0v[i]))

    recon = c[:, 1] / (om[:, 2] * (mu[:, 0] + np.abs(mu[:, 2])))
    resid = float(np.abs(om[:, 0] - recon).max() / np.abs(om[:, 0]).max())
    return TubeReport(
        t=t, omega=om, mu=mu, c=c, lam=lam, c_initial=c0v,
        alignment_breaking=eps,
        max_abs_c1=float(np.abs(c[:, 0]).max()),
        rel_drift_c2=rel_drift(1),
        rel_drift_c3=rel_drift(2),
        omega_a_identity_residual_max=resid,
        omega_a_monotone=bool(np.all(np.diff(om[:, 0]) >= -1e-12)),
    )
