"""Enstrophy functionals, inequality checks and blow-up monitors.

Works on any material sample of the vorticity dynamics: the whole periodic
box (grid quadrature), a probe cloud (Monte Carlo quadrature with
volume-preserving weights) or a synthetic ensemble. Each sample reduces to

    varpi    = integral |omega|**2             (enstrophy; must stay > 0)
    v        = varpi**-2 * integral omega . (D omega/Dt)
    v'       = direct formula from |D omega/Dt|**2 and omega . D2 omega/Dt2,
               cross-checked against a finite difference of v

with D omega/Dt realized as S omega and D2 omega/Dt2 as -P omega inside the
integrals. The Cauchy-Schwarz bound v * varpi**(3/2) <= ||D omega/Dt|| is
asserted on every sample: it holds for any valid data, so a violation is
reported as a quadrature bug, never tuned away.

Pointwise monitors gate the aligned eigenvalues on the alignment residual:
lam = -(omega . P omega)/|omega|**2 counts only where the hessian alignment
residual is at or below eps_align, mirroring how mu is read from the strain.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .eigenframe import symmetric_eigenvalues_field
from .errors import ConfigError, ContractViolation, HypothesisViolation, QuadratureBug
from .spectral import to_physical

#: Constant combining the squared-derivative terms in the lower bound;
#: fixed by the Cauchy-Schwarz step, implemented exactly as printed.
C1_LOWER_BOUND = 3.0

ENSTROPHY_FLOOR = 1e-14

SERIES_CSV_COLUMNS = (
    "t,enstrophy,phi_n,v_eq23,v_eq22,vprime_fd,vprime_eq24,dwdt_l2,"
    "eq25_lhs,eq25_rhs,eq26_lhs,eq26_rhs,thm21_fraction,thm21_margin_min"
)

MONITOR_JSON_KEYS = (
    "condition", "t0", "c0", "c", "varpi0", "v0", "T0", "A", "B",
    "applicable", "satisfied_fraction_min",
)


@dataclass
class SampleFields:
    """One material sample: vorticity and its first two stretching products.

    w, sw, pw: (m, 3) values of omega, S omega, P omega at the sample
    points; weights: (m,) quadrature weights; mu_m: (m,) largest absolute
    strain eigenvalue per point (NaN where unknown).
    """

    t: float
    w: np.ndarray
    sw: np.ndarray
    pw: np.ndarray
    weights: np.ndarray
    mu_m: np.ndarray | None = None


def sample_fields_from_state(state) -> SampleFields:
    """Flatten a flow state into a whole-box material sample."""
    grid = state.grid
    w = to_physical(state.vorticity())._phys.reshape(3, -1).T
    S = state.strain()
    P = state.pressure_hessian()
    wf = w.T.reshape(3, grid.n, grid.n, grid.n)
    sw = S.apply(wf).reshape(3, -1).T
    pw = P.apply(wf).reshape(3, -1).T
    eigs = symmetric_eigenvalues_field(S.phys6)
    mu_m = np.abs(eigs).max(axis=0).ravel()
    weights = np.full(w.shape[0], grid.dx**3)
    return SampleFields(state.t, w, sw, pw, weights, mu_m)


def sample_fields_from_probes(probes, k: int) -> SampleFields:
    """Material sample from the probe cloud at sample index k."""
    rec = probes._rec
    w = np.asarray(rec["w"][k])
    sw = np.asarray(rec["sw"][k])
    pw = np.asarray(rec["pw"][k])
    mu_m = np.abs(np.asarray(rec["s_eigs"][k])).max(axis=1)
    weights = np.full(w.shape[0], probes.weight)
    return SampleFields(probes.times[k], w, sw, pw, weights, mu_m)


@dataclass
class _Reduction:
    t: float
    varpi: float
    int_w_sw: float
    int_sw2: float
    int_w_pw: float
    fraction21: float
    fraction22: float
    margin_min: float
    margin_mean: float
    ratio21_min: float
    ratio22_min: float
    ratio22_max: float


def _reduce(sf: SampleFields, eps_align: float) -> _Reduction:
    w, sw, pw, wt = sf.w, sf.sw, sf.pw, sf.weights
    w2 = (w * w).sum(axis=1)
    varpi = float(np.sum(wt * w2))
    if varpi < ENSTROPHY_FLOOR:
        raise HypothesisViolation(
            f"enstrophy underflow at t={sf.t:.6g}: {varpi:.3e} < {ENSTROPHY_FLOOR:g}; "
            "the functionals require a nonvanishing vorticity field"
        )
    int_w_sw = float(np.sum(wt * (w * sw).sum(axis=1)))
    int_sw2 = float(np.sum(wt * (sw * sw).sum(axis=1)))
    int_w_pw = float(np.sum(wt * (w * pw).sum(axis=1)))

    live = w2 > 0.0
    safe_w2 = np.where(live, w2, 1.0)
    ray_p = (w * pw).sum(axis=1) / safe_w2
    ray_s = (w * sw).sum(axis=1) / safe_w2
    lam = -ray_p

    def resid(mv, ray):
        num = np.linalg.norm(mv - ray[:, None] * w, axis=1)
        den = np.linalg.norm(mv, axis=1)
        return np.where(den > 0.0, num / np.where(den > 0, den, 1.0), 0.0)

    res_p = resid(pw, ray_p)
    res_s = resid(sw, ray_s)
    ok_p = live & (res_p <= eps_align)
    ok_both = ok_p & (res_s <= eps_align)

    mu_m = sf.mu_m if sf.mu_m is not None else np.full(w.shape[0], np.nan)
    margin = lam - 3.0 * mu_m**2
    sat = ok_p & (margin > 0.0)
    m_total = w.shape[0]
    fraction21 = float(np.count_nonzero(sat) / m_total)
    fraction22 = float(np.count_nonzero(ok_both) / m_total)
    margin_min = float(margin[ok_p].min()) if ok_p.any() else np.nan
    margin_mean = float(margin[ok_p].mean()) if ok_p.any() else np.nan

    with np.errstate(divide="ignore", invalid="ignore"):
        r21 = np.where(mu_m > 0.0, lam / mu_m**2 - 3.0, np.inf)
    r21 = r21[ok_p]
    ratio21_min = float(r21.min()) if r21.size else np.nan

    sel22 = ok_both & (ray_s > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r22 = lam[sel22] / ray_s[sel22] ** 2
    ratio22_min = float(r22.min()) if r22.size else np.nan
    ratio22_max = float(r22.max()) if r22.size else np.nan

    return _Reduction(sf.t, varpi, int_w_sw, int_sw2, int_w_pw, fraction21,
                      fraction22, margin_min, margin_mean, ratio21_min,
                      ratio22_min, ratio22_max)


def _lagrange_derivative(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order derivative of a sampled series (3-point stencils).

    Centered in the interior, one-sided at the ends.
    """
    T = t.size
    out = np.empty_like(f)
    for i in range(T):
        a = min(max(i - 1, 0), T - 3)
        ta, tb, tc = t[a], t[a + 1], t[a + 2]
        fa, fb, fc = f[a], f[a + 1], f[a + 2]
        ti = t[i]
        out[i] = (
            fa * (2 * ti - tb - tc) / ((ta - tb) * (ta - tc))
            + fb * (2 * ti - ta - tc) / ((tb - ta) * (tb - tc))
            + fc * (2 * ti - ta - tb) / ((tc - ta) * (tc - tb))
        )
    return out


@dataclass
class FunctionalSeries:
    """Per-sample functional values plus pointwise monitor summaries."""

    t: np.ndarray
    enstrophy: np.ndarray
    phi_n: np.ndarray
    v_eq23: np.ndarray
    v_eq22: np.ndarray
    vprime_fd: np.ndarray
    vprime_eq24: np.ndarray
    dwdt_l2: np.ndarray
    eq25_lhs: np.ndarray
    eq25_rhs: np.ndarray
    eq26_lhs: np.ndarray
    eq26_rhs: np.ndarray
    thm21_fraction: np.ndarray
    thm21_margin_min: np.ndarray
    n: int
    eps_align: float
    region: str
    extras: dict = field(repr=False, default_factory=dict)

    def __len__(self):
        return self.t.size

    def to_csv(self, path) -> None:
        cols = SERIES_CSV_COLUMNS.split(",")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for i in range(len(self)):
                writer.writerow([repr(float(getattr(self, c)[i])) for c in cols])


class FunctionalAccumulator:
    """Streaming builder for a FunctionalSeries (one sample at a time)."""

    def __init__(self, n: int = 1, eps_align: float = 1e-3, region: str = "whole_box"):
        if int(n) != n or n < 1:
            raise ConfigError(f"the enstrophy root exponent must be a positive integer, got {n!r}")
        self.n = int(n)
        self.eps_align = float(eps_align)
        self.region = region
        self._red: list[_Reduction] = []

    def add(self, sf: SampleFields) -> None:
        self._red.append(_reduce(sf, self.eps_align))

    def add_state(self, state) -> None:
        self.add(sample_fields_from_state(state))

    def series(self) -> FunctionalSeries:
        if len(self._red) < 3:
            raise ContractViolation(
                f"need at least 3 sample times, got {len(self._red)}"
            )
        r = self._red
        t = np.array([x.t for x in r])
        if np.any(np.diff(t) <= 0):
            raise ContractViolation("sample times must be strictly increasing")
        varpi = np.array([x.varpi for x in r])
        int_w_sw = np.array([x.int_w_sw for x in r])
        int_sw2 = np.array([x.int_sw2 for x in r])
        int_w_pw = np.array([x.int_w_pw for x in r])

        phi1 = 1.0 / (2.0 * varpi)
        phi_n = 1.0 / (2.0 * varpi ** (1.0 / self.n))
        v23 = int_w_sw / varpi**2
        v22 = -_lagrange_derivative(t, phi1)
        vprime_fd = _lagrange_derivative(t, v23)
        vprime24 = ((int_sw2 - int_w_pw) * varpi - 4.0 * int_w_sw**2) / varpi**3
        dwdt = np.sqrt(int_sw2)
        eq25_lhs = v23 * varpi**1.5
        eq25_rhs = dwdt
        eq26_lhs = vprime24 * varpi**2
        eq26_rhs = -int_w_pw - C1_LOWER_BOUND * int_sw2

        series = FunctionalSeries(
            t=t, enstrophy=varpi, phi_n=phi_n, v_eq23=v23, v_eq22=v22,
            vprime_fd=vprime_fd, vprime_eq24=vprime24, dwdt_l2=dwdt,
            eq25_lhs=eq25_lhs, eq25_rhs=eq25_rhs, eq26_lhs=eq26_lhs,
            eq26_rhs=eq26_rhs,
            thm21_fraction=np.array([x.fraction21 for x in r]),
            thm21_margin_min=np.array([x.margin_min for x in r]),
            n=self.n, eps_align=self.eps_align, region=self.region,
            extras={
                "fraction22": np.array([x.fraction22 for x in r]),
                "margin_mean": np.array([x.margin_mean for x in r]),
                "ratio21_min": np.array([x.ratio21_min for x in r]),
                "ratio22_min": np.array([x.ratio22_min for x in r]),
                "ratio22_max": np.array([x.ratio22_max for x in r]),
            },
        )
        _assert_cauchy_schwarz(series)
        return series


def _assert_cauchy_schwarz(series: FunctionalSeries) -> None:
    scale25 = np.maximum(np.abs(series.eq25_rhs), 1.0)
    bad = series.eq25_lhs - series.eq25_rhs > 1e-12 * scale25
    if bad.any():
        i = int(np.argmax(bad))
        raise QuadratureBug(
            f"Cauchy-Schwarz bound violated at t={series.t[i]:.6g}: "
            f"lhs={series.eq25_lhs[i]:.15e} > rhs={series.eq25_rhs[i]:.15e}; "
            "this cannot happen for valid data and indicates a quadrature bug"
        )
    scale26 = np.maximum(np.maximum(np.abs(series.eq26_lhs), np.abs(series.eq26_rhs)), 1.0)
    bad = series.eq26_rhs - series.eq26_lhs > 1e-12 * scale26
    if bad.any():
        i = int(np.argmax(bad))
        raise QuadratureBug(
            f"lower-bound inequality violated at t={series.t[i]:.6g} with the "
            "direct v' estimator; this cannot happen for valid data"
        )


def enstrophy_functionals(source, region: str = "whole_box", n: int = 1,
                          eps_align: float = 1e-3) -> FunctionalSeries:
    """FunctionalSeries from states, probes or raw SampleFields.

    region must be "whole_box" for a list of flow states and "probe_volume"
    for a ProbeSet; raw SampleFields accept either label.
    """
    if region not in ("whole_box", "probe_volume"):
        raise ConfigError(f"unknown region {region!r}")
    acc = FunctionalAccumulator(n=n, eps_align=eps_align, region=region)
    samples = _iter_samples(source, region)
    for sf in samples:
        acc.add(sf)
    return acc.series()


def _iter_samples(source, region: str):
    from .probes import ProbeSet

    if isinstance(source, FunctionalSeries):
        raise ContractViolation("source is already a FunctionalSeries")
    if isinstance(source, ProbeSet):
        if region != "probe_volume":
            raise ConfigError("a ProbeSet source requires region='probe_volume'")
        return [sample_fields_from_probes(source, k) for k in range(source.n_samples)]
    source = list(source)
    if not source:
        raise ContractViolation("empty source")
    if isinstance(source[0], SampleFields):
        return source
    if region != "whole_box":
        raise ConfigError("a state-list source requires region='whole_box'")
    return [sample_fields_from_state(s) for s in source]


# -- inequality checks ---------------------------------------------------------


@dataclass
class Lemma20Report:
    """Per-sample margins of the two integral inequalities."""

    t: np.ndarray
    eq25_margin: np.ndarray
    eq25_ok: np.ndarray
    eq26_margin_eq24: np.ndarray
    eq26_ok_eq24: np.ndarray
    eq26_margin_fd: np.ndarray
    eq26_ok_fd: np.ndarray


def lemma20_check(series: FunctionalSeries) -> Lemma20Report:
    """Evaluate both integral inequalities on every sample.

    The Cauchy-Schwarz bound is a hard invariant (violations raise); the
    lower bound is evaluated with both v' estimators, and only the direct
    estimator is binding (the finite-difference one carries truncation
    error and is logged for comparison).
    """
    _assert_cauchy_schwarz(series)
    m25 = series.eq25_rhs - series.eq25_lhs
    m26 = series.eq26_lhs - series.eq26_rhs
    lhs_fd = series.vprime_fd * series.enstrophy**2
    m26_fd = lhs_fd - series.eq26_rhs
    return Lemma20Report(
        t=series.t.copy(),
        eq25_margin=m25, eq25_ok=m25 >= -1e-12 * np.maximum(np.abs(series.eq25_rhs), 1.0),
        eq26_margin_eq24=m26, eq26_ok_eq24=m26 >= -1e-12 * np.maximum(np.abs(series.eq26_rhs), 1.0),
        eq26_margin_fd=m26_fd, eq26_ok_fd=m26_fd >= 0,
    )


# -- monitors -------------------------------------------------------------------


@dataclass
class MonitorVerdict:
    """Outcome of a pointwise blow-up condition over a time window.

    When the condition holds on the full sample fraction and v0 > 0, the
    verdict carries the predicted critical time T0 and the constants A, B
    of the lower-bound curves v(t) >= A/(T0-t), ||D omega/Dt|| >= B/(T0-t).
    """

    condition: str
    t0: float
    c0: float | None
    c: float | None
    varpi0: float
    v0: float
    T0: float | None
    A: float | None
    B: float | None
    applicable: bool
    satisfied_fraction_min: float
    margin_min: float = np.nan
    margin_mean: float = np.nan
    deviation_max: float = np.nan
    eps_align: float = np.nan
    applicable_relaxed: bool = False
    reason: str = ""

    def to_json_dict(self) -> dict:
        def _num(x):
            if x is None:
                return None
            x = float(x)
            return None if np.isnan(x) else x

        return {
            "condition": self.condition,
            "t0": _num(self.t0),
            "c0": _num(self.c0),
            "c": _num(self.c),
            "varpi0": _num(self.varpi0),
            "v0": _num(self.v0),
            "T0": _num(self.T0),
            "A": _num(self.A),
            "B": _num(self.B),
            "applicable": bool(self.applicable),
            "satisfied_fraction_min": _num(self.satisfied_fraction_min),
        }

    def save_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")


def _ensure_series(source, eps_align: float, region: str) -> FunctionalSeries:
    if isinstance(source, FunctionalSeries):
        return source
    return enstrophy_functionals(source, region=region, eps_align=eps_align)


def _window(series: FunctionalSeries, t0: float | None):
    if t0 is None:
        idx = np.arange(len(series))
    else:
        idx = np.flatnonzero(series.t >= t0 - 1e-12)
    if idx.size == 0:
        raise ContractViolation(f"no samples at or after t0={t0!r}")
    return idx


def theorem21_monitor(source, t0: float | None = None, eps_align: float = 1e-3,
                      c: float | None = None,
                      region: str = "whole_box") -> MonitorVerdict:
    """Monitor the hessian-dominance condition lam > 3 mu_m**2.

    lam is the negated hessian Rayleigh quotient, accepted pointwise only
    where the alignment residual is at most eps_align. If the condition
    holds on the whole sample over the window and v0 > 0, the growth
    inequality v' >= c varpi0 v**2 integrates to the critical time
    T0 = t0 + 1/(c varpi0 v0) and the bound-curve constants A and B.
    The rate constant c is inferred from the worst pointwise margin (capped
    at 1) unless given explicitly.
    """
    series = _ensure_series(source, eps_align, region)
    idx = _window(series, t0)
    i0 = idx[0]
    t0v = float(series.t[i0])
    varpi0 = float(series.enstrophy[i0])
    v0 = float(series.v_eq23[i0])
    frac_min = float(series.thm21_fraction[idx].min())
    margins = series.thm21_margin_min[idx]
    margin_min = float(np.nanmin(margins)) if np.isfinite(margins).any() else np.nan
    margin_mean = float(np.nanmean(series.extras["margin_mean"][idx])) \
        if np.isfinite(series.extras["margin_mean"][idx]).any() else np.nan

    verdict = MonitorVerdict(
        condition="theorem21", t0=t0v, c0=None, c=None, varpi0=varpi0, v0=v0,
        T0=None, A=None, B=None, applicable=False,
        satisfied_fraction_min=frac_min, margin_min=margin_min,
        margin_mean=margin_mean, eps_align=series.eps_align,
        applicable_relaxed=(frac_min >= 0.99),
    )
    if v0 <= 0.0:
        verdict.reason = "hypotheses not met at t0: v0 <= 0"
        return verdict
    if frac_min < 1.0:
        verdict.reason = (
            f"condition not met: satisfied fraction {frac_min:.6f} < 1 on the window"
        )
        return verdict
    if c is None:
        ratios = series.extras["ratio21_min"][idx]
        c_raw = float(np.nanmin(ratios)) if np.isfinite(ratios).any() else np.inf
        c = min(1.0, c_raw)
    if not np.isfinite(c) or c <= 0.0:
        verdict.reason = f"no positive rate constant available (c={c!r})"
        return verdict
    verdict.c = float(c)
    verdict.T0 = t0v + 1.0 / (c * varpi0 * v0)
    verdict.A = 1.0 / (c * varpi0)
    verdict.B = np.sqrt(varpi0) / c
    verdict.applicable = True
    return verdict


def theorem22_monitor(source, t0: float | None = None, c0: float = 4.0,
                      eps_align: float = 1e-3,
                      region: str = "whole_box") -> MonitorVerdict:
    """Monitor the proportional double-alignment condition lam = c0 mu**2.

    Requires c0 > 3. The pointwise proportionality is verified where both
    alignments hold within eps_align (largest relative deviation logged);
    the critical time follows with rate constant c = c0 - 3.
    """
    if not np.isfinite(c0) or c0 <= 3.0:
        raise ConfigError(
            f"the proportional-alignment monitor requires c0 > 3, got {c0!r}"
        )
    series = _ensure_series(source, eps_align, region)
    idx = _window(series, t0)
    i0 = idx[0]
    t0v = float(series.t[i0])
    varpi0 = float(series.enstrophy[i0])
    v0 = float(series.v_eq23[i0])
    frac_min = float(series.extras["fraction22"][idx].min())
    rmin = series.extras["ratio22_min"][idx]
    rmax = series.extras["ratio22_max"][idx]
    if np.isfinite(rmin).any():
        dev = max(abs(np.nanmin(rmin) / c0 - 1.0), abs(np.nanmax(rmax) / c0 - 1.0))
    else:
        dev = np.nan
    c = c0 - 3.0
    verdict = MonitorVerdict(
        condition="theorem22", t0=t0v, c0=float(c0), c=float(c), varpi0=varpi0,
        v0=v0, T0=None, A=None, B=None, applicable=False,
        satisfied_fraction_min=frac_min, deviation_max=float(dev) if dev == dev else np.nan,
        eps_align=series.eps_align, applicable_relaxed=(frac_min >= 0.99),
    )
    if v0 <= 0.0:
        verdict.reason = "hypotheses not met at t0: v0 <= 0"
        return verdict
    if frac_min < 1.0:
        verdict.reason = (
            f"condition not met: double-alignment fraction {frac_min:.6f} < 1"
        )
        return verdict
    verdict.T0 = t0v + 1.0 / (c * varpi0 * v0)
    verdict.A = 1.0 / (c * varpi0)
    verdict.B = np.sqrt(varpi0) / c
    verdict.applicable = True
    return verdict


def bound_curves(verdict: MonitorVerdict, times) -> tuple[np.ndarray, np.ndarray]:
    """Lower-bound curves A/(T0-t) and B/(T0-t) for times before T0."""
    if not verdict.applicable:
        raise ContractViolation("verdict is not applicable; no bound curves")
    t = np.asarray(times, dtype=np.float64)
    if np.any(t >= verdict.T0):
        raise ContractViolation("bound curves are defined for t < T0 only")
    denom = verdict.T0 - t
    return verdict.A / denom, verdict.B / denom
