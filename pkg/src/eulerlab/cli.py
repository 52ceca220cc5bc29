"""Command-line runner: configuration, orchestration, artifact emission.

Three run modes plus a validator:

  simulate  pseudo-spectral flow with probe diagnostics, functional series
            and blow-up monitors
  odemodel  reduced element-ODE ensemble with blow-up predictions
  tube      vortex-tube invariant scenario
  validate  check a configuration and list every violation at once

Every run writes its artifacts (plain CSV/JSON, plus the binary field
snapshot on request) into a single output directory together with a
manifest recording the config echo, versions, wall time and checksums.
Reruns with the same config and seed produce byte-identical data files;
the manifest is the one file that may differ (it records wall time).

Exit codes: 0 success, 2 config error, 3 numerical fault, 4 hypothesis
violation (the data fails a precondition of the blow-up theory).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import __version__
from .dynamics import FlowState, cfl_limit, init_flow, save_snapshot
from .errors import (
    ConfigError,
    ContractViolation,
    EulerLabError,
    HypothesisViolation,
    NumericalFault,
)
from .functionals import (
    FunctionalAccumulator,
    enstrophy_functionals,
    theorem21_monitor,
    theorem22_monitor,
)
from .odemodel import (
    ensemble_predict,
    load_ensemble,
    run_to_blowup,
    singular_point,
    vortex_tube_scenario,
)
from .probes import export_trajectories_csv, seed_probes, simulate_with_probes
from .spectral import Grid

OUTPUT_ROOT_ENV = "EULERLAB_OUTPUT_ROOT"

MODES = ("simulate", "odemodel", "tube")
REGIONS = ("whole_box", "probe_volume")
INTERPS = ("spectral", "refined_trilinear")
PRESET_NAMES = ("taylor_green", "abc", "random_solenoidal")


@dataclass
class RunConfig:
    """Flat run configuration; field names mirror the CLI flags (kebab-case)."""

    mode: str = ""
    # simulate
    n: int = 32
    preset: str = "taylor_green"
    preset_params: dict = field(default_factory=dict)
    dt: float | None = None
    cfl: float = 0.5
    t_end: float = 0.5
    sample_interval: float | None = None
    probes: str = "uniform:2"
    region: str = "whole_box"
    phi_n: int = 1
    c0: float | None = None
    eps_align: float = 1e-3
    interp: str = "spectral"
    save_final_state: bool = False
    # odemodel
    ensemble: str | None = None
    t0: float = 0.0
    ode_dt: float = 1e-5
    # tube
    mu_a0: float = 1.0
    omega0: tuple = (1.0, 1.0, 1.0)
    alignment_breaking: float = 0.0
    tube_dt: float = 1e-3
    # common
    outdir: str | None = None
    seed: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["omega0"] = list(self.omega0)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(d)
        if "omega0" in kwargs and kwargs["omega0"] is not None:
            kwargs["omega0"] = tuple(float(x) for x in kwargs["omega0"])
        if "preset_params" in kwargs and kwargs["preset_params"] is None:
            kwargs["preset_params"] = {}
        return cls(**kwargs)


def serialize(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=True)


def parse_config(text: str) -> RunConfig:
    data = json.loads(text)
    # accept a manifest as a config source: reruns from the manifest alone
    if isinstance(data, dict) and "config" in data and "outputs" in data:
        data = data["config"]
    return RunConfig.from_dict(data)


# -- validation ---------------------------------------------------------------


def validate(config: RunConfig) -> list[str]:
    """Collect every configuration violation (empty list means valid)."""
    issues: list[str] = []

    def need(cond, msg):
        if not cond:
            issues.append(msg)

    need(config.mode in MODES, f"mode must be one of {MODES}, got {config.mode!r}")
    need(isinstance(config.seed, int) and config.seed >= 0,
         f"seed must be a nonnegative integer, got {config.seed!r}")

    if config.mode == "simulate" or config.mode == "":
        n = config.n
        need(isinstance(n, int) and n >= 16 and (n & (n - 1)) == 0,
             f"n must be a power of two >= 16, got {n!r}")
        need(config.preset in PRESET_NAMES,
             f"preset must be one of {PRESET_NAMES}, got {config.preset!r}")
        need(config.t_end > 0, f"t_end must be positive, got {config.t_end!r}")
        need(config.dt is None or config.dt > 0,
             f"dt must be positive, got {config.dt!r}")
        need(0 < config.cfl <= 1.0, f"cfl must lie in (0, 1], got {config.cfl!r}")
        need(config.sample_interval is None
             or 0 < config.sample_interval <= config.t_end,
             f"sample_interval must lie in (0, t_end], got {config.sample_interval!r}")
        need(config.region in REGIONS,
             f"region must be one of {REGIONS}, got {config.region!r}")
        need(config.interp in INTERPS,
             f"interp must be one of {INTERPS}, got {config.interp!r}")
        need(isinstance(config.phi_n, int) and config.phi_n >= 1,
             f"phi_n must be a positive integer, got {config.phi_n!r}")
        need(config.eps_align > 0,
             f"eps_align must be positive, got {config.eps_align!r}")
        if config.probes != "none":
            try:
                _parse_probe_spec(config.probes, config.seed)
            except ConfigError as exc:
                issues.append(str(exc))
        elif config.region == "probe_volume":
            issues.append("region probe_volume requires probes")
        if config.c0 is not None:
            need(config.c0 > 3,
                 f"the proportional-alignment monitor requires c0 > 3, got {config.c0!r}")
    if config.mode == "odemodel":
        need(config.ensemble, "odemodel requires an ensemble file (--ensemble)")
        need(config.c0 is not None and config.c0 > 3,
             f"odemodel requires c0 > 3, got {config.c0!r}")
        need(config.ode_dt > 0, f"ode_dt must be positive, got {config.ode_dt!r}")
    if config.mode == "tube":
        need(config.mu_a0 > 0, f"mu_a0 must be positive, got {config.mu_a0!r}")
        need(len(config.omega0) == 3, "omega0 must have three components")
        need(config.omega0[2] != 0, "omega0 third component must be nonzero")
        need(config.t_end > 0, f"t_end must be positive, got {config.t_end!r}")
        need(config.tube_dt > 0, f"tube_dt must be positive, got {config.tube_dt!r}")
    return issues


def _parse_probe_spec(spec: str, seed: int):
    """Parse 'uniform:M', 'random:COUNT[:SEED]' or a JSON positions file."""
    if spec.startswith("uniform:"):
        try:
            m = int(spec.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad probe spec {spec!r}") from None
        if m < 1:
            raise ConfigError(f"probe spec {spec!r} needs m >= 1")
        return {"uniform": m}
    if spec.startswith("random:"):
        parts = spec.split(":")
        try:
            count = int(parts[1])
            pseed = int(parts[2]) if len(parts) > 2 else seed
        except (ValueError, IndexError):
            raise ConfigError(f"bad probe spec {spec!r}") from None
        if count < 1:
            raise ConfigError(f"probe spec {spec!r} needs count >= 1")
        return {"random": count, "seed": pseed}
    if os.path.exists(spec):
        with open(spec) as fh:
            pos = json.load(fh)
        return np.asarray(pos, dtype=float)
    raise ConfigError(
        f"probe spec {spec!r} is neither uniform:M, random:COUNT[:SEED] nor a file"
    )


# -- artifact helpers -----------------------------------------------------------


def _resolve_outdir(config: RunConfig) -> str:
    if config.outdir:
        out = config.outdir
    else:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        out = os.path.join(root, config.mode)
    os.makedirs(out, exist_ok=True)
    return out


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: str, config: RunConfig, outputs: list[str],
                    wall: float) -> str:
    manifest = {
        "config": config.to_dict(),
        "versions": {
            "eulerlab": __version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "wall_time_s": wall,
        "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# -- run modes --------------------------------------------------------------------


def _run_simulate(config: RunConfig, outdir: str) -> list[str]:
    grid = Grid(config.n)
    params = dict(config.preset_params)
    if config.preset == "random_solenoidal":
        params.setdefault("seed", config.seed)
    state = init_flow(config.preset, grid, params)

    sample_interval = config.sample_interval or config.t_end / 50.0
    dt = config.dt
    if dt is None:
        dt = 0.9 * cfl_limit(state, config.cfl)
    steps_per_sample = max(1, int(np.ceil(sample_interval / dt - 1e-12)))
    dt = sample_interval / steps_per_sample
    n_samples = max(3, int(round(config.t_end / sample_interval)))
    n_steps = n_samples * steps_per_sample

    probes = None
    if config.probes != "none":
        probes = seed_probes(grid, _parse_probe_spec(config.probes, config.seed))

    acc = None
    if config.region == "whole_box":
        acc = FunctionalAccumulator(n=config.phi_n, eps_align=config.eps_align,
                                    region="whole_box")

    current = state

    def on_sample(s):
        nonlocal current
        current = s
        if acc is not None:
            acc.add_state(s)

    try:
        final = simulate_with_probes(
            state, probes, dt, n_steps, sample_every=steps_per_sample,
            interp=config.interp, cfl=config.cfl, on_sample=on_sample,
        )
    except NumericalFault as exc:
        dump = os.path.join(outdir, "fault_state.eulb")
        try:
            save_snapshot(current, dump)
        except EulerLabError:
            dump = "<unavailable>"
        raise NumericalFault(f"{exc} [state dump: {dump}]") from exc

    outputs = []
    if acc is not None:
        series = acc.series()
    else:
        series = enstrophy_functionals(probes, region="probe_volume",
                                       n=config.phi_n, eps_align=config.eps_align)
    series_path = os.path.join(outdir, "series.csv")
    series.to_csv(series_path)
    outputs.append(series_path)

    if probes is not None:
        traj_path = os.path.join(outdir, "trajectories.csv")
        export_trajectories_csv(probes, traj_path)
        outputs.append(traj_path)

    v21 = theorem21_monitor(series, t0=config.t0, eps_align=config.eps_align)
    p21 = os.path.join(outdir, "thm21_verdict.json")
    v21.save_json(p21)
    outputs.append(p21)
    if config.c0 is not None:
        v22 = theorem22_monitor(series, t0=config.t0, c0=config.c0,
                                eps_align=config.eps_align)
        p22 = os.path.join(outdir, "thm22_verdict.json")
        v22.save_json(p22)
        outputs.append(p22)

    if config.save_final_state:
        snap = os.path.join(outdir, "final_state.eulb")
        save_snapshot(final, snap)
        outputs.append(snap)
    return outputs


def _run_odemodel(config: RunConfig, outdir: str) -> list[str]:
    elements = load_ensemble(config.ensemble, c0=config.c0, t0=config.t0)
    mu0s = [e.mu0 for e in elements]
    numeric = run_to_blowup(mu0s, config.c0, t0=config.t0, dt=config.ode_dt)
    report = ensemble_predict(elements, numeric_times=numeric)
    try:
        x1, T1 = singular_point(elements)
        report.singular = {"id": int(np.argmax(mu0s)), "x1": [float(v) for v in x1],
                           "T1": T1}
    except ContractViolation:
        report.singular = None
    path = os.path.join(outdir, "blowup_report.json")
    report.save_json(path)
    return [path]


def _run_tube(config: RunConfig, outdir: str) -> list[str]:
    mu_a0 = config.mu_a0
    report = vortex_tube_scenario(
        mu_a0, -mu_a0 / 2.0, -mu_a0 / 2.0, config.omega0,
        t_end=config.t_end, dt=config.tube_dt,
        alignment_breaking=config.alignment_breaking,
    )
    jpath = os.path.join(outdir, "tube_report.json")
    report.save_json(jpath)
    cpath = os.path.join(outdir, "tube_series.csv")
    report.to_csv(cpath)
    return [jpath, cpath]


def run(config: RunConfig) -> dict:
    """Execute a validated config; returns {artifact name: path}."""
    issues = validate(config)
    if issues:
        raise ConfigError("; ".join(issues))
    outdir = _resolve_outdir(config)
    start = time.monotonic()
    if config.mode == "simulate":
        outputs = _run_simulate(config, outdir)
    elif config.mode == "odemodel":
        outputs = _run_odemodel(config, outdir)
    elif config.mode == "tube":
        outputs = _run_tube(config, outdir)
    else:  # pragma: no cover - validate() already rejects this
        raise ConfigError(f"unknown mode {config.mode!r}")
    wall = time.monotonic() - start
    manifest = _write_manifest(outdir, config, outputs, wall)
    result = {os.path.basename(p): p for p in outputs}
    result["manifest.json"] = manifest
    return result


# -- argument parsing ---------------------------------------------------------------


def _add_common(sub):
    sub.add_argument("--config", help="JSON config file (or a manifest) to start from")
    sub.add_argument("--outdir", help="output directory (default $%s/<mode>)" % OUTPUT_ROOT_ENV)
    sub.add_argument("--seed", type=int)


def _add_simulate_flags(sub):
    sub.add_argument("--n", type=int)
    sub.add_argument("--preset", choices=PRESET_NAMES)
    sub.add_argument("--preset-params", help="JSON dict of preset parameters")
    sub.add_argument("--dt", type=float)
    sub.add_argument("--cfl", type=float)
    sub.add_argument("--t-end", type=float)
    sub.add_argument("--sample-interval", type=float)
    sub.add_argument("--probes", help="uniform:M | random:COUNT[:SEED] | none | file.json")
    sub.add_argument("--region", choices=REGIONS)
    sub.add_argument("--phi-n", type=int)
    sub.add_argument("--c0", type=float)
    sub.add_argument("--eps-align", type=float)
    sub.add_argument("--interp", choices=INTERPS)
    sub.add_argument("--t0", type=float)
    sub.add_argument("--save-final-state", action="store_true", default=None)


def _add_odemodel_flags(sub):
    sub.add_argument("--ensemble", help="ensemble spec file (JSON)")
    sub.add_argument("--c0", type=float)
    sub.add_argument("--t0", type=float)
    sub.add_argument("--ode-dt", type=float)


def _add_tube_flags(sub):
    sub.add_argument("--mu-a0", type=float)
    sub.add_argument("--omega0", help="three comma-separated components, e.g. 1,1,1")
    sub.add_argument("--t-end", type=float)
    sub.add_argument("--tube-dt", type=float)
    sub.add_argument("--alignment-breaking", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eulerlab",
        description="Periodic-box Euler laboratory: simulation, probes and blow-up diagnostics",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    s = subs.add_parser("simulate", help="run the spectral solver with diagnostics")
    _add_common(s)
    _add_simulate_flags(s)
    o = subs.add_parser("odemodel", help="run the element-ODE ensemble predictions")
    _add_common(o)
    _add_odemodel_flags(o)
    t = subs.add_parser("tube", help="run the vortex-tube invariant scenario")
    _add_common(t)
    _add_tube_flags(t)
    v = subs.add_parser("validate", help="validate a configuration")
    _add_common(v)
    v.add_argument("--mode", choices=MODES)
    _add_simulate_flags(v)
    # odemodel/tube flags not already covered by the simulate set
    v.add_argument("--ensemble")
    v.add_argument("--ode-dt", type=float)
    v.add_argument("--mu-a0", type=float)
    v.add_argument("--omega0")
    v.add_argument("--tube-dt", type=float)
    v.add_argument("--alignment-breaking", type=float)
    return parser


_FLAG_FIELDS = (
    "n", "preset", "dt", "cfl", "t_end", "sample_interval", "probes", "region",
    "phi_n", "c0", "eps_align", "interp", "save_final_state", "ensemble", "t0",
    "ode_dt", "mu_a0", "alignment_breaking", "tube_dt", "outdir", "seed",
)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "config", None):
        with open(args.config) as fh:
            config = parse_config(fh.read())
    else:
        config = RunConfig()
    if args.command in MODES:
        config.mode = args.command
    elif getattr(args, "mode", None):
        config.mode = args.mode
    for name in _FLAG_FIELDS:
        val = getattr(args, name, None)
        if val is not None:
            setattr(config, name, val)
    pp = getattr(args, "preset_params", None)
    if pp is not None:
        try:
            config.preset_params = json.loads(pp)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--preset-params is not valid JSON: {exc}") from exc
    om = getattr(args, "omega0", None)
    if om is not None:
        try:
            config.omega0 = tuple(float(x) for x in om.split(","))
        except ValueError as exc:
            raise ConfigError(f"--omega0 expects three numbers: {exc}") from exc
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        if args.command == "validate":
            issues = validate(config)
            if issues:
                for issue in issues:
                    print(issue)
                return 2
            print("ok")
            return 0
        paths = run(config)
        for name in sorted(paths):
            print(f"{name}: {paths[name]}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HypothesisViolation as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return 4
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 3
    except EulerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
