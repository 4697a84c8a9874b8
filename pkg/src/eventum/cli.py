"""Batch front-end: config parsing, experiment orchestration, artifacts.

Commands
--------
verify-algebra     exact product-table / involution / generator identities
simulate-linear    ensemble of linear decoherence trajectories -> CSV
simulate-posterior ensemble of posterior (state-diffusion) trajectories -> CSV
gaussian-demo      closed-form vs ODE posterior mean, covariance flow -> CSV
unravel-check      trajectory ensemble density against the Lindblad oracle
jump-limit         repeated-interaction ladder against the diffusion model

Configuration is a strict JSON document: unknown keys are rejected with
their dotted path, every default below is what you get for a missing key.

    command       (required, one of the six above)
    system        hbar=1.0  m=1.0  lambda=0.5
                  potential = {"kind": "free", "coefficient": 0.0}
                  (kind in free|linear|quadratic; coefficient is the slope
                  a of a*x or the angular frequency omega)
    grid          n=128  x_min=-10.0  x_max=10.0
    state         q0=0.0  p0=0.0  width=1.0   (initial Gaussian packet)
    integration   dt=0.001  T=1.0  n_trajectories=100
                  master_seed=20260810  store_stride=100  recenter=false
    probe         nu_values=[100.0, 1000.0, 10000.0]
                  trajectory_schedule=null   (per-nu trajectory counts;
                                              null = n_trajectories each)
                  n_diffusion=null           (null = twice the largest level)
                  dt_rule=0.1                (jump step is dt_rule / nu)
                  sample_interval=0.1
                  measurement_basis="quadrature"
    demo          u=0.5    (input-trajectory velocity for gaussian-demo)
    output_dir    "eventum-out"

Exit codes: 0 success, 1 configuration error, 2 numerical failure.  A
manifest (run_manifest.json) is written even on failure, with the error
classification.  Reruns with identical config and master_seed write
byte-identical CSV artifacts.  EVENTUM_THREADS caps ensemble worker
threads (default 1).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .errors import DegenerateInputError, InvalidArgumentError, NumericalFailureError
from .grid import GridSpec, Potential, SystemParams, build_operators, gaussian_packet

COMMANDS = ("verify-algebra", "simulate-linear", "simulate-posterior",
            "gaussian-demo", "unravel-check", "jump-limit")


class ConfigError(InvalidArgumentError):
    """Configuration rejected; message carries the dotted field path."""


@dataclass(frozen=True)
class PotentialConfig:
    kind: str = "free"
    coefficient: float = 0.0


@dataclass(frozen=True)
class SystemConfig:
    hbar: float = 1.0
    m: float = 1.0
    lam: float = 0.5
    potential: PotentialConfig = field(default_factory=PotentialConfig)


@dataclass(frozen=True)
class GridConfig:
    n: int = 128
    x_min: float = -10.0
    x_max: float = 10.0


@dataclass(frozen=True)
class StateConfig:
    q0: float = 0.0
    p0: float = 0.0
    width: float = 1.0


@dataclass(frozen=True)
class IntegrationConfig:
    dt: float = 1e-3
    T: float = 1.0
    n_trajectories: int = 100
    master_seed: int = 20260810
    store_stride: int = 100
    recenter: bool = False


@dataclass(frozen=True)
class ProbeConfig:
    nu_values: tuple = (100.0, 1000.0, 10000.0)
    trajectory_schedule: Optional[tuple] = None
    n_diffusion: Optional[int] = None
    dt_rule: float = 0.1
    sample_interval: float = 0.1
    measurement_basis: str = "quadrature"


@dataclass(frozen=True)
class DemoConfig:
    u: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    command: str
    system: SystemConfig = field(default_factory=SystemConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    state: StateConfig = field(default_factory=StateConfig)
    integration: IntegrationConfig = field(default_factory=IntegrationConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    demo: DemoConfig = field(default_factory=DemoConfig)
    output_dir: str = "eventum-out"

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["system"]["lambda"] = out["system"].pop("lam")
        out["probe"]["nu_values"] = list(self.probe.nu_values)
        if self.probe.trajectory_schedule is not None:
            out["probe"]["trajectory_schedule"] = list(self.probe.trajectory_schedule)
        return out

    def system_params(self) -> SystemParams:
        return SystemParams(hbar=self.system.hbar, m=self.system.m,
                            lam=self.system.lam,
                            potential=Potential(self.system.potential.kind,
                                                self.system.potential.coefficient))

    def grid_spec(self) -> GridSpec:
        return GridSpec(n=self.grid.n, x_min=self.grid.x_min, x_max=self.grid.x_max)


def _want(value, kind, path):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def _check_keys(mapping, allowed, path):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _positive(value, path, strict=True):
    if strict and not value > 0:
        raise ConfigError(f"{path}: must be positive, got {value}")
    if not strict and value < 0:
        raise ConfigError(f"{path}: must be nonnegative, got {value}")
    return value


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON run configuration (strict mode)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    _check_keys(raw, {"command", "system", "grid", "state", "integration",
                      "probe", "demo", "output_dir"}, "config")
    if "command" not in raw:
        raise ConfigError("config.command: required")
    command = _want(raw["command"], str, "command")
    if command not in COMMANDS:
        raise ConfigError(f"command: {command!r} not one of {COMMANDS}")

    sys_raw = raw.get("system", {})
    _check_keys(sys_raw, {"hbar", "m", "lambda", "potential"}, "system")
    pot_raw = sys_raw.get("potential", {})
    _check_keys(pot_raw, {"kind", "coefficient"}, "system.potential")
    kind = _want(pot_raw.get("kind", "free"), str, "system.potential.kind")
    if kind not in ("free", "linear", "quadratic"):
        raise ConfigError(f"system.potential.kind: {kind!r} not in (free, linear, quadratic)")
    coeff = _want(pot_raw.get("coefficient", 0.0), float, "system.potential.coefficient")
    if kind == "quadratic":
        _positive(coeff, "system.potential.coefficient")
    system = SystemConfig(
        hbar=_positive(_want(sys_raw.get("hbar", 1.0), float, "system.hbar"), "system.hbar"),
        m=_positive(_want(sys_raw.get("m", 1.0), float, "system.m"), "system.m"),
        lam=_positive(_want(sys_raw.get("lambda", 0.5), float, "system.lambda"),
                      "system.lambda", strict=False),
        potential=PotentialConfig(kind=kind, coefficient=coeff))

    grid_raw = raw.get("grid", {})
    _check_keys(grid_raw, {"n", "x_min", "x_max"}, "grid")
    grid = GridConfig(
        n=_want(grid_raw.get("n", 128), int, "grid.n"),
        x_min=_want(grid_raw.get("x_min", -10.0), float, "grid.x_min"),
        x_max=_want(grid_raw.get("x_max", 10.0), float, "grid.x_max"))
    if grid.n < 8:
        raise ConfigError(f"grid.n: need at least 8 points, got {grid.n}")
    if not grid.x_max > grid.x_min:
        raise ConfigError("grid.x_max: must exceed grid.x_min")

    state_raw = raw.get("state", {})
    _check_keys(state_raw, {"q0", "p0", "width"}, "state")
    state = StateConfig(
        q0=_want(state_raw.get("q0", 0.0), float, "state.q0"),
        p0=_want(state_raw.get("p0", 0.0), float, "state.p0"),
        width=_positive(_want(state_raw.get("width", 1.0), float, "state.width"),
                        "state.width"))

    integ_raw = raw.get("integration", {})
    _check_keys(integ_raw, {"dt", "T", "n_trajectories", "master_seed",
                            "store_stride", "recenter"}, "integration")
    integration = IntegrationConfig(
        dt=_positive(_want(integ_raw.get("dt", 1e-3), float, "integration.dt"),
                     "integration.dt"),
        T=_positive(_want(integ_raw.get("T", 1.0), float, "integration.T"),
                    "integration.T"),
        n_trajectories=_want(integ_raw.get("n_trajectories", 100), int,
                             "integration.n_trajectories"),
        master_seed=_want(integ_raw.get("master_seed", 20260810), int,
                          "integration.master_seed"),
        store_stride=_want(integ_raw.get("store_stride", 100), int,
                           "integration.store_stride"),
        recenter=_want(integ_raw.get("recenter", False), bool,
                       "integration.recenter"))
    if integration.n_trajectories < 1:
        raise ConfigError("integration.n_trajectories: need at least 1")
    if integration.store_stride < 1:
        raise ConfigError("integration.store_stride: need at least 1")

    probe_raw = raw.get("probe", {})
    _check_keys(probe_raw, {"nu_values", "trajectory_schedule", "n_diffusion",
                            "dt_rule", "sample_interval", "measurement_basis"},
                "probe")
    nu_values = probe_raw.get("nu_values", [100.0, 1000.0, 10000.0])
    if not isinstance(nu_values, list) or not nu_values:
        raise ConfigError("probe.nu_values: expected a non-empty list")
    nu_values = tuple(_positive(_want(v, float, f"probe.nu_values[{i}]"),
                                f"probe.nu_values[{i}]")
                      for i, v in enumerate(nu_values))
    schedule = probe_raw.get("trajectory_schedule")
    if schedule is not None:
        if not isinstance(schedule, list) or len(schedule) != len(nu_values):
            raise ConfigError("probe.trajectory_schedule: must list one count per nu")
        schedule = tuple(_want(v, int, f"probe.trajectory_schedule[{i}]")
                         for i, v in enumerate(schedule))
    n_diffusion = probe_raw.get("n_diffusion")
    if n_diffusion is not None:
        n_diffusion = _want(n_diffusion, int, "probe.n_diffusion")
        _positive(n_diffusion, "probe.n_diffusion")
    basis = _want(probe_raw.get("measurement_basis", "quadrature"), str,
                  "probe.measurement_basis")
    if basis not in ("number", "quadrature"):
        raise ConfigError(f"probe.measurement_basis: {basis!r} not in (number, quadrature)")
    probe = ProbeConfig(
        nu_values=nu_values, trajectory_schedule=schedule, n_diffusion=n_diffusion,
        dt_rule=_positive(_want(probe_raw.get("dt_rule", 0.1), float,
                                "probe.dt_rule"), "probe.dt_rule"),
        sample_interval=_positive(_want(probe_raw.get("sample_interval", 0.1), float,
                                        "probe.sample_interval"),
                                  "probe.sample_interval"),
        measurement_basis=basis)

    demo_raw = raw.get("demo", {})
    _check_keys(demo_raw, {"u"}, "demo")
    demo = DemoConfig(u=_want(demo_raw.get("u", 0.5), float, "demo.u"))

    output_dir = _want(raw.get("output_dir", "eventum-out"), str, "output_dir")

    return RunConfig(command=command, system=system, grid=grid, state=state,
                     integration=integration, probe=probe, demo=demo,
                     output_dir=output_dir)


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _n_steps(cfg: RunConfig) -> int:
    steps = int(round(cfg.integration.T / cfg.integration.dt))
    if abs(steps * cfg.integration.dt - cfg.integration.T) > 1e-9 * max(1.0, cfg.integration.T):
        raise ConfigError("integration.T: must be an integer number of dt steps")
    return steps


def _initial_packet(cfg: RunConfig):
    return gaussian_packet(cfg.grid_spec(), cfg.state.q0, cfg.state.p0,
                           cfg.state.width, cfg.system.hbar)


def _run_simulate(cfg: RunConfig, out: Path, kind: str) -> dict:
    from .sde import integrate_ensemble, write_trajectory_csv
    params = cfg.system_params()
    ops = build_operators(cfg.grid_spec(), params)
    psi0 = _initial_packet(cfg)
    records = integrate_ensemble(
        kind, psi0, ops, params, cfg.integration.n_trajectories,
        cfg.integration.dt, _n_steps(cfg), cfg.integration.master_seed,
        store_stride=cfg.integration.store_stride,
        recenter=cfg.integration.recenter and kind == "posterior")
    csv_path = out / "trajectories.csv"
    with open(csv_path, "w") as fh:
        write_trajectory_csv(records, fh)
    finals = np.array([r.norms_sq[-1] for r in records])
    return {
        "artifacts": ["trajectories.csv"],
        "mean_final_norm_sq": float(finals.mean()),
        "std_final_norm_sq": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
        "n_trajectories": cfg.integration.n_trajectories,
        "n_steps": _n_steps(cfg),
    }


def _run_verify_algebra(cfg: RunConfig, out: Path) -> dict:
    from .algebra import (format_product_table, product_table_report,
                          pseudo_unitarity_residual,
                          random_pseudo_unitary_generator, g_to_s)
    report = product_table_report()
    rng = np.random.default_rng(cfg.integration.master_seed)
    worst_residual = 0.0
    worst_norm = 0.0
    for i in range(100):
        gen = random_pseudo_unitary_generator(
            rng, n=4, nu=float(rng.uniform(0.5, 4.0)),
            kind="diffusive" if i % 2 == 0 else "jump")
        worst_residual = max(worst_residual, max(pseudo_unitarity_residual(gen)))
        phi = rng.normal(size=1) + 1j * rng.normal(size=1)
        phi /= np.linalg.norm(phi)
        worst_norm = max(worst_norm, g_to_s(gen, phi).normalization_residual())
    report["random_generators"] = {
        "count": 100,
        "worst_pseudo_unitarity_residual": worst_residual,
        "worst_normalization_residual": worst_norm,
        "pass": bool(worst_residual < 1e-10 and worst_norm < 1e-10),
    }
    all_pass = (all(report["identities"].values())
                and all(report["epsilon_square_identity"].values())
                and report["random_generators"]["pass"])
    report["all_pass"] = all_pass
    with open(out / "algebra_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
    with open(out / "product_table.txt", "w") as fh:
        fh.write(format_product_table() + "\n")
    if not all_pass:
        raise NumericalFailureError("algebra identities failed")
    return {"artifacts": ["algebra_report.json", "product_table.txt"],
            "all_pass": all_pass}


def _run_gaussian_demo(cfg: RunConfig, out: Path) -> dict:
    from .moments import (GaussianPosterior, covariance_flow, explicit_mean,
                          riccati_report, solve_deviation)
    params = cfg.system_params()
    kappa = params.kappa
    if kappa <= 0:
        raise ConfigError("system.lambda: gaussian-demo needs lambda > 0")
    u, q, v0 = cfg.demo.u, cfg.state.q0, cfg.state.p0 / cfg.system.m
    dt, steps = cfg.integration.dt, _n_steps(cfg)
    t = dt * np.arange(steps + 1)
    closed = explicit_mean(u, q, v0, kappa, t)
    # independent route: forced RK4 branch of the deviation ODE plus x(t)
    sol = solve_deviation(kappa, z0=q, zp0=v0 - u, g=lambda _t: 0.0,
                          t_max=float(t[-1]), n_steps=max(steps, 1000))
    z = sol.z(t)
    q_ode = (u * t - q) + z
    start = GaussianPosterior.from_packet(cfg.state.q0, cfg.state.p0,
                                          cfg.state.width, params.m, params.hbar)
    cov = covariance_flow(params, start, dt, steps)
    csv_path = out / "gaussian_demo.csv"
    with open(csv_path, "w") as fh:
        fh.write("t,q_closed_form,q_ode,z,Vqq,Vqp,Vpp\n")
        for k in range(steps + 1):
            row = (t[k], closed[k], q_ode[k], z[k], cov[k, 0], cov[k, 1], cov[k, 2])
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    max_gap = float(np.max(np.abs(closed - q_ode)))
    summary = {"artifacts": ["gaussian_demo.csv"],
               "max_abs_closed_form_minus_ode": max_gap,
               "oracle_agreement_pass": bool(max_gap <= 1e-8),
               "kappa": kappa}
    if params.potential.kind == "free":
        with open(out / "riccati.json", "w") as fh:
            json.dump(riccati_report(params), fh, indent=2)
        summary["artifacts"].append("riccati.json")
    return summary


def _run_unravel_check(cfg: RunConfig, out: Path) -> dict:
    from .lindblad import (coupling_operators, integrate_lindblad, trace_norm,
                           write_lindblad_csv)
    from .sde import ensemble_density, integrate_ensemble
    params = cfg.system_params()
    ops = build_operators(cfg.grid_spec(), params)
    psi0 = _initial_packet(cfg)
    steps = _n_steps(cfg)
    records = integrate_ensemble(
        "linear", psi0, ops, params, cfg.integration.n_trajectories,
        cfg.integration.dt, steps, cfg.integration.master_seed,
        store_stride=steps)
    T = cfg.integration.T
    [rho_mc] = ensemble_density(records, [T])
    K, Ls = coupling_operators(ops, params)
    rho0 = np.outer(psi0.amplitudes, psi0.amplitudes.conj()) * ops.grid.dx
    # oracle step: divides T exactly, no coarser than min(dt, 2e-3)
    lind_steps = int(math.ceil(T / min(cfg.integration.dt, 2e-3)))
    lind_dt = T / lind_steps
    n_samples = max(1, min(10, lind_steps))
    sample_steps = sorted({int(round(lind_steps * (k + 1) / n_samples))
                           for k in range(n_samples)})
    sample_times = [s * lind_dt for s in sample_steps]
    lind = integrate_lindblad(rho0, K, Ls, T=T, dt=lind_dt,
                              sample_times=[0.0] + sample_times)
    with open(out / "lindblad.csv", "w") as fh:
        write_lindblad_csv(lind, ops, fh)
    distance = trace_norm(rho_mc.entries - lind.states[-1].entries)
    finals = np.array([r.norms_sq[-1] for r in records])
    se = float(finals.std(ddof=1) / math.sqrt(len(finals)))
    return {
        "artifacts": ["lindblad.csv"],
        "trace_norm_distance": float(distance),
        "unraveling_pass": bool(distance <= 0.05),
        "mean_final_norm_sq": float(finals.mean()),
        "isometry_pass": bool(abs(finals.mean() - 1.0)
                              <= 3.0 * se + 5.0 * cfg.integration.dt),
        "n_trajectories": cfg.integration.n_trajectories,
    }


def _run_jump_limit(cfg: RunConfig, out: Path) -> dict:
    from .collision import diffusion_limit_compare
    params = cfg.system_params()
    ops = build_operators(cfg.grid_spec(), params)
    psi0 = _initial_packet(cfg)
    schedule = cfg.probe.trajectory_schedule or cfg.integration.n_trajectories
    report = diffusion_limit_compare(
        psi0, ops, params, horizon=cfg.integration.T,
        nus=cfg.probe.nu_values, n_trajectories=schedule,
        n_diffusion=cfg.probe.n_diffusion,
        master_seed=cfg.integration.master_seed,
        dt_diffusion=cfg.integration.dt,
        sample_interval=cfg.probe.sample_interval,
        dt_rule=cfg.probe.dt_rule)
    with open(out / "jump_limit.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
    with open(out / "jump_limit_curves.csv", "w") as fh:
        cols = ["t", "diffusion_q_mean", "diffusion_q_dispersion"]
        for nu in report.nus:
            cols += [f"jump_q_mean_nu{nu:g}", f"jump_q_dispersion_nu{nu:g}"]
        fh.write(",".join(cols) + "\n")
        for i, t in enumerate(report.sample_times):
            row = [t, report.diffusion_mean[i], report.diffusion_dispersion[i]]
            for nu in report.nus:
                row += [report.jump_mean[nu][i], report.jump_dispersion[nu][i]]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return {
        "artifacts": ["jump_limit.json", "jump_limit_curves.csv"],
        "mean_distance": {str(k): v for k, v in report.mean_distance.items()},
        "monotone_decreasing": report.monotone_decreasing(),
        "dispersion_relative_at_horizon": {
            str(k): v for k, v in report.dispersion_relative_at_horizon.items()},
    }


_RUNNERS = {
    "verify-algebra": _run_verify_algebra,
    "simulate-linear": lambda cfg, out: _run_simulate(cfg, out, "linear"),
    "simulate-posterior": lambda cfg, out: _run_simulate(cfg, out, "posterior"),
    "gaussian-demo": _run_gaussian_demo,
    "unravel-check": _run_unravel_check,
    "jump-limit": _run_jump_limit,
}


def run(cfg: RunConfig) -> int:
    """Execute the configured experiment; returns the process exit code."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": cfg.command,
        "config": cfg.to_json_dict(),
        "master_seed": cfg.integration.master_seed,
        "versions": {"eventum": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__,
                     "python": sys.version.split()[0]},
        "status": "ok",
        "error": None,
    }
    started = time.perf_counter()
    code = 0
    try:
        summary = _RUNNERS[cfg.command](cfg, out)
        manifest.update(summary)
    except (ConfigError,) as err:
        manifest["status"] = "config-error"
        manifest["error"] = str(err)
        code = 1
    except (InvalidArgumentError, DegenerateInputError) as err:
        manifest["status"] = "config-error"
        manifest["error"] = str(err)
        code = 1
    except NumericalFailureError as err:
        manifest["status"] = "numerical-failure"
        manifest["error"] = str(err)
        code = 2
    manifest["wall_time_s"] = time.perf_counter() - started
    with open(out / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    if manifest["error"]:
        print(f"{manifest['status']}: {manifest['error']}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="eventum",
        description="time-continuous quantum measurement laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="master seed (overrides config)")
    parser.add_argument("--trajectories", type=int,
                        help="ensemble size (overrides config)")
    args = parser.parse_args(argv)

    try:
        if args.config:
            text = Path(args.config).read_text()
            cfg = parse_config(text)
            if cfg.command != args.command:
                raise ConfigError(
                    f"command: config says {cfg.command!r}, "
                    f"command line says {args.command!r}")
        else:
            cfg = parse_config(json.dumps({"command": args.command}))
    except (OSError, ConfigError) as err:
        print(f"config-error: {err}", file=sys.stderr)
        return 1

    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, integration=replace(cfg.integration, master_seed=args.seed))
    if args.trajectories is not None:
        if args.trajectories < 1:
            print("config-error: --trajectories: need at least 1", file=sys.stderr)
            return 1
        cfg = replace(cfg, integration=replace(cfg.integration,
                                               n_trajectories=args.trajectories))
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
