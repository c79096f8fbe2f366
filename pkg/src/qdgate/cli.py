"""Command-line batch driver.

    qdgate gate|fidelity-sweep|readout|spectral [--config PATH] [--out DIR]
           [--seed N] [--jobs N] [--verbose]

Every CSV starts with a ``# config_sha256=...`` comment line and a header
row. Numbers use Python's shortest round-trip ``repr``. Outputs are first
written into a temporary directory and moved into place only after the
whole command succeeded, so failures never leave partial files.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import math
import os
import shutil
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from qdgate import config as config_mod
from qdgate.errors import ConfigError, NumericalError
from qdgate.evolution import PropagatorConfig, run_adiabatic_gate, run_rabi_gate
from qdgate.hamiltonians import DotModel, PulseSchedule, pulse_at
from qdgate.phonons import PhononBath, BranchCouplingRecord, gate_infidelity, gate_record, small_omega_slope, spectral_j
from qdgate.readout import (
    ReadoutConfig,
    TrajectorySampler,
    detection_error,
    measurement_error,
    optimize_measurement_time,
    survival_probability,
)
from qdgate.units import HBAR

log = logging.getLogger("qdgate")

SUBCOMMANDS = ("gate", "fidelity-sweep", "readout", "spectral")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class OutputSet:
    """Collects CSV files in a temp dir and publishes them together."""

    def __init__(self, out_dir: Path, digest: str):
        self.out_dir = out_dir
        self.digest = digest
        self.files: dict[str, list[str]] = {}

    def table(self, name: str, header, rows) -> None:
        lines = [f"# config_sha256={self.digest}", ",".join(header)]
        lines.extend(",".join(fmt(v) for v in row) for row in rows)
        self.files[name] = lines

    def publish(self) -> list[Path]:
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            staging = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out_dir))
        except OSError as exc:
            raise ConfigError(f"output directory not writable: {exc}") from exc
        try:
            for name, lines in self.files.items():
                (staging / name).write_text("\n".join(lines) + "\n")
            written = []
            for name in self.files:
                target = self.out_dir / name
                os.replace(staging / name, target)
                written.append(target)
            return written
        finally:
            shutil.rmtree(staging, ignore_errors=True)


def _bath(section: dict, **overrides) -> PhononBath:
    fields = dict(
        coupling=section["coupling"],
        geometry=section["geometry"],
        l=section["l_nm"],
        l_c=section["l_c_nm"],
        l_v=section["l_v_nm"],
        l_z=section["l_z_nm"],
        rho=section["rho_kg_m3"],
        u=section["u_m_s"],
        d_c=section["d_c_eV"],
        d_v=section["d_v_eV"],
        e14=section["e14_C_m2"],
        eps_r=section["eps_r"],
        r0=section["r0_nm"],
        scale=section["scale"],
    )
    fields.update(overrides)
    return PhononBath(**fields)


def _propagator(gate: dict) -> PropagatorConfig:
    return PropagatorConfig(method=gate["method"], rtol=gate["rtol"], atol=gate["atol"])


def _gate_schedule(gate: dict) -> PulseSchedule:
    return PulseSchedule(
        omega0=gate["omega0_meV"],
        tau_omega=gate["tau_omega_ps"],
        delta_inf=gate["delta_inf_meV"],
        tau_delta=gate["tau_delta_ps"],
        t_start=gate["t_start_ps"],
        t_end=gate["t_end_ps"],
    )


def cmd_gate(cfg: dict, out: OutputSet, jobs: int) -> None:
    gate = cfg["gate"]
    model = DotModel(epsilon=gate["epsilon"], delta=gate["zeeman_meV"], delta_e_ab=gate["delta_e_ab_meV"])
    if gate["protocol"] == "adiabatic":
        schedule = _gate_schedule(gate)
        result = run_adiabatic_gate(model, schedule, _propagator(gate))
    elif gate["protocol"] == "rabi":
        wait = gate["wait_ps"]
        if wait is None:
            if model.delta_e_ab <= 0:
                raise ConfigError("rabi protocol needs wait_ps or a positive delta_e_ab_meV")
            wait = math.pi * HBAR / model.delta_e_ab
        result = run_rabi_gate(model, gate["omega_pi_meV"], wait, _propagator(gate))
        schedule = None
    else:
        raise ConfigError(f"unknown gate protocol {gate['protocol']!r}")
    rec = result.branch_records
    if rec is not None:
        if schedule is not None:
            omega, delta = pulse_at(schedule, rec.times)
        else:
            omega, delta = rec.omega, rec.delta
        out.table("pulse_shapes.csv", ["t_ps", "omega_meV", "delta_meV"], zip(rec.times, omega, delta))
        series = rec.gate_phase_series()
        rows = [(t, ph, *xx) for t, ph, xx in zip(rec.times, series, rec.trion_trion)]
        out.table(
            "phase_population.csv",
            ["t_ps", "gate_phase_rad", "xx_00", "xx_01", "xx_10", "xx_11"],
            rows,
        )
    summary = [
        ("gate_phase_rad", result.gate_phase),
        ("phi_00_rad", result.phases[0]),
        ("phi_01_rad", result.phases[1]),
        ("phi_10_rad", result.phases[2]),
        ("phi_11_rad", result.phases[3]),
        ("residual_exciton_max", float(np.max(result.residual_exciton))),
        ("residual_xx_max", float(np.max(result.residual_trion_trion))),
        ("fidelity_no_bath", result.fidelity_no_bath),
        ("norm_drift", result.norm_drift),
    ]
    out.table("summary.csv", [k for k, _ in summary], [[v for _, v in summary]])
    log.info("gate phase %.6f rad, residual exciton %.3g", result.gate_phase, max(result.residual_exciton))


def _sweep_group(args):
    """All (l, d, T) rows for one (Omega, Delta E_ab) gate run."""
    cfg, omega, de = args
    sweep, gate = cfg["sweep"], cfg["gate"]
    schedule = PulseSchedule(
        omega0=omega,
        tau_omega=sweep["tau_omega_ps"],
        delta_inf=sweep["delta_inf_meV"],
        tau_delta=sweep["tau_delta_ps"],
        t_start=sweep["t_start_ps"],
        t_end=sweep["t_end_ps"],
    )
    result = run_adiabatic_gate(DotModel(0.0, 0.0, de), schedule, _propagator(gate))
    base = gate_record(result.branch_records)
    rows = {}
    for l_nm, d_nm, temp in itertools.product(sweep["l_nm"], sweep["d_nm"], sweep["T_K"]):
        bath = _bath(cfg["bath"], l=l_nm)
        record = BranchCouplingRecord(base.times, base.weights, base.labels, d_nm)
        f, gammas = gate_infidelity(record, bath, temp, sweep["topology"], sweep["reference"])
        rows[(l_nm, d_nm, temp)] = (float(np.max(gammas)), f)
    return rows


def _pool_map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def cmd_fidelity_sweep(cfg: dict, out: OutputSet, jobs: int) -> None:
    sweep = cfg["sweep"]
    if sweep["reference"] not in ("vacuum", "bare"):
        raise ConfigError("sweep.reference must be vacuum or bare")
    if sweep["topology"] not in ("common", "separate"):
        raise ConfigError("sweep.topology must be common or separate")
    _bath(cfg["bath"])  # validate before spending time
    groups = list(itertools.product(sweep["omega_meV"], sweep["delta_e_ab_meV"]))
    results = _pool_map(_sweep_group, [(cfg, om, de) for om, de in groups], jobs)
    by_group = dict(zip(groups, results))
    rows = []
    for l_nm, d_nm, temp, omega, de in itertools.product(*(sweep[a] for a in config_mod.SWEEP_AXES)):
        gamma, f = by_group[(omega, de)][(l_nm, d_nm, temp)]
        rows.append((l_nm, d_nm, temp, omega, de, gamma, f))
    out.table(
        "fidelity.csv",
        ["l_nm", "d_nm", "T_K", "omega_meV", "delta_e_ab_meV", "gamma", "infidelity"],
        rows,
    )


def _readout_chunk(args):
    rcfg, initial, start, stop = args
    sampler = TrajectorySampler(rcfg)
    rows = []
    for i in range(start, stop):
        rec = sampler.sample(initial, np.random.default_rng(rcfg.seed + i))
        rows.extend((i, t, c, d) for t, c, d in zip(rec.emission_times, rec.collapsed_to, rec.detected))
    return rows


def cmd_readout(cfg: dict, out: OutputSet, jobs: int) -> None:
    r = cfg["readout"]
    rcfg = ReadoutConfig(
        omega=r["omega_meV"],
        kappa=r["kappa_per_ns"],
        epsilon=r["epsilon"],
        eta=r["eta"],
        t_max=r["t_max_ns"],
        seed=cfg["seed"],
    )
    if r["initial"] not in (0, 1):
        raise ConfigError("readout.initial must be 0 or 1")
    if r["n_times"] < 2 or r["n_trajectories"] < 0:
        raise ConfigError("readout.n_times must be >= 2 and n_trajectories >= 0")
    times = np.linspace(0.0, rcfg.t_max, r["n_times"])
    p0 = survival_probability(0, rcfg, times)
    p1 = survival_probability(1, rcfg, times)
    out.table("survival.csv", ["t_ns", "P0", "P1"], zip(times, p0, p1))

    n = r["n_trajectories"]
    chunks = max(1, jobs)
    bounds = np.linspace(0, n, chunks + 1).astype(int)
    tasks = [(rcfg, r["initial"], int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    rows = [row for part in _pool_map(_readout_chunk, tasks, jobs) for row in part]
    out.table("trajectories.csv", ["trajectory_id", "emission_time_ns", "collapsed_to", "detected"], rows)

    err1, err0 = measurement_error(rcfg, times)
    optimum = optimize_measurement_time(rcfg)
    n_terms = math.inf if r["n_terms"] is None else r["n_terms"]
    missed = detection_error(rcfg.epsilon, rcfg.eta, n_terms)
    out.table(
        "error_budget.csv",
        ["t_ns", "err1", "err0", "total", "t_opt", "detection_error"],
        ((t, e1, e0, e1 + e0, optimum.t_opt, missed) for t, e1, e0 in zip(times, err1, err0)),
    )
    log.info("t_opt = %.4g ns, error %.4g", optimum.t_opt, optimum.error)


def cmd_spectral(cfg: dict, out: OutputSet, jobs: int) -> None:
    spec = cfg["spectral"]
    deformation = _bath(cfg["bath"], coupling="deformation")
    piezo = _bath(cfg["bath"], coupling="piezoelectric", l_c=spec["l_c_nm"], l_v=spec["l_v_nm"])
    grid = np.geomspace(deformation.omega_l * 1e-4, deformation.omega_l * 10.0, spec["n_points"])
    out.table(
        "j_omega.csv",
        ["omega_meV", "J_deformation", "J_piezo"],
        zip(grid, spectral_j(deformation, grid), spectral_j(piezo, grid)),
    )
    s_def = small_omega_slope(deformation)
    s_pz = small_omega_slope(piezo)
    print(f"deformation small-omega slope {s_def:.4f} ({'ok' if abs(s_def - 3) <= 0.05 else 'off'}; expected 3)")
    print(f"piezoelectric small-omega slope {s_pz:.4f} ({'ok' if abs(s_pz - 5) <= 0.05 else 'off'}; expected 5)")


COMMANDS = {
    "gate": cmd_gate,
    "fidelity-sweep": cmd_fidelity_sweep,
    "readout": cmd_readout,
    "spectral": cmd_spectral,
}


def _jobs(flag: int | None) -> int:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("SIM_JOBS")
        if env is None:
            return 1
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"SIM_JOBS must be an integer, got {env!r}") from exc
    if value < 1:
        raise ConfigError("jobs must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qdgate", description="Quantum-dot gate, phonon and readout simulations.")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--jobs", type=int, help="worker processes (default: SIM_JOBS or 1)")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        jobs = _jobs(args.jobs)
        out = OutputSet(Path(args.out), config_mod.config_hash(cfg))
        COMMANDS[args.subcommand](cfg, out, jobs)
        for path in out.publish():
            log.info("wrote %s", path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
