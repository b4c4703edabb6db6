"""Command-line drivers.

Every command writes its data files plus ``manifest.json`` into ``--out``.

Exit codes: 0 success (or certified), 2 not certified, 3 numerical failure,
64 malformed configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, analysis, freq, lmi, sdp, sim
from .params import EquilibriumError, ModelConfig, ParameterError, PiGains, load_config

EXIT_OK = 0
EXIT_NOT_CERTIFIED = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class RunManifest:
    """Record of one invocation; ``config`` holds everything needed to rerun it."""

    def __init__(self, command: str, config: ModelConfig, options: dict):
        self.command = command
        self.config = config
        self.options = options
        self.outputs: list[str] = []
        self.started = datetime.now(timezone.utc)
        self._t0 = time.perf_counter()

    def add(self, path: Path) -> Path:
        self.outputs.append(path.name)
        return path

    def to_dict(self, exit_code: int) -> dict:
        return {
            "command": self.command,
            "version": __version__,
            "config": self.config.to_dict(),
            "options": self.options,
            "started_utc": self.started.isoformat(),
            "wall_clock_s": time.perf_counter() - self._t0,
            "outputs": sorted(self.outputs),
            "exit_code": exit_code,
        }

    def write(self, out: Path, exit_code: int) -> None:
        (out / "manifest.json").write_text(json.dumps(self.to_dict(exit_code), indent=2, sort_keys=True) + "\n")


def _parse_value(text: str):
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"override value {text!r} is not a number") from None


def _parse_gains(text: str) -> PiGains:
    try:
        kp, ki = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--gains expects 'kp,ki', got {text!r}") from None
    return PiGains(kp, ki)


def _parse_list(text: str) -> list[float]:
    """Comma list or ``lo:hi:n`` (linear) or ``lo:hi:n:log``."""
    try:
        if ":" in text:
            parts = text.split(":")
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
            if len(parts) == 4 and parts[3] == "log":
                return list(np.logspace(np.log10(lo), np.log10(hi), n))
            return list(np.linspace(lo, hi, n))
        return [float(v) for v in text.split(",")]
    except (ValueError, IndexError):
        raise UsageError(f"cannot parse list {text!r}") from None


def _parse_orders(text: str) -> list[int]:
    try:
        if "-" in text:
            lo, hi = (int(v) for v in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse orders {text!r}") from None


def resolve_config(args) -> ModelConfig:
    cfg = load_config(args.config) if args.config else ModelConfig()
    overrides = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = _parse_value(value)
    if args.gains:
        g = _parse_gains(args.gains)
        overrides["gains.kp"], overrides["gains.ki"] = g.kp, g.ki
    return cfg.with_overrides(overrides) if overrides else cfg


def _require_ki(cfg: ModelConfig) -> None:
    if cfg.gains.ki == 0:
        raise EquilibriumError("equilibrium not unique: ki must be nonzero")


def _write_rows(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for v in row])


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=analysis._json_default) + "\n")


# ------------------------------------------------------------------ commands

def cmd_certify(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    _require_ki(cfg)
    prob = lmi.build_theorem1(args.order, cfg.normalized, cfg.gains, c_b=cfg.torque.c_b)
    rep = sdp.solve_problem(prob)
    _write_json(man.add(out / "certify.json"), {"order": args.order, "gains": [cfg.gains.kp, cfg.gains.ki],
                                                **rep.summary()})
    print(f"order {args.order}: {rep.status}")
    if rep.status == sdp.FEASIBLE:
        return EXIT_OK
    if rep.status == sdp.NUMERICAL_FAILURE:
        return EXIT_NUMERICAL
    return EXIT_NOT_CERTIFIED


def cmd_decay(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    _require_ki(cfg)
    orders = _parse_orders(args.orders) if args.orders else [args.order]
    reports = [analysis.estimate_decay_rate(N, cfg.normalized, cfg.gains, tol=args.tol, c_b=cfg.torque.c_b)
               for N in orders]
    _write_rows(man.add(out / "decay.csv"), ["N", "mu", "mu_max", "certified", "iterations"],
                [(r.N, r.mu, r.mu_max, int(r.certified), r.iterations) for r in reports])
    for r in reports:
        print(f"N={r.N}: mu={r.mu:.6g}" + ("" if r.certified else f" ({r.message})"))
    return EXIT_OK if any(r.certified for r in reports) else EXIT_NOT_CERTIFIED


def cmd_map(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    m = analysis.stability_map(args.order, cfg.normalized, _parse_list(args.kp_grid), _parse_list(args.ki_grid),
                               args.fraction, c_b=cfg.torque.c_b, workers=args.workers)
    m.to_csv(man.add(out / "map.csv"))
    print(f"{int(m.stable.sum())} of {m.stable.size} cells certified")
    return EXIT_OK


def cmd_bound(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    kis = _parse_list(args.ki_sweep) if args.ki_sweep else [cfg.gains.ki]
    rows, reports = [], []
    for ki in kis:
        gains = PiGains(cfg.gains.kp, ki)
        _require_ki(cfg.with_overrides({"gains.ki": ki}))
        r = analysis.practical_bound(args.order, cfg.normalized, gains, args.omega0, cfg.torque, V_max=args.v_max,
                                     tau0=args.tau0, objective=args.objective)
        reports.append(r)
        rows.append((gains.kp, ki, int(r.certified), r.tau0, r.eps1, r.X_bound))
        print(f"ki={ki:g}: " + (f"X_bound={r.X_bound:.6g}" if r.certified else r.message))
    _write_rows(man.add(out / "bound.csv"), ["kp", "ki", "certified", "tau0", "eps1", "X_bound"], rows)
    _write_json(man.add(out / "bound.json"), [r.to_dict() for r in reports])
    return EXIT_OK if all(r.certified for r in reports) else EXIT_NOT_CERTIFIED


def cmd_simulate(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    _require_ki(cfg)
    sc = sim.SimConfig(t_end=args.t_end, omega0=args.omega0, initial=args.initial, mode=args.mode, n_t=args.n_t,
                       n_x=args.n_x)
    try:
        traj = sim.simulate(cfg.normalized, cfg.gains, cfg.torque, sc)
    except sim.SimulationDiverged as exc:
        print(f"simulation diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    traj.to_csv(man.add(out / "trajectory.csv"))
    if args.binary:
        traj.to_binary(man.add(out / "fields.bin"))
    stats = sim.oscillation_stats(traj.t, traj.Z[:, 0])
    stats["energy_tail_max"] = float(traj.energy[traj.t >= 0.5 * traj.t[-1]].max())
    stats.update(n_x=traj.n_x, n_t=traj.n_t, dt=traj.dt)
    _write_json(man.add(out / "summary.json"), stats)
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


def cmd_bode(args, cfg: ModelConfig, man: RunManifest, out: Path) -> int:
    w = freq.default_grid(args.n_points)
    try:
        resp = {
            "dpm": freq.dpm_response(cfg.physical, w, args.output),
            "lpm": freq.lpm_response(cfg.lumped, w, args.output),
            "lpm2": freq.lpm2_response(cfg.lumped, w, args.output),
        }
    except freq.SingularFrequencyError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERICAL
    for name, r in resp.items():
        r.to_csv(man.add(out / f"bode_{name}.csv"))
    summary = {
        "dpm_phase_crossings_-180": freq.phase_crossings(resp["dpm"]),
        "dpm_peaks": freq.resonance_peaks(resp["dpm"]).tolist(),
        "lpm_peaks": freq.resonance_peaks(resp["lpm"]).tolist(),
    }
    _write_json(man.add(out / "bode_summary.json"), summary)
    print(json.dumps(summary))
    return EXIT_OK


COMMANDS = {
    "certify": cmd_certify,
    "decay": cmd_decay,
    "map": cmd_map,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "bode": cmd_bode,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with sections physical/lumped/torque/gains")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, e.g. gains.ki=5")
    common.add_argument("--out", default=".", help="output directory (created if missing)")
    common.add_argument("--gains", metavar="KP,KI")

    p = argparse.ArgumentParser(prog="drillstab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("certify", parents=[common], help="exponential stability of the linearized loop")
    s.add_argument("--order", type=int, default=2)

    s = sub.add_parser("decay", parents=[common], help="certified decay rate by bisection")
    s.add_argument("--order", type=int, default=2)
    s.add_argument("--orders", help="e.g. 0-6 or 0,2,5 (overrides --order)")
    s.add_argument("--tol", type=float, default=analysis.DEFAULT_TOL)

    s = sub.add_parser("map", parents=[common], help="certified region over a (kp, ki) grid")
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--kp-grid", default="0:0.004:9")
    s.add_argument("--ki-grid", default="0:20:21")
    s.add_argument("--fraction", type=float, default=analysis.DEFAULT_FRACTION)
    s.add_argument("--workers", type=int, default=1)

    s = sub.add_parser("bound", parents=[common], help="practical stability bound X_bound")
    s.add_argument("--order", type=int, default=5)
    s.add_argument("--omega0", type=float, default=5.0)
    s.add_argument("--ki-sweep", help="list of ki values; uses the configured ki if omitted")
    s.add_argument("--tau0", type=float, help="fixed tau0 (skips the halving schedule)")
    s.add_argument("--v-max", type=float, default=analysis.DEFAULT_V_MAX)
    s.add_argument("--objective", choices=["eps_P", "eps1"], default="eps_P")

    s = sub.add_parser("simulate", parents=[common], help="time-domain simulation")
    s.add_argument("--omega0", type=float, default=5.0)
    s.add_argument("--mode", choices=["linear", "nonlinear"], default="nonlinear")
    s.add_argument("--initial", default="sine-weak", help="preset: doubled, sine-strong, sine-weak, zero, equilibrium")
    s.add_argument("--t-end", type=float, default=100.0)
    s.add_argument("--n-t", type=int, default=sim.DEFAULT_NT)
    s.add_argument("--n-x", type=int)
    s.add_argument("--binary", action="store_true", help="also dump full fields")

    s = sub.add_parser("bode", parents=[common], help="frequency responses of the distributed and lumped models")
    s.add_argument("--n-points", type=int, default=400)
    s.add_argument("--output", choices=["angle", "velocity"], default="angle")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    try:
        cfg = resolve_config(args)
        out.mkdir(parents=True, exist_ok=True)
        options = {k: v for k, v in vars(args).items() if k not in ("config", "set", "out", "gains")}
        man = RunManifest(args.command, cfg, options)
        code = COMMANDS[args.command](args, cfg, man, out)
    except (UsageError, ParameterError, EquilibriumError, sim.CFLError, analysis.SingularCaseError,
            json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    man.write(out, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
