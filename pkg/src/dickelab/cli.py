"""Command-line front end: deterministic experiment runs with file artifacts.

    dickelab <command> --config <path> [--seed <int>] [--out <dir>]

Commands: macro (trajectory), scan (pump sweep + threshold bracket), micro
(per-site Bloch series, two-route agreement), entropy (max-entropy audit),
oracle (finite-size expectation series), compare (finite-size vs macro
errors).  Every artifact embeds the tool version, the config hash and the
seed; identical (config, seed) reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .core import MacroState, ModelParams, _p_layout, unpack_state
from .errors import ConfigError, DickeLabError, HorizonError
from .macroflow import (
    Trajectory,
    classify_phase,
    default_transient,
    extract_limit_cycle,
    integrate_flow,
    normal_fixed_point,
    scan_eta,
)
from .microdyn import (
    ASYMPTOTIC_GAMMA_T,
    BlochVector,
    asymptotic_theta,
    closed_form_state,
    theta_fourier,
)
from .entropy import PeriodicProductState, max_entropy_audit
from .oracle import (
    assemble_system,
    build_initial_state,
    convergence_report,
    default_cutoff,
    evolve_series,
    macro_expectations,
)

COMMANDS = ("macro", "scan", "micro", "entropy", "oracle", "compare")
TWO_ROUTE_TOL = 1e-4


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _jsonable(x):
    if x is None or isinstance(x, (str, bool)):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def write_table(path: Path, columns, rows, meta, fmt: str) -> Path:
    """Emit one artifact: CSV with '#' meta lines, or the JSON mirror."""
    path = path.with_suffix(f".{fmt}")
    if fmt == "csv":
        lines = [f"# {k}={_fmt(v)}" for k, v in meta.items()]
        lines.append(",".join(columns))
        lines.extend(",".join(_fmt(x) for x in row) for row in rows)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        doc = {
            "meta": {k: _jsonable(v) for k, v in meta.items()},
            "columns": list(columns),
            "rows": [[_jsonable(x) for x in row] for row in rows],
        }
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
    return path


def _meta(cfg: RunConfig, command: str, seed, **extra) -> dict:
    meta = {
        "tool": "dickelab",
        "version": __version__,
        "command": command,
        "config_sha256": cfg.config_hash,
        "seed": seed if seed is not None else "",
    }
    meta.update(extra)
    return meta


def packed_column_names(n: int):
    cols = []
    for l in range(n):
        cols += [f"re_alpha{l}", f"im_alpha{l}"]
    for l in range(n):
        cols += [f"re_s{l}", f"im_s{l}"]
    for l, part in _p_layout(n):
        if (l, part) == (0, "re") or (n % 2 == 0 and l == n // 2 and part == "re"):
            cols.append(f"p{l}")
        else:
            cols.append(f"{'re' if part == 're' else 'im'}_p{l}")
    return cols


def _macro_x0(cfg: RunConfig) -> MacroState:
    sec = cfg.macro
    if isinstance(sec.x0, str):
        x0 = normal_fixed_point(cfg.params)
        alpha = x0.alpha.copy()
        alpha[0] += sec.perturb
        return MacroState(alpha, x0.s, x0.p)
    return unpack_state(np.asarray(sec.x0, dtype=float), cfg.params.n)


def _macro_trajectory(cfg: RunConfig) -> Trajectory:
    return integrate_flow(_macro_x0(cfg), cfg.params, t_end=cfg.macro.t_end,
                          tol=cfg.macro.tol, sample_dt=cfg.macro.sample_dt)


def _run_macro(cfg: RunConfig, seed, outdir: Path):
    traj = _macro_trajectory(cfg)
    cols = ["t"] + packed_column_names(cfg.params.n)
    rows = [[t] + list(y) for t, y in zip(traj.times, traj.ys)]
    meta = _meta(cfg, "macro", seed, tol=cfg.macro.tol)
    return [write_table(outdir / "trajectory", cols, rows, meta, cfg.output.format)]


def _run_scan(cfg: RunConfig, seed, outdir: Path):
    sec = cfg.scan
    grid = np.linspace(sec.eta_min, sec.eta_max, sec.points)
    points, crossing = scan_eta(
        cfg.params, grid, perturb=sec.perturb, tol=sec.tol,
        sample_dt=sec.sample_dt, lyap_sample=sec.lyap_sample)
    change = next((i for i in range(1, len(points))
                   if points[i - 1].label == "normal" and points[i].label != "normal"),
                  None)
    rows = []
    for i, pt in enumerate(points):
        lo = hi = None
        if crossing is not None and i == change:
            lo, hi = crossing.bracket
        rows.append([pt.eta, pt.label, pt.lyap_max, pt.nu, lo, hi])
    cols = ["eta", "label", "lyap_max", "nu", "eta1_lo", "eta1_hi"]
    meta = _meta(cfg, "scan", seed, tol=sec.tol)
    return [write_table(outdir / "scan", cols, rows, meta, cfg.output.format)]


def _run_micro(cfg: RunConfig, seed, outdir: Path):
    traj = _macro_trajectory(cfg)
    params = cfg.params
    sec = cfg.micro
    if sec.t_window is not None:
        t_lo, t_hi = sec.t_window
    else:
        t_lo = 1.05 * ASYMPTOTIC_GAMMA_T / params.gamma_min
        t_hi = cfg.macro.t_end
    if t_lo >= t_hi:
        raise HorizonError(
            f"asymptotic window [{t_lo:.3g}, {t_hi:.3g}] is empty; "
            "increase macro.t_end or set micro.t_window")
    times = np.linspace(t_lo, t_hi, sec.samples)
    rows = []
    max_err = 0.0
    for r in sec.sites:
        for t in times:
            th_a = asymptotic_theta(r, float(t), traj)
            th_f = theta_fourier(r, float(t), traj)
            err = float(np.abs(th_a.theta - th_f.theta).max())
            max_err = max(max_err, err)
            rows.append([t, r, *th_a.theta, *th_f.theta])
    cols = ["t", "site", "asym_x", "asym_y", "asym_z",
            "fourier_x", "fourier_y", "fourier_z"]
    meta = _meta(cfg, "micro", seed)
    paths = [write_table(outdir / "micro_theta", cols, rows, meta, cfg.output.format)]
    agree_rows = [[max_err, TWO_ROUTE_TOL, max_err <= TWO_ROUTE_TOL]]
    paths.append(write_table(outdir / "micro_agreement",
                             ["max_abs_error", "tolerance", "passed"],
                             agree_rows, meta, cfg.output.format))
    return paths


def _entropy_target(cfg: RunConfig) -> PeriodicProductState:
    params = cfg.params
    if cfg.entropy.target == "normal":
        thetas = closed_form_state("normal", params)
    else:
        traj = _macro_trajectory(cfg)
        cycle = extract_limit_cycle(traj.after(default_transient(params)))
        thetas = closed_form_state("coherent", params, cycle=cycle,
                                   t=cfg.entropy.time)
    return PeriodicProductState(tuple(thetas))


def _run_entropy(cfg: RunConfig, seed, outdir: Path):
    sec = cfg.entropy
    use_seed = seed if seed is not None else sec.seed
    target = _entropy_target(cfg)
    report = max_entropy_audit(target, trials=sec.trials,
                               block_size=sec.block_size, seed=use_seed)
    cols = ["trials", "block_size", "target_density", "max_trial_density",
            "collapsed", "max_marginal_error", "passed", "seed"]
    rows = [[report.trials, report.block_size, report.target_density,
             report.max_trial_density, report.collapsed,
             report.max_marginal_error, report.passed, report.seed]]
    meta = _meta(cfg, "entropy", use_seed, target=sec.target)
    return [write_table(outdir / "entropy_audit", cols, rows, meta,
                        cfg.output.format)]


def _oracle_inputs(cfg: RunConfig):
    sec = cfg.oracle
    theta = BlochVector(np.asarray(sec.theta0, dtype=float))
    alpha = np.asarray(sec.alpha_re, dtype=float) + 1j * np.asarray(sec.alpha_im)
    return sec, theta, alpha


def _run_oracle(cfg: RunConfig, seed, outdir: Path):
    sec, theta, alpha = _oracle_inputs(cfg)
    n = cfg.params.n
    paths = []
    for N in sec.N_list:
        cut = sec.cutoffs if sec.cutoffs > 0 else default_cutoff(N, alpha)
        system = assemble_system(N, cut, cfg.params, cap=sec.cap)
        states = evolve_series(system, build_initial_state(system, theta, alpha),
                               sec.t_grid, tol=sec.tol)
        cols = ["t"]
        for l in range(n):
            cols += [f"re_s{l}", f"im_s{l}", f"re_p{l}", f"im_p{l}",
                     f"re_alpha{l}", f"im_alpha{l}", f"nphot{l}"]
        rows = []
        for st in states:
            ex = macro_expectations(system, st)
            row = [st.time]
            for l in range(n):
                row += [ex["s"][l].real, ex["s"][l].imag,
                        ex["p"][l].real, ex["p"][l].imag,
                        ex["alpha"][l].real, ex["alpha"][l].imag,
                        ex["scaled_photons"][l]]
            rows.append(row)
        meta = _meta(cfg, "oracle", seed, N=N, cutoff=cut, tol=sec.tol)
        paths.append(write_table(outdir / f"oracle_N{N}", cols, rows, meta,
                                 cfg.output.format))
    return paths


def _run_compare(cfg: RunConfig, seed, outdir: Path):
    sec, theta, alpha = _oracle_inputs(cfg)
    report = convergence_report(cfg.params, theta, alpha, sec.N_list, sec.t_grid,
                                tol=sec.tol,
                                cutoffs=sec.cutoffs if sec.cutoffs > 0 else None,
                                cap=sec.cap)
    cols = ["N", "e_s", "e_p", "e_alpha", "max_scaled_photons"]
    rows = [[r.N, r.e_s, r.e_p, r.e_alpha, r.max_scaled_photons]
            for r in report.rows]
    meta = _meta(cfg, "compare", seed, macro_tol=min(sec.tol, 1e-10),
                 oracle_tol=sec.tol)
    return [write_table(outdir / "compare", cols, rows, meta, cfg.output.format)]


_RUNNERS = {
    "macro": _run_macro,
    "scan": _run_scan,
    "micro": _run_micro,
    "entropy": _run_entropy,
    "oracle": _run_oracle,
    "compare": _run_compare,
}


def run(command: str, cfg: RunConfig, seed=None, out=None) -> list:
    """Execute one command; returns the list of written artifact paths."""
    if command not in _RUNNERS:
        raise ConfigError(f"unknown command {command!r}")
    outdir = Path(out) if out is not None else Path(cfg.output.directory)
    outdir.mkdir(parents=True, exist_ok=True)
    return _RUNNERS[command](cfg, seed, outdir)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dickelab",
        description="Simulation laboratory for the dissipative multi-mode laser model")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the audit seed")
        p.add_argument("--out", default=None, help="override the output directory")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text)
        for path in run(args.command, cfg, seed=args.seed, out=args.out):
            print(path)
        return 0
    except (DickeLabError, OSError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
