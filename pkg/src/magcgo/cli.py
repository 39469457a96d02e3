"""Command line entry point: `magcgo <subcommand> [options]`."""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from .carleman import audit
from .cgo import ConvergenceError, OffsetCollisionError, build_cgo, frequency_pair
from .forward import SpectralGuardError, dn_map, dn_operator_norm, restrict_partial, save_dn_map
from .grid import make_grid
from .harness import (ConfigError, ExperimentConfig, fit_stability_curve, is_monotone, read_stability,
                      run_experiment, write_csv)
from .potentials import bound_quantities, save_pair, sample_admissible_pair
from .recon import IllRepresentedTraceError, WedgeError, continue_from_wedge

EXIT_CONFIG = 2
EXIT_SOLVER = 3
SOLVER_ERRORS = (SpectralGuardError, ConvergenceError, OffsetCollisionError, IllRepresentedTraceError,
                 np.linalg.LinAlgError)


def _fail(code, msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def common(fn):
    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="JSON experiment config.")
    @click.option("--seed", type=int, default=None, help="Potential seed (overrides the config).")
    @click.option("--out", "out_dir", type=click.Path(file_okay=False), default="out", show_default=True)
    @click.option("--grid", "grid_n", type=int, default=None, help="Cells per axis (overrides the config).")
    @click.option("--threads", type=int, default=1, show_default=True)
    @functools.wraps(fn)
    def wrapper(config_path, seed, out_dir, grid_n, threads, **kw):
        try:
            cfg = ExperimentConfig.load(config_path) if config_path else ExperimentConfig()
            if seed is not None:
                cfg.potentials = replace(cfg.potentials, seed=seed)
            if grid_n is not None:
                cfg.grid = replace(cfg.grid, N=grid_n)
            if threads < 1:
                raise ConfigError("--threads must be positive")
            cfg.validate()
        except (ConfigError, TypeError) as exc:
            _fail(EXIT_CONFIG, exc)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        try:
            fn(cfg, out, threads, **kw)
        except SOLVER_ERRORS as exc:
            _fail(EXIT_SOLVER, f"{type(exc).__name__}: {exc}")
        except (ConfigError, WedgeError, ValueError) as exc:
            _fail(EXIT_CONFIG, exc)
    return wrapper


def _grid(cfg):
    g = cfg.grid
    return make_grid(g.N, g.L, tuple(g.offset))


def _pair(cfg, eps_p=None):
    p = cfg.potentials
    eps = p.eps_p[0] if eps_p is None else eps_p
    return sample_admissible_pair(_grid(cfg), p.M, p.R, p.seed, eps)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Stability experiments for the magnetic Schrödinger inverse boundary problem."""


@main.command("gen-pair")
@common
def gen_pair(cfg, out, threads):
    """Sample an admissible potential pair for each ε_p and save it."""
    rows = []
    for eps in cfg.potentials.eps_p:
        pair = _pair(cfg, eps)
        save_pair(pair, out / f"pair_eps_{eps:g}")
        bW = bound_quantities(pair.W2.W)
        rows.append({"eps_p": eps, "W_sup": bW[0], "W_grad": bW[1], "W_div": bW[2],
                     "q_sup": float(np.max(np.abs(pair.q2.q.values))),
                     "boundary_agreement": int(pair.boundary_agreement)})
    write_csv(out / "pairs.csv", list(rows[0]), rows)
    click.echo(f"wrote {len(rows)} pairs to {out}")


@main.command("dn-map")
@common
def dn_map_cmd(cfg, out, threads):
    """Assemble full and partial DN maps for each pair and report their difference norms."""
    rows = []
    grid = _grid(cfg)
    for eps in cfg.potentials.eps_p:
        pair = _pair(cfg, eps)
        dn1 = dn_map(pair.W1.W, pair.q1.q, grid, cfg.dn.m_max)
        dn2 = dn_map(pair.W2.W, pair.q2.q, grid, cfg.dn.m_max)
        p1, p2 = restrict_partial(dn1, cfg.dn.eps0), restrict_partial(dn2, cfg.dn.eps0)
        save_dn_map(out / f"dn1_eps_{eps:g}", dn1)
        save_dn_map(out / f"dn2_eps_{eps:g}", dn2)
        rows.append({"eps_p": eps, "dn_norm": dn_operator_norm(dn1 - dn2),
                     "dn_norm_partial": dn_operator_norm(p1 - p2), "n_basis": dn1.matrix.shape[0]})
    write_csv(out / "dn_norms.csv", list(rows[0]), rows)
    click.echo(f"wrote DN maps for {len(rows)} pairs to {out}")


@main.command("cgo-probe")
@click.option("--xi", type=float, nargs=3, default=None, help="Frequency (defaults to the first config ξ).")
@common
def cgo_probe(cfg, out, threads, xi):
    """Build CGO solutions over the s list and report remainder diagnostics."""
    pair = _pair(cfg)
    xi = np.asarray(xi if xi else cfg.xi_points()[0], dtype=float)
    ccfg = cfg.cgo_config()
    rows = []
    for s in cfg.cgo.s:
        fp = frequency_pair(xi, s)
        sol = build_cgo(pair.W1.W, pair.q1.q, fp, 1, **ccfg.kwargs())
        d = sol.diagnostics
        rows.append({"s": s, "zeta_norm": d["zeta_norm"], "r_norm": d["r_norm"], "forcing_norm": d["forcing_norm"],
                     "ratio": d["r_norm"] / max(d["forcing_norm"], 1e-300),
                     "relative_conjugated_residual": d["relative_conjugated_residual"],
                     "iterations": d["iterations"], "below_threshold": int(d["below_threshold"])})
    write_csv(out / "cgo_probe.csv", list(rows[0]), rows)
    if len(rows) >= 2:
        ls = np.log([r["s"] for r in rows])
        summary = {"r_norm_slope": float(np.polyfit(ls, np.log([r["r_norm"] for r in rows]), 1)[0]),
                   "ratio_slope": float(np.polyfit(ls, np.log([r["ratio"] for r in rows]), 1)[0])}
        (out / "cgo_probe.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    click.echo(f"probed {len(rows)} values of s")


def _sweep(cfg, out, threads, data_mode, record_timings):
    cfg.mode = replace(cfg.mode, data=data_mode)
    cfg.validate()
    rows, errors = run_experiment(cfg, out, threads=threads, record_timings=record_timings)
    if errors and len(errors) == len(rows):
        _fail(EXIT_SOLVER, f"every record failed: {errors}")
    click.echo(f"{data_mode} sweep: {len(rows)} records, {len(errors)} failed; see {out / 'stability.csv'}")


@main.command("full-sweep")
@click.option("--record-timings", is_flag=True, help="Write wall times into stability.csv.")
@common
def full_sweep(cfg, out, threads, record_timings):
    """Full-data stability sweep over the ε_p list."""
    _sweep(cfg, out, threads, "full", record_timings)


@main.command("partial-sweep")
@click.option("--record-timings", is_flag=True, help="Write wall times into stability.csv.")
@common
def partial_sweep(cfg, out, threads, record_timings):
    """Partial-data stability sweep with wedge frequencies."""
    _sweep(cfg, out, threads, "partial", record_timings)


@main.command("carleman-check")
@click.option("--h", "h_sc", type=float, default=0.1, show_default=True, help="Semiclassical parameter.")
@click.option("--samples", type=int, default=50, show_default=True)
@common
def carleman_check(cfg, out, threads, h_sc, samples):
    """Evaluate both sides of the Carleman estimate on random test functions."""
    pair = _pair(cfg)
    gt = np.array([cfg.recon.r1, 0.0, 1.0])
    gt /= np.linalg.norm(gt)
    C, reports = audit(pair.grid, pair.W1.W, pair.q1.q, gt, h_sc, samples, cfg.potentials.seed)
    rows = [r.to_row() for r in reports]
    write_csv(out / "carleman.csv", list(rows[0]), rows)
    click.echo(f"fitted C = {C:.6g} over {len(rows)} samples")


@main.command("continue-wedge")
@click.option("--estimates", type=click.Path(exists=True, dir_okay=False), required=True,
              help="estimates.csv written by a sweep.")
@click.option("--eps-p", type=float, default=None, help="Which ε_p record (defaults to the largest).")
@common
def continue_wedge(cfg, out, threads, estimates, eps_p):
    """Continue wedge Fourier estimates to the unit ball by ridge polynomial fits."""
    import csv
    with open(estimates, newline="") as fh:
        recs = list(csv.DictReader(fh))
    if not recs:
        raise ConfigError("estimates file is empty")
    R = cfg.R_ball
    rows = []
    for j, k in ((0, 1), (0, 2), (1, 2)):
        sel = [r for r in recs if int(r["j"]) == j and int(r["k"]) == k]
        if not sel:
            continue
        pts = 2 * np.array([[float(r[c]) for c in ("xi1", "xi2", "xi3")] for r in sel]) / R
        vals = np.array([float(r["re_est"]) + 1j * float(r["im_est"]) for r in sel])
        ev, cont, fit = continue_from_wedge(pts, vals, cfg.recon.degree, cfg.recon.ridge)
        for p, v in zip(ev, cont):
            rows.append({"x1": p[0], "x2": p[1], "x3": p[2], "j": j, "k": k, "re": v.real, "im": v.imag})
    if not rows:
        raise ConfigError("no curl estimates in the file")
    write_csv(out / "continued.csv", ["x1", "x2", "x3", "j", "k", "re", "im"], rows)
    click.echo(f"continued {len(rows)} values")


@main.command("fit-curve")
@click.option("--stability", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--law", type=click.Choice(["log", "loglog"]), default="log", show_default=True)
@click.option("--partial", is_flag=True, help="Fit against the partial-data norm.")
@common
def fit_curve(cfg, out, threads, stability, law, partial):
    """Fit the stability law to a stability.csv."""
    recs = read_stability(stability)
    norm_key = "dn_norm_partial" if partial else "dn_norm"
    try:
        fit = fit_stability_curve(recs, law, norm_key=norm_key)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    fit["monotone"] = is_monotone(recs, by=norm_key)
    write_csv(out / "fit.csv", list(fit), [fit])
    click.echo(json.dumps(fit, sort_keys=True))


if __name__ == "__main__":
    main()
