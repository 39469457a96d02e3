"""Experiment configuration, stability sweeps and stability-curve fits."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cgo import DELTA, H0_INV, SIGMA0, THEOREM_LIMIT, THETA
from .forward import dn_map, dn_operator_norm, restrict_partial
from .grid import make_grid
from .potentials import save_pair, sample_admissible_pair
from .recon import (CGOCache, CGOConfig, FourierEstimateSet, R1_DEFAULT, WedgeSpec, curl_fourier_estimate,
                    curl_truth, potential_fourier_estimate, potential_truth, recovery_error, truth_norms)

STABILITY_COLUMNS = ["eps_p", "dn_norm", "dn_norm_partial", "curl_hm1_err", "q_hm1_err", "n_estimates",
                     "mean_rel_err", "max_rel_err", "wall_seconds"]
CURL_PAIRS = ((0, 1), (0, 2), (1, 2))


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- configuration

@dataclass
class GridConfig:
    N: int = 24
    L: float = 0.5
    offset: tuple = (0.5, 0.5, 0.5)


@dataclass
class PotentialConfig:
    M: float = 1.0
    R: float = 0.45
    seed: int = 0
    eps_p: list = field(default_factory=lambda: [0.01, 0.02, 0.04, 0.08, 0.16, 0.32])


@dataclass
class CGOSection:
    sigma0: float = SIGMA0
    theta: float = THETA
    delta: float = DELTA
    s: list = field(default_factory=lambda: [4.0])
    h0_inv: float = H0_INV


@dataclass
class DNConfig:
    m_max: int = 4
    eps0: float = 0.1


@dataclass
class ReconConfig:
    n_xi: int = 6
    xi_max: float = 1.5
    xi_seed: int = 0
    xi: list | None = None
    r1: float = R1_DEFAULT
    degree: int = 8
    ridge: float = 1e-6
    R_ball: float | None = None


@dataclass
class ModeConfig:
    data: str = "full"
    q: str = "oracle"


@dataclass
class ExperimentConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    potentials: PotentialConfig = field(default_factory=PotentialConfig)
    cgo: CGOSection = field(default_factory=CGOSection)
    dn: DNConfig = field(default_factory=DNConfig)
    recon: ReconConfig = field(default_factory=ReconConfig)
    mode: ModeConfig = field(default_factory=ModeConfig)

    @classmethod
    def from_dict(cls, d):
        sections = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for name, value in (d or {}).items():
            if name not in sections:
                raise ConfigError(f"unknown config section {name!r}")
            sub = {f.name: f for f in fields(globals()[sections[name]])}
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            bad = set(value) - set(sub)
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kwargs[name] = globals()[sections[name]](**value)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def xi_points(self):
        """Deterministic frequency sample set."""
        r = self.recon
        if r.xi is not None:
            return np.asarray(r.xi, dtype=float).reshape(-1, 3)
        rng = np.random.default_rng([r.xi_seed, 7])
        if self.mode.data == "full":
            pts = []
            while len(pts) < r.n_xi:
                p = rng.uniform(-r.xi_max, r.xi_max, size=3)
                if 0.2 * r.xi_max <= np.linalg.norm(p) <= r.xi_max:
                    pts.append(p)
            return np.array(pts)
        return wedge_points(rng, r.n_xi, r.xi_max, r.r1)

    @property
    def R_ball(self):
        return self.recon.R_ball if self.recon.R_ball is not None else 2 * self.recon.xi_max

    def validate(self):
        c, g, d, m = self.cgo, self.grid, self.dn, self.mode
        if not (c.sigma0 > 0 and c.theta > 0 and c.sigma0 + c.theta < THEOREM_LIMIT):
            raise ConfigError(f"σ0 + θ = {c.sigma0 + c.theta} must lie in (0, {THEOREM_LIMIT:.5f})")
        if not -1 < c.delta < 0:
            raise ConfigError("δ must lie in (-1, 0)")
        if not 0 < d.eps0 < 0.4:
            raise ConfigError("ε0 must lie in (0, 0.4)")
        if m.data not in ("full", "partial") or m.q not in ("blind", "oracle"):
            raise ConfigError("mode flags: data ∈ {full, partial}, q ∈ {blind, oracle}")
        try:
            make_grid(g.N, g.L, tuple(g.offset))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.potentials.eps_p or any(e < 0 for e in self.potentials.eps_p):
            raise ConfigError("ε_p list must be nonempty and nonnegative")
        if not c.s:
            raise ConfigError("s list must be nonempty")
        xi_max = float(np.max(np.linalg.norm(self.xi_points(), axis=1)))
        if min(c.s) < xi_max:
            raise ConfigError(f"every s must be ≥ max |ξ| = {xi_max:.3f}")

    def cgo_config(self):
        return CGOConfig(self.cgo.sigma0, self.cgo.theta, self.cgo.delta, self.cgo.h0_inv)


def wedge_points(rng, count, radius, r1):
    """Points of Ẽ_1 ∩ Ẽ_2 (both narrow wedges), so every curl component is reachable."""
    pts = []
    while len(pts) < count:
        a = rng.uniform(0.2 * radius, radius)
        b = a * rng.uniform(0.5, 2.0)
        lo, hi = 0.5 * r1 * max(a, b), r1 * min(a, b)
        if hi <= lo:
            continue
        p = np.array([a, b, rng.uniform(lo, hi)])
        if np.linalg.norm(p) <= radius:
            pts.append(p)
    return np.array(pts)


def wedge_volume(radius, r1, samples=200000, seed=0):
    """Monte Carlo volume of Ẽ_1 ∩ Ẽ_2 inside the ball of the given radius."""
    rng = np.random.default_rng(seed)
    p = rng.uniform(-radius, radius, size=(samples, 3))
    inside = np.sum(p ** 2, axis=1) <= radius ** 2
    w1, w2 = WedgeSpec(0, r1, "E_tilde"), WedgeSpec(1, r1, "E_tilde")
    ok = inside & np.array([w1.contains(x) and w2.contains(x) for x in p])
    return (2 * radius) ** 3 * ok.mean()


# ---------------------------------------------------------------- experiment

def _fmt(x):
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return "nan"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def write_csv(path, columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], str) else _fmt(r[c]) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def _estimate_tasks(xi_points, s_list):
    return [(i, xi, s) for i, xi in enumerate(xi_points) for s in s_list]


def _record(cfg, eps_p, cache, threads):
    g = cfg.grid
    grid = make_grid(g.N, g.L, tuple(g.offset))
    p = cfg.potentials
    pair = sample_admissible_pair(grid, p.M, p.R, p.seed, eps_p)
    m_max, eps0 = cfg.dn.m_max, cfg.dn.eps0
    dn1 = dn_map(pair.W1.W, pair.q1.q, grid, m_max)
    dn2 = dn_map(pair.W2.W, pair.q2.q, grid, m_max)
    dn_norm = dn_operator_norm(dn1 - dn2)
    dn_norm_partial = dn_operator_norm(restrict_partial(dn1, eps0) - restrict_partial(dn2, eps0))
    ccfg = cfg.cgo_config()
    mode = cfg.mode.data
    r1 = cfg.recon.r1

    def work(task):
        _, xi, s = task
        out = []
        for comp in CURL_PAIRS:
            est = curl_fourier_estimate(pair, dn1, dn2, xi, s, comp, mode, r1, eps0, ccfg, strict=False,
                                        cache=cache)
            out.append(("curl", xi, s, comp, est, curl_truth(pair, xi, comp)))
        est = potential_fourier_estimate(pair, dn1, dn2, xi, s, cfg.mode.q, mode, r1, eps0, ccfg,
                                         strict=False, cache=cache)
        out.append(("q", xi, s, (-1, -1), est, potential_truth(pair, xi)))
        return out

    tasks = _estimate_tasks(cfg.xi_points(), cfg.cgo.s)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    curl_set, q_set = FourierEstimateSet(), FourierEstimateSet()
    for res in results:
        for kind, xi, s, comp, est, tru in res:
            (curl_set if kind == "curl" else q_set).add(xi, s, comp, est, mode, tru)

    curl_bound, q_bound = truth_norms(pair)
    R = cfg.R_ball
    vol = None
    if mode == "partial":
        vol = wedge_volume(R, r1) / max(len(cfg.xi_points()), 1)
    curl_err = recovery_error(curl_set, R=R, bound=curl_bound, cell_volume=vol)
    q_err = recovery_error(q_set, R=R, bound=q_bound, cell_volume=vol)
    est, tru = curl_set.estimates, curl_set.truths
    scale = max(np.max(np.abs(tru)), 1e-300)
    rel = np.abs(est - tru) / scale
    return pair, curl_set, q_set, {
        "eps_p": eps_p, "dn_norm": dn_norm, "dn_norm_partial": dn_norm_partial,
        "curl_hm1_err": curl_err["hminus1"], "q_hm1_err": q_err["hminus1"],
        "n_estimates": len(curl_set) + len(q_set),
        "mean_rel_err": float(np.mean(rel)), "max_rel_err": float(np.max(rel)),
    }


def run_experiment(config, out_dir, threads=1, record_timings=False, snapshots=False):
    """Sweep the ε_p list; writes stability.csv, estimates.csv, config.json, manifest.json.

    Timings go to manifest.json; stability.csv holds them only when
    record_timings is set, so that default outputs are byte-reproducible.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = CGOCache()
    rows, errors, timings = [], {}, {}
    all_estimates = FourierEstimateSet()
    for eps_p in config.potentials.eps_p:
        t0 = time.perf_counter()
        try:
            pair, curl_set, q_set, row = _record(config, float(eps_p), cache, threads)
        except Exception as exc:  # recorded per record; the sweep continues
            errors[str(eps_p)] = f"{type(exc).__name__}: {exc}"
            row = {c: np.nan for c in STABILITY_COLUMNS}
            row["eps_p"] = eps_p
            row["n_estimates"] = 0
        else:
            all_estimates.records.extend(curl_set.records + q_set.records)
            if snapshots:
                save_pair(pair, out / "pairs" / f"eps_{eps_p:g}")
        wall = time.perf_counter() - t0
        timings[str(eps_p)] = wall
        row["wall_seconds"] = wall if record_timings else np.nan
        rows.append(row)
    write_csv(out / "stability.csv", STABILITY_COLUMNS, rows)
    all_estimates.to_csv(out / "estimates.csv")
    (out / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    manifest = {"version": __version__, "errors": errors, "timings": timings, "cached_cgo": len(cache)}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return rows, errors


def read_stability(path):
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ---------------------------------------------------------------- curve fits

def fit_stability_curve(records, law="log", error_key="curl_hm1_err", norm_key="dn_norm"):
    """Fit error ≈ C |log n|^{-ε} (law "log") or C |log|log n||^{-λ} (law "loglog").

    The dominant small-n term is fitted as a line in log coordinates:
    log error = log C - ε·log|log n|.  Returns C, the exponent, R² and
    whether a fit is claimed (R² ≥ 0.5 with positive exponent).
    """
    dn = np.array([r[norm_key] for r in records], dtype=float)
    err = np.array([r[error_key] for r in records], dtype=float)
    ok = np.isfinite(dn) & np.isfinite(err) & (dn > 0) & (err > 0)
    dn, err = dn[ok], err[ok]
    if len(np.unique(dn)) < 4:
        raise ValueError("need at least 4 records with distinct dn_norm")
    if law == "log":
        if np.any(dn >= 1):
            raise ValueError("log law needs dn_norm < 1")
        x = np.log(np.abs(np.log(dn)))
    elif law == "loglog":
        if np.any(dn >= np.exp(-np.e)):
            raise ValueError("log-log law needs dn_norm < exp(-e)")
        x = np.log(np.log(np.abs(np.log(dn))))
    else:
        raise ValueError(f"unknown law {law!r}")
    y = np.log(err)
    if np.ptp(x) == 0:
        raise ValueError("insufficient spread of dn_norm")
    slope, intercept = np.polyfit(x, y, 1)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - (intercept + slope * x)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-24 * max(len(y), 1) else 0.0
    return {"law": law, "C": float(np.exp(intercept)), "exponent": float(-slope), "r2": float(r2),
            "claimed": bool(r2 >= 0.5 and -slope > 0), "n": int(len(x))}


def is_monotone(records, key="curl_hm1_err", by="dn_norm", strict=False):
    pts = sorted((r[by], r[key]) for r in records if np.isfinite(r[by]) and np.isfinite(r[key]))
    vals = [v for _, v in pts]
    if strict:
        return all(b > a for a, b in zip(vals, vals[1:]))
    return all(b >= a for a, b in zip(vals, vals[1:]))
