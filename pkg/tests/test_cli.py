import json
import subprocess
import sys

import pytest
from click.testing import CliRunner

from magcgo.cli import main
from magcgo.forward import SpectralGuardError

SMALL = {"grid": {"N": 12}, "potentials": {"eps_p": [0.05, 0.1]}, "cgo": {"s": [3.0, 4.0]},
         "recon": {"n_xi": 2, "xi_max": 1.0}}


@pytest.fixture()
def config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def run(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def test_help_lists_subcommands():
    res = run("--help")
    assert res.exit_code == 0
    for cmd in ("gen-pair", "dn-map", "cgo-probe", "full-sweep", "partial-sweep", "carleman-check",
                "continue-wedge", "fit-curve"):
        assert cmd in res.output


def test_version():
    res = run("--version")
    assert res.exit_code == 0 and "0.1.0" in res.output


def test_bad_config_exit_code(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"cgo": {"sigma0": 0.1}}))
    assert CliRunner().invoke(main, ["gen-pair", "--config", str(p), "--out", str(tmp_path)]).exit_code == 2
    p.write_text(json.dumps({"grdi": {}}))
    assert CliRunner().invoke(main, ["gen-pair", "--config", str(p), "--out", str(tmp_path)]).exit_code == 2
    assert CliRunner().invoke(main, ["gen-pair", "--threads", "0", "--out", str(tmp_path)]).exit_code == 2


def test_solver_error_exit_code(tmp_path, config, monkeypatch):
    import magcgo.cli as cli

    def guard(*a, **k):
        raise SpectralGuardError("resonant")

    monkeypatch.setattr(cli, "dn_map", guard)
    res = CliRunner().invoke(main, ["dn-map", "--config", config, "--out", str(tmp_path)])
    assert res.exit_code == 3
    assert "SpectralGuardError" in res.output


def test_gen_pair_and_dn_map(tmp_path, config):
    assert run("gen-pair", "--config", config, "--out", str(tmp_path)).exit_code == 0
    assert (tmp_path / "pairs.csv").exists()
    assert run("dn-map", "--config", config, "--out", str(tmp_path)).exit_code == 0
    lines = (tmp_path / "dn_norms.csv").read_text().splitlines()
    assert lines[0] == "eps_p,dn_norm,dn_norm_partial,n_basis" and len(lines) == 3


def test_cgo_probe_and_carleman(tmp_path, config):
    assert run("cgo-probe", "--config", config, "--out", str(tmp_path)).exit_code == 0
    summary = json.loads((tmp_path / "cgo_probe.json").read_text())
    assert set(summary) == {"r_norm_slope", "ratio_slope"}
    res = run("carleman-check", "--config", config, "--out", str(tmp_path), "--samples", "6")
    assert res.exit_code == 0 and "fitted C" in res.output


def test_sweep_continue_and_fit(tmp_path, config):
    cfg = dict(SMALL, potentials={"eps_p": [0.02, 0.04, 0.08, 0.16]}, cgo={"s": [3.0]},
               recon={"n_xi": 8, "xi_max": 1.0, "degree": 1})
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "sweep"
    assert run("partial-sweep", "--config", str(p), "--out", str(out)).exit_code == 0
    res = run("continue-wedge", "--config", str(p), "--out", str(out), "--estimates", str(out / "estimates.csv"))
    assert res.exit_code == 0
    assert (out / "continued.csv").read_text().startswith("x1,x2,x3,j,k,re,im")
    res = run("fit-curve", "--config", str(p), "--out", str(out), "--stability", str(out / "stability.csv"),
              "--partial")
    assert res.exit_code == 0
    fit = json.loads(res.output)
    assert {"C", "exponent", "r2", "claimed", "monotone"} <= set(fit)


def test_fit_curve_too_few_records(tmp_path, config):
    stab = tmp_path / "stability.csv"
    stab.write_text("eps_p,dn_norm,curl_hm1_err\n0.1,1e-4,0.01\n")
    res = CliRunner().invoke(main, ["fit-curve", "--config", config, "--out", str(tmp_path), "--stability", str(stab)])
    assert res.exit_code == 2


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "magcgo.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "full-sweep" in res.stdout
