"""End-to-end command-line runs, in-process via main() plus one subprocess."""

import json
import subprocess
from importlib import resources

import jsonschema
import numpy as np
import pytest

from mks.cli import main
from mks.config import bundled_config_path
from mks.io import load_density_matrix


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def free1d_text(**overrides):
    text = bundled_config_path("free1d").read_text()
    for key, value in overrides.items():
        text = text.replace(f"[{key}]", f"[{key}]\n{value}")
    return text


def test_scf_json_mode(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["scf", "--config", "free1d", "--json", "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["converged"] is True
    assert summary["basis_size"] == 9
    assert len(summary["config_hash"]) == 16
    assert summary["trace"] == pytest.approx(2.0, abs=1e-12)
    assert read_json(out / "scf_summary.json") == summary

    lines = (out / "scf_iterations.csv").read_text().strip().split("\n")
    assert lines[0] == "iteration,free_energy,density_residual,mu"
    assert len(lines) == 1 + summary["iterations"]
    last = lines[-1].split(",")
    assert float(last[1]) == summary["free_energy"]["total"]

    gamma, meta = load_density_matrix(out / "checkpoint.json")
    assert gamma.trace() == pytest.approx(2.0, abs=1e-12)
    assert meta["mu"] == summary["mu"]


def test_scf_human_mode(tmp_path, capsys):
    code = main(["scf", "--config", "free1d", "--out", str(tmp_path / "h")])
    assert code == 0
    text = capsys.readouterr().out
    assert "converged in" in text
    assert "F = " in text
    assert "wrote" in text


def test_scf_is_deterministic(tmp_path):
    paths = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["scf", "--config", "si1d", "--json", "--out", str(out)]) == 0
        paths.append(out)
    for name in ("scf_summary.json", "scf_iterations.csv", "checkpoint.json"):
        assert (paths[0] / name).read_bytes() == (paths[1] / name).read_bytes()


def test_response_audit_json(tmp_path, capsys):
    out = tmp_path / "resp"
    code = main(["response", "--config", "free1d", "--json", "--out", str(out)])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["violated"] is False
    assert report["lambda_min"] == pytest.approx(1.0, abs=1e-12)
    assert report["g_sign"] == "paper"
    assert len(report["config_hash"]) == 16
    assert read_json(out / "response_audit.json") == report


def test_response_human_mode(tmp_path, capsys):
    code = main(["response", "--config", "free1d", "--out", str(tmp_path / "r")])
    assert code == 0
    assert "lambda_min" in capsys.readouterr().out


def test_audit_xc_passes_for_bundled_functional(tmp_path, capsys):
    out = tmp_path / "xc"
    code = main(["audit-xc", "--config", "si1d", "--json", "--out", str(out)])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["name"] == "dirac"
    assert (out / "xc_audit.json").is_file()


def test_sweep_writes_tagged_files_per_beta(tmp_path, capsys):
    out = tmp_path / "sw"
    code = main([
        "sweep", "--config", "free1d", "--json", "--out", str(out),
        "--cutoffs", "2,4", "--reference", "8",
    ])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["sweeps"]) == 3

    schema = json.loads(
        resources.files("mks").joinpath("schemas/summary.schema.json").read_text()
    )
    for beta, tag in ((2.0, "2"), (20.0, "20"), (200.0, "200")):
        summary = read_json(out / f"sweep_beta{tag}.json")
        jsonschema.validate(summary, schema)
        assert summary["beta"] == beta
        lines = (out / f"sweep_beta{tag}.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        assert lines[0].startswith("ec,")


def test_sweep_beta_tags_handle_decimal_points(tmp_path):
    cfg = tmp_path / "halfbeta.cfg"
    cfg.write_text(
        bundled_config_path("free1d").read_text().replace(
            "betas = 2, 20, 200", "betas = 0.5"
        )
    )
    out = tmp_path / "out"
    code = main([
        "sweep", "--config", str(cfg), "--json", "--out", str(out),
        "--cutoffs", "2,4", "--reference", "8",
    ])
    assert code == 0
    assert (out / "sweep_beta0p5.csv").is_file()
    assert (out / "sweep_beta0p5.json").is_file()


def test_sweep_human_mode_reports_floor(tmp_path, capsys):
    # the noninteracting model converges past the tolerance floor at every
    # bundled beta, so no decay fit is possible and the CLI must say so
    out = tmp_path / "floor"
    code = main(["sweep", "--config", "free1d", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "fit unavailable (errors at tolerance floor)" in text
    assert text.count("beta") == 3


def test_sweep_is_deterministic_with_timing_off(tmp_path):
    cfg = tmp_path / "notiming.cfg"
    cfg.write_text(free1d_text(sweep="timing = off"))
    outputs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        code = main([
            "sweep", "--config", str(cfg), "--json", "--out", str(out),
            "--cutoffs", "2,4,6", "--reference", "12",
        ])
        assert code == 0
        outputs.append(out)
    for tag in ("2", "20", "200"):
        name = f"sweep_beta{tag}.csv"
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_quasi_opt_json(tmp_path, capsys):
    out = tmp_path / "qo"
    code = main([
        "quasi-opt", "--config", "si1d", "--json", "--out", str(out),
        "--cutoffs", "2,3,4", "--reference", "8",
    ])
    assert code == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] is True
    assert report["max_ratio"] <= report["bound"]
    assert len(report["ratios"]) == 3
    assert np.isfinite(report["orbital_constant"])
    assert read_json(out / "quasi_opt.json") == report


def test_missing_config_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text("[cell]\ndimension = 1\nlattice = 5.0\n[system]\nbeta = 1.0\ncutoff = 4.0\n")
    code = main(["scf", "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert code == 2
    err = capsys.readouterr().err
    assert "config error" in err
    assert "missing [system] n_electrons" in err


def test_unreadable_config_exits_2(tmp_path, capsys):
    code = main(["scf", "--config", str(tmp_path / "absent" / "no.cfg")])
    assert code == 2
    assert "cannot read config" in capsys.readouterr().err


def test_scf_failure_exits_1(tmp_path, capsys):
    cfg = tmp_path / "hopeless.cfg"
    cfg.write_text(
        bundled_config_path("free1d").read_text().replace(
            "max_iter = 200", "max_iter = 1"
        )
    )
    code = main(["scf", "--config", str(cfg), "--out", str(tmp_path / "y")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_console_script_smoke(tmp_path):
    out = tmp_path / "sub"
    proc = subprocess.run(
        ["mks", "scf", "--config", "free1d", "--json", "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    summary = json.loads(proc.stdout)
    assert summary["converged"] is True
    assert (out / "checkpoint.json").is_file()
