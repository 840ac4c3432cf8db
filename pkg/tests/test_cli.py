import json
import os

import numpy as np
import pytest
import yaml

from radbody import cli, spectral

SIGMA = spectral.stefan_sigma()

BASE_EQ = {
    "domain": {"shape": "ball", "center": [0.0, 0.0, 0.0], "radius": 1.0},
    "medium": {"absorption": 1.0, "scattering": 0.0, "kernel": "isotropic"},
    "boundary": {"kind": "equilibrium", "temperature": 1.0},
    "grids": {
        "spatial": {"h": 0.2},
        "angular": {"n_polar": 4, "n_azimuth": 8},
        "spectral": {"n_nodes": 32, "t_ref": 1.0},
        "ray": {"h": 0.1},
    },
    "solver": {"mode": "grey", "tol": 1.0e-9, "max_iter": 400},
    "output": {"dir": "out", "dump_field": True, "entropy": True},
    "seed": 3,
}


def write_cfg(tmp_path, cfg, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_nodes(path):
    data = np.genfromtxt(path, delimiter=",", names=True)
    return data


def test_solve_equilibrium(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["output"]["dir"] = str(tmp_path / "out")
    code = cli.main(["solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 0
    nodes = read_nodes(tmp_path / "out" / "nodes.csv")
    assert np.max(np.abs(nodes["T"] - 1.0)) <= 1e-2
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["solver_report"]["status"] == "converged"
    # the full resolved config is embedded for provenance
    assert report["config"]["grids"]["angular"]["n_polar"] == 4
    assert report["config"]["solver"]["max_iter"] == 400
    # entropy production vanishes at equilibrium
    scale = 4 * np.pi * SIGMA * (4 * np.pi / 3)
    assert report["entropy_report"]["production_volume_integral"] <= 1e-8 * scale


def test_solve_mode_compatibility_error(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["medium"]["absorption"] = {"table": [[0.5, 1.0], [5.0, 0.5]]}
    code = cli.main(["solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 1
    err = capsys.readouterr().err
    assert "mode-compatibility" in err and "grey" in err


def test_solve_unknown_key_rejected(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["solvre"] = {"mode": "grey"}
    code = cli.main(["solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 1
    assert "solvre" in capsys.readouterr().err


def test_solve_scattering_constant(tmp_path):
    cfg = {
        "domain": {"shape": "ball", "radius": 1.0},
        "medium": {"absorption": 0.0, "scattering": 1.0},
        "boundary": {"kind": "constant", "value": 3.0},
        "grids": {
            "spatial": {"h": 0.25},
            "angular": {"n_polar": 4, "n_azimuth": 8},
            "spectral": {"n_nodes": 8, "t_ref": 1.0},
            "ray": {"h": 0.0625},
        },
        "solver": {"mode": "scattering", "tol": 1.0e-7, "max_iter": 300},
        "output": {"dir": str(tmp_path / "out_sc"), "dump_field": True, "entropy": False},
    }
    code = cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 0
    header, arrays = cli.read_field_dump(str(tmp_path / "out_sc" / "solution.rbf"))
    assert np.max(np.abs(arrays["I"] - 3.0)) <= 1e-6


def test_solve_non_convergence_exit_code(tmp_path):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["output"]["dir"] = str(tmp_path / "out2")
    cfg["output"]["dump_field"] = False
    cfg["output"]["entropy"] = False
    cfg["solver"]["max_iter"] = 1
    code = cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)])
    assert code == 2


def test_node_table_deterministic(tmp_path):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["output"]["dump_field"] = False
    cfg["output"]["entropy"] = False
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    path = write_cfg(tmp_path, cfg)
    assert cli.main(["--quiet", "solve", "--config", path, "--output", str(out1)]) == 0
    assert cli.main(["--quiet", "solve", "--config", path, "--output", str(out2)]) == 0
    assert (out1 / "nodes.csv").read_bytes() == (out2 / "nodes.csv").read_bytes()


def test_dump_round_trip(tmp_path):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["output"]["dir"] = str(tmp_path / "out3")
    cfg["output"]["entropy"] = False
    assert cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)]) == 0
    dump = str(tmp_path / "out3" / "solution.rbf")
    h1, a1 = cli.read_field_dump(dump)
    h2, a2 = cli.read_field_dump(dump)
    assert h1 == h2
    assert all(np.array_equal(a1[k], a2[k]) for k in a1)
    assert set(a1) == {"T", "w"}
    # sidecar descriptor exists
    assert os.path.exists(dump + ".txt")


def test_validate_passes(capsys):
    assert cli.main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "stefan_boltzmann" in out and "FAIL" not in out


def test_validate_fault_injection(monkeypatch, capsys):
    monkeypatch.setattr(cli, "_TEST_KERNEL_MASS_SCALE", 1.01)
    assert cli.main(["validate"]) == 3
    out = capsys.readouterr().out
    assert "FAIL" in out and "kernel_normalization" in out


ORACLE_CFG = {
    "domain": {"shape": "ball", "radius": 1.0},
    "medium": {"absorption": 1.0},
    "boundary": {"kind": "constant", "value": 0.3},
    "grids": {
        "spatial": {"h": 2.0 / 7.0},
        "angular": {"n_polar": 2, "n_azimuth": 13},
        "spectral": {"n_nodes": 8, "t_ref": 1.0},
    },
    "solver": {"mode": "grey", "tol": 1.0e-10, "max_iter": 400},
    "oracle": {"tolerance": 5.0e-3},
}


def test_oracle_grey_agrees(tmp_path, capsys):
    code = cli.main(["--quiet", "oracle", "--config", write_cfg(tmp_path, ORACLE_CFG)])
    assert code == 0
    assert "max=" in capsys.readouterr().out


def test_oracle_mismatched_tolerance(tmp_path, capsys):
    cfg = json.loads(json.dumps(ORACLE_CFG))
    cfg["oracle"]["tolerance"] = 1e-12
    code = cli.main(["--quiet", "oracle", "--config", write_cfg(tmp_path, cfg)])
    assert code == 3
    out = capsys.readouterr().out
    assert "max=" in out  # measured deviation is printed


def test_entropy_command_equilibrium(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["output"]["dir"] = str(tmp_path / "out4")
    cfg["output"]["entropy"] = False
    assert cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)]) == 0
    assert cli.main(["entropy", str(tmp_path / "out4" / "solution.rbf")]) == 0
    out = capsys.readouterr().out
    prod = float([l for l in out.splitlines() if "production_volume_integral" in l][0].split()[-1])
    scale = 4 * np.pi * SIGMA * (4 * np.pi / 3)
    assert prod <= 1e-8 * scale


def test_entropy_command_zero_field(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["boundary"] = {"kind": "zero"}
    cfg["output"]["dir"] = str(tmp_path / "out5")
    cfg["output"]["entropy"] = False
    assert cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)]) == 0
    assert cli.main(["entropy", str(tmp_path / "out5" / "solution.rbf")]) == 0
    out = capsys.readouterr().out
    for key in ("phi_out", "phi_in", "i_out", "i_in", "production_volume_integral"):
        val = float([l for l in out.splitlines() if key in l][0].split()[-1])
        assert val == 0.0


def test_entropy_command_two_sided_beam(tmp_path, capsys):
    cfg = json.loads(json.dumps(BASE_EQ))
    cfg["boundary"] = {
        "kind": "tabulated",
        "spectrum": [[0.5, 0.5], [1.0, 1.0], [3.0, 0.7], [10.0, 0.05]],
        "axis": [0.0, 0.0, 1.0],
        "angular_profile": [[-1.0, 1.6], [-0.2, 0.2], [0.2, 0.2], [1.0, 1.6]],
    }
    cfg["output"]["dir"] = str(tmp_path / "out6")
    cfg["output"]["entropy"] = False
    assert cli.main(["--quiet", "solve", "--config", write_cfg(tmp_path, cfg)]) == 0
    assert cli.main(["entropy", str(tmp_path / "out6" / "solution.rbf")]) == 0
    out = capsys.readouterr().out
    phi_out = float([l for l in out.splitlines() if "phi_out" in l][0].split()[-1])
    phi_in = float([l for l in out.splitlines() if "phi_in" in l][0].split()[-1])
    assert phi_out + phi_in > 0.0


def test_entropy_command_unreadable(tmp_path, capsys):
    bad = tmp_path / "junk.rbf"
    bad.write_bytes(b"not a dump")
    assert cli.main(["entropy", str(bad)]) == 1
