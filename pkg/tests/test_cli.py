import json

import pytest

from pcfc.cli import main

CFG = "window_px = 200\ndivisions = 30\ngrid_m = 3\nseeds = 139, 176\nholdout_seeds = 160\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "run.cfg").write_text(CFG)
    assert main(["surface", "--config", str(d / "run.cfg"), "--out", str(d)]) == 0
    assert main(["build-db", "--surface", str(d / "surface.csv"), "--out", str(d)]) == 0
    return d


def test_microgen_mesh_solve(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text("seeds = 7\n")
    assert main(["microgen", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path)]) == 0
    micro = str(tmp_path / "rve_7.txt")
    assert main(["mesh", "--micro", micro, "--divisions", "10", "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "elements.csv").exists()
    capsys.readouterr()
    assert main(["solve", "--micro", micro, "--divisions", "20", "--sx", "1000", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["rve"][0] == pytest.approx(1000)
    assert out["mode"] in {"FT", "FC", "MT", "MC"}


def test_query(workdir, capsys):
    capsys.readouterr()
    rc = main(["query", "--db", str(workdir / "db.pcfc"), "--point", "0", "0", "0", "0",
               "--point", "1e6", "0", "0", "0"])
    assert rc == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert [x["decision"] for x in lines] == ["inside", "outside"]


def test_validation_thresholds(workdir):
    cfg = str(workdir / "run.cfg")
    hold = str(workdir / "holdout.csv")
    db = str(workdir / "db.pcfc")
    assert main(["validate-a", "--config", cfg, "--db", db, "--test", hold, "--min-accuracy", "0"]) == 0
    assert main(["validate-a", "--config", cfg, "--db", db, "--test", hold, "--alpha", "0.0001",
                 "--min-accuracy", "100"]) == 4
    assert main(["validate-b", "--config", cfg, "--surface", str(workdir / "surface.csv"), "--test", hold,
                 "--alpha", "0.0001", "--max-fn", "0"]) == 4


def test_config_error_exit_code(tmp_path):
    (tmp_path / "bad.cfg").write_text("nonsense = 3\n")
    assert main(["pipeline", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)]) == 2
    assert main(["mesh", "--micro", str(tmp_path / "missing.txt")]) == 2


def test_numeric_failure_exit_code(tmp_path):
    (tmp_path / "c.cfg").write_text("window_px = 20\ngrid_m = 3\n")
    assert main(["pipeline", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path)]) == 3


def test_pipeline_and_converge(tmp_path, capsys):
    (tmp_path / "c.cfg").write_text(CFG)
    assert main(["pipeline", "--config", str(tmp_path / "c.cfg"), "--seed", "5", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["config"]["seed"] == 5
    assert main(["converge", "--config", str(tmp_path / "c.cfg"), "--windows", "100",
                 "--divisions-list", "10", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "convergence.json").exists()
