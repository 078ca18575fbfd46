import json
from pathlib import Path

import pytest

from ppide import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {"N": 400, "h": 1 / 16}
SHRINK = {
    "simulate": SMALL,
    "solve-bsde": SMALL,
    "u0": {**SMALL, "oracle_n_inner": 10, "oracle_n_t": 16},
    "gexpect": SMALL,
    "snell": SMALL,
    "path-frozen": {**SMALL, "compare": False, "theta": {"N": 200, "h": 1 / 8}, "psi": {"degrees": [2, 4], "n_t": 8}},
    "metric": {},
    "stability": {**SMALL, "sweep": [0.1, 0.05]},
    "residual": SMALL,
    "ibp-check": SMALL,
}


def load(kind, **extra):
    cfg = json.loads((CONFIGS / f"{kind}.json").read_text())
    return {**cfg, **SHRINK[kind], **extra}


@pytest.mark.parametrize("kind", sorted(cli.EXPERIMENTS))
def test_every_subcommand_runs_and_reproduces(kind, tmp_path):
    cfg = load(kind)
    text, body = cli.run(kind, cfg, tmp_path / "a")
    again, body_again = cli.run(kind, cfg, tmp_path / "b")
    report = json.loads(text)
    assert report["experiment"] == kind and report["schema"] == cli.SCHEMA
    assert report["config_hash"] == cli.config_hash(cfg)
    assert (tmp_path / "a" / f"{kind}.json").read_bytes() == (tmp_path / "b" / f"{kind}.json").read_bytes()
    assert text == again and body == body_again
    if body is not None:
        assert (tmp_path / "a" / f"{kind}.csv").read_text() == body


@pytest.mark.parametrize("kind", ["simulate", "stability", "path-frozen"])
def test_worker_count_does_not_change_outputs(kind):
    assert cli.run(kind, load(kind, workers=1)) == cli.run(kind, load(kind, workers=3))


def test_seed_flag_overrides_config():
    cfg = load("simulate")
    a, _ = cli.run("simulate", cfg, seed=11)
    b, _ = cli.run("simulate", {**cfg, "seed": 11})
    assert json.loads(a)["mean_XT"] == json.loads(b)["mean_XT"]
    assert json.loads(a)["mean_XT"] != json.loads(cli.run("simulate", cfg)[0])["mean_XT"]


def test_metric_prints_distances(tmp_path, capsys):
    cfg = tmp_path / "metric.json"
    cfg.write_text(json.dumps(load("metric")))
    assert cli.main(["metric", "--config", str(cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [ln.split()[0] for ln in lines] == ["d_j1", "d_m1", "d_m2", "d_p", "d_u"]
    vals = dict((k, float(v)) for k, v in (ln.split() for ln in lines))
    assert vals["d_u"] == 1.0 and vals["d_m1"] <= 0.25 + 1e-9


def test_assumption_violation_names_assumption(tmp_path, capsys):
    cfg = load("u0", driver={"kind": "semilinear", "a_p": -0.5})
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(cfg))
    assert cli.main(["u0", "--config", str(path)]) == 1
    err = capsys.readouterr().err
    assert "AssumptionError" in err and "driver-monotone-in-p" in err


def test_eps_above_jump_floor_is_rejected(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(load("path-frozen", eps=0.5)))
    assert cli.main(["path-frozen", "--config", str(path)]) == 1
    assert "jump-size-bounds" in capsys.readouterr().err


def test_unreadable_config(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert cli.main(["simulate", "--config", str(path)]) == 2
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2


def test_schema_mismatch(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({**load("simulate"), "schema": 99}))
    assert cli.main(["simulate", "--config", str(path)]) == 1
    assert "schema" in capsys.readouterr().err


def test_stdout_is_report(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(load("residual")))
    assert cli.main(["residual", "--config", str(path), "--out", str(tmp_path / "out")]) == 0
    assert capsys.readouterr().out == (tmp_path / "out" / "residual.json").read_text()
