from __future__ import annotations

import csv
import io
import json

import pytest

from overlayroute import __version__
from overlayroute.cli import SWEEP_COLUMNS, controller_for, main
from overlayroute.scenario import ScenarioError, bundled_scenario

BAD_RATIO = """
network:
  buffer_cap: 5
  nodes:
    - {id: s1, role: overlay}
    - {id: s2, role: overlay}
    - {id: d, role: overlay}
    - {id: u, role: underlay}
  links:
    - {id: a1, tail: s1, head: u, capacity: {kind: deterministic, value: 1}}
    - {id: a2, tail: s2, head: u, capacity: {kind: deterministic, value: 1}}
    - {id: ud, tail: u, head: d, capacity: {kind: deterministic, value: 1}}
  flows:
    - {id: f1, source: s1, destination: d, arrivals: {kind: deterministic, value: 0}, route: [a1, ud]}
    - {id: f2, source: s2, destination: d, arrivals: {kind: deterministic, value: 0}, route: [a2, ud]}
  sharing:
    - {link: ud, flow: f1, mu: 0.7}
    - {link: ud, flow: f2, mu: 0.7}
  routing:
    - {flow: f1, link: a1, next: ud, p: 1.0}
    - {flow: f2, link: a2, next: ud, p: 1.0}
"""


def test_validate_bundled(capsys):
    assert main(["validate", "--scenario", "fig2"]) == 0
    assert capsys.readouterr().out.strip() == "fig2: PASS"


def test_validate_reports_violation(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(BAD_RATIO)
    assert main(["validate", "--scenario", str(p)]) == 1
    assert "ratio-sum" in capsys.readouterr().out


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--scenario", "toy-parallel", "--horizon", "1000", "--out", str(out)]) == 0
    assert "avg_delay" in capsys.readouterr().out
    man = json.loads((out / "manifest.json").read_text())
    assert man["scenario"] == "toy-parallel" and man["sim"]["horizon"] == 1000
    assert (out / "qtable_f1.csv").exists()


def test_sweep_table(tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--scenario", "fig5", "--horizon", "800", "--rates", "0.2,0.5",
               "--controllers", "random-split,poc-t", "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert list(rows[0]) == SWEEP_COLUMNS
    assert [(r["controller"], r["rate"]) for r in rows] == [
        ("random-split", "0.2"), ("random-split", "0.5"), ("poc-t", "0.2"), ("poc-t", "0.5")]
    assert capsys.readouterr().out == (out / "sweep.csv").read_text()


def test_full_fig2_sweep_has_one_row_per_pair(tmp_path):
    rates = [round(0.1 * k, 1) for k in range(1, 10)]
    ctls = ["poc", "poc-t", "bp", "obp", "random-split"]
    out = tmp_path / "sweep"
    rc = main(["sweep", "--scenario", "fig2", "--horizon", "50", "--rates", ",".join(map(str, rates)),
               "--controllers", ",".join(ctls), "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(io.StringIO((out / "sweep.csv").read_text())))
    assert len(rows) == 45
    assert {(r["controller"], float(r["rate"])) for r in rows} == {(c, r) for c in ctls for r in rates}


def test_single_point_sweep_repeats_exactly(tmp_path):
    texts = []
    for k in range(2):
        out = tmp_path / f"s{k}"
        assert main(["sweep", "--scenario", "fig2", "--horizon", "2000", "--rates", "0.5",
                     "--controllers", "obp", "--seed", "4", "--out", str(out)]) == 0
        texts.append((out / "sweep.csv").read_text())
    assert len(texts[0].strip().splitlines()) == 2
    assert texts[0] == texts[1]


def test_sweep_usage_errors():
    with pytest.raises(SystemExit) as e:
        main(["sweep", "--scenario", "fig5", "--rates", "0.2", "--controllers", ","])
    assert e.value.code == 2
    with pytest.raises(SystemExit):
        main(["sweep", "--scenario", "fig5", "--rates", "a,b", "--controllers", "bp"])


def test_diagnose(tmp_path):
    out = tmp_path / "diag"
    rc = main(["diagnose", "--scenario", "fig5", "--horizon", "1000", "--points", "3", "--out", str(out)])
    assert rc == 0
    d = json.loads((out / "diagnosis.json").read_text())
    assert len(d["points"]) == 3 and len(d["prices"]) == 3


def test_errors_return_one(capsys):
    assert main(["run", "--scenario", "nowhere"]) == 1
    assert capsys.readouterr().err.startswith("error:")
    assert main(["run", "--scenario", "fig5", "--horizon", "10", "--controller", "teleport"]) == 1


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert __version__ in capsys.readouterr().out


def test_controller_for_carries_budget():
    sc = bundled_scenario("fig2")
    assert controller_for(sc, "poc-t") == {"id": "poc-t", "total_budget": 4.0}
    assert controller_for(sc, "bp") == {"id": "bp"}
    assert controller_for(sc, "poc")["random_ties"] is True
    toy = bundled_scenario("toy-parallel")
    toy.controller = {"id": "bp"}
    with pytest.raises(ScenarioError):
        controller_for(toy, "poc")
