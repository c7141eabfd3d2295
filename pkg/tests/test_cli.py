import csv
import json

import pytest

from firecampaign import monitor as mon
from firecampaign.cli import build_parser, main
from firecampaign.tracker import RunStore

from _support import closed_port_url


def _scenario(tmp_path, duration=120.0, x=12.0, y=22.0):
    (tmp_path / "b.toml").write_text("cell = 2.0\n")
    path = tmp_path / "s.toml"
    path.write_text(f"building = 'b.toml'\n[scenario]\nx = {x}\ny = {y}\nfloor = 0\nduration = {duration}\n"
                    "[output]\nchid = 'cli'\ndt = 0.5\nslice_interval = 1.0\n")
    return path


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_usage_errors(capsys, tmp_path):
    assert _run(["--bogus"], capsys)[0] == 2
    assert _run([], capsys)[0] == 2
    assert _run(["run"], capsys)[0] == 2  # --scenario missing
    code, _, err = _run(["--store", str(tmp_path), "list", "--filter", "bogus=1"], capsys)
    assert code == 2 and "bogus" in err
    code, _, _ = _run(["--store", str(tmp_path), "run", "--scenario", "x.toml", "--alert", "vis between 3"], capsys)
    assert code == 2


def test_parser_examples():
    args = build_parser().parse_args(["run", "--scenario", "s.toml", "--alert",
                                      "visibility_min below 3 for 1 : abort"])
    assert args.command == "run" and mon.parse_alert_rule(args.alert[0]).action == "abort"
    args = build_parser().parse_args(["optimize", "--init", "10", "--guided", "10", "--seed", "7"])
    assert (args.init, args.guided, args.seed) == (10, 10, 7)


def test_domain_errors_exit_1(capsys, tmp_path):
    store = ["--store", str(tmp_path / "st")]
    assert _run([*store, "import", "--dir", str(tmp_path / "nope")], capsys)[0] == 1
    assert _run([*store, "lineage", "missing"], capsys)[0] == 1
    assert _run([*store, "score", "--history", str(tmp_path / "none.bin")], capsys)[0] == 1
    assert _run([*store, "emissions", "--run", "missing", "--zone", "GB"], capsys)[0] == 1
    bad = tmp_path / "bad.toml"  # default building: (30, 13) sits in a pillar buffer
    bad.write_text("[scenario]\nx = 30.0\ny = 13.0\nfloor = 0\n")
    code, _, err = _run([*store, "run", "--scenario", str(bad), "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "clearance" in err


def test_run_score_import_lineage(capsys, tmp_path):
    store = ["--store", str(tmp_path / "st")]
    sc = _scenario(tmp_path)
    out = tmp_path / "out"
    code, text, _ = _run([*store, "run", "--scenario", str(sc), "--out", str(out), "--poll", "0.05",
                          "--alert", "visibility_min below 29.9"], capsys)
    assert code == 0
    assert text.startswith("run ") and ": completed" in text
    assert "alert fired: visibility_min below 29.9 for 1 : notify" in text
    rid = text.split()[1].rstrip(":")
    s = RunStore(tmp_path / "st")
    assert s.get_run(rid).status == "completed"
    assert len(s.metric(rid, "visibility_min").values) == 8

    code, text, _ = _run(["score", "--history", str(out / "cli_slices.bin")], capsys)
    assert code == 0 and text.startswith("badness ")
    rows = list(csv.reader((out / "cli_slices_breakdown.csv").open()))
    assert len(rows) == 121
    assert float(text.split()[1]) == pytest.approx(float(rows[-1][3]), abs=1e-6)

    code, text, _ = _run([*store, "import", "--dir", str(out)], capsys)
    imported = text.strip()
    assert code == 0
    assert s.metric(imported, "visibility_min").values == s.metric(rid, "visibility_min").values

    code, text, _ = _run([*store, "lineage", rid], capsys)
    assert code == 0 and any(line.startswith("artifact:") for line in text.splitlines())
    code, text, _ = _run([*store, "list", "--json", "--filter", "folder=/historic"], capsys)
    assert code == 0 and json.loads(text.splitlines()[0])["id"] == imported


def test_run_abort_alert(capsys, tmp_path):
    sc = _scenario(tmp_path, duration=600.0)
    code, text, _ = _run(["--store", str(tmp_path / "st"), "run", "--scenario", str(sc), "--out",
                          str(tmp_path / "o"), "--poll", "0.05", "--grace", "1",
                          "--alert", "visibility_min below 29 : abort"], capsys)
    assert code == 0
    assert "alert fired: visibility_min below 29 for 1 : abort" in text
    assert ": terminated" in text or ": completed" in text


def test_optimize_small(capsys, tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("[campaign]\nn_init = 3\nn_guided = 2\nseed = 1\n"
                   "[objective]\ncell = 2.0\ndt = 0.5\nduration = 300.0\nslice_interval = 2.5\n")
    out = tmp_path / "camp"
    code, text, _ = _run(["--store", str(tmp_path / "st"), "optimize", "--config", str(cfg), "--out", str(out)],
                         capsys)
    assert code == 0 and "from the left wall" in text
    rows = list(csv.DictReader((out / "observations.csv").open()))
    assert len(rows) == 5
    summary = json.loads((out / "summary.json").read_text())
    assert summary["evaluations_used"] == 5
    assert summary["best"]["value"] == max(float(r["value"]) for r in rows)

    code, _, _ = _run(["--store", str(tmp_path / "st2"), "optimize", "--config", str(cfg), "--out",
                       str(tmp_path / "camp2"), "--minimize", "--guided", "1"], capsys)
    rows = list(csv.DictReader((tmp_path / "camp2" / "observations.csv").open()))
    summary = json.loads((tmp_path / "camp2" / "summary.json").read_text())
    assert code == 0 and len(rows) == 4
    assert summary["orientation"] == "minimize"
    assert summary["best"]["value"] == min(float(r["value"]) for r in rows)


def test_trend(capsys, tmp_path):
    s = RunStore(tmp_path / "st")
    for k in range(4):
        rid = s.create_run(folder="/sprinkler", metadata={"flow": float(k)})
        s.set_status(rid, "running")
        s.log_metrics(rid, 0.0, 0, {"temp": 100.0 - k})
        s.set_status(rid, "completed")
    out = tmp_path / "t.csv"
    code, _, _ = _run(["--store", str(s.root), "trend", "--filter", "folder=/sprinkler", "--key", "flow",
                       "--metric", "temp", "--points", "4", "--out", str(out)], capsys)
    assert code == 0
    rows = list(csv.reader(out.open()))
    assert len(rows) == 5
    assert [float(r[1]) for r in rows[1:]] == pytest.approx([100.0, 99.0, 98.0, 97.0], abs=1e-5)
    code, _, _ = _run(["--store", str(s.root), "trend", "--filter", "folder=/none", "--key", "flow",
                       "--metric", "temp"], capsys)
    assert code == 1


def test_emissions(capsys, tmp_path, monkeypatch, carbon_server):
    s = RunStore(tmp_path / "st")
    rid = s.create_run()
    s.set_status(rid, "running")
    s.log_resource(rid, 0.0, 0.0, 0, 100.0)
    s.log_resource(rid, 7200.0, 0.0, 0, 100.0)
    url, _ = carbon_server
    monkeypatch.setenv(mon.ENDPOINT_ENV, url)
    monkeypatch.setenv(mon.TOKEN_ENV, "secret")
    code, text, _ = _run(["--store", str(s.root), "emissions", "--run", rid, "--zone", "gb"], capsys)
    assert code == 0 and "intensity source: live" in text
    meta = s.get_run(rid).metadata
    assert meta["emissions.energy_kwh"] == pytest.approx(0.2)
    assert meta["emissions.grams"] == pytest.approx(0.2 * 123.5)
    monkeypatch.setenv(mon.ENDPOINT_ENV, closed_port_url())
    code, text, _ = _run(["--store", str(s.root), "emissions", "--run", rid, "--zone", "GB"], capsys)
    assert code == 0 and "intensity source: fallback" in text
    assert s.get_run(rid).metadata["emissions.source"] == "fallback"


def test_module_entry_point():
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "firecampaign", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "optimize" in proc.stdout
