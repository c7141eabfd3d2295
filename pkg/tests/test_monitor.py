import json
import os
import time

import psutil
import pytest

from _support import child_command, closed_port_url, row_times
from firecampaign import monitor as mon
from firecampaign.tracker import WatchSpec


# --- alert rules ------------------------------------------------------------

def test_parse_alert_rule_forms():
    r = mon.parse_alert_rule("visibility_min below 3 for 1 : abort")
    assert r == mon.AlertRule("visibility_min", "below", 3.0, 1, "abort")
    assert mon.parse_alert_rule("hrr ABOVE 1e3").action == "notify"
    assert mon.parse_alert_rule("x above -2.5 for 4").window == 4
    assert str(r) == "visibility_min below 3 for 1 : abort"


@pytest.mark.parametrize("text", ["", "x between 3", "x below abc", "x below 3 for 0", "x below 3 : explode",
                                  "x below nan"])
def test_rule_syntax_errors(text):
    with pytest.raises(mon.RuleSyntaxError):
        mon.parse_alert_rule(text)


def test_evaluate_rule_windows():
    rule = mon.AlertRule("v", "below", 3.0, window=2)
    assert mon.evaluate_rule(rule, [5.0]) == "inactive"
    assert mon.evaluate_rule(rule, [5.0, 2.0]) == "inactive"
    assert mon.evaluate_rule(rule, [5.0, 2.0, 1.0]) == "firing"
    assert mon.evaluate_rule(rule, [(0.0, 0, 2.0), (1.0, 1, 1.0)]) == "firing"
    assert mon.evaluate_rule(rule, [2.0, 1.0, 3.0]) == "inactive"  # threshold itself is not below
    assert mon.evaluate_rule(mon.AlertRule("v", "above", 3.0), [3.5]) == "firing"


# --- emissions --------------------------------------------------------------

def test_emissions_trapezoid():
    samples = [mon.ResourceSample(0.0, 0, 0, 100.0), mon.ResourceSample(3600.0, 0, 0, 300.0),
               mon.ResourceSample(5400.0, 0, 0, 300.0)]
    est = mon.estimate_emissions(samples, 100.0, "fallback")
    # (100+300)/2 W for 1 h + 300 W for 0.5 h = 350 Wh
    assert est.energy == pytest.approx(0.35, rel=1e-15)
    assert est.emissions == pytest.approx(35.0, rel=1e-15)
    assert est.intensity_source == "fallback"


def test_emissions_degenerate_and_negative():
    assert mon.estimate_emissions([], 200.0).emissions == 0.0
    assert mon.estimate_emissions([mon.ResourceSample(1.0, 0, 0, 5.0)], 200.0).energy == 0.0
    with pytest.raises(mon.NegativeInterval):
        mon.estimate_emissions([mon.ResourceSample(2.0, 0, 0, 1.0), mon.ResourceSample(1.0, 0, 0, 1.0)], 1.0)


def test_sample_process_self():
    s = mon.sample_process(psutil.Process(os.getpid()), cores=4, watts_per_core=10.0)
    assert s.power_draw == 40.0 and s.rss > 0 and s.cpu_seconds > 0


def test_intensity_live(carbon_server):
    url, server = carbon_server
    cfg = mon.CarbonClientConfig(url, "secret", {"GB": 230.0})
    assert mon.get_intensity("GB", cfg) == (123.5, "live")
    assert server.seen[-1] == ("/intensity?zone=GB", "secret")


def test_intensity_rejected_token_uses_fallback(carbon_server):
    url, _ = carbon_server
    cfg = mon.CarbonClientConfig(url, "wrong", {"GB": 230.0})
    assert mon.get_intensity("gb", cfg) == (230.0, "fallback")


def test_intensity_down_and_unknown_zone():
    cfg = mon.CarbonClientConfig(closed_port_url(), "secret", mon.load_fallback_table(), timeout=1.0)
    assert mon.get_intensity("FR", cfg) == (60.0, "fallback")
    with pytest.raises(mon.UnknownZone):
        mon.get_intensity("ATLANTIS", cfg)


def test_config_from_env(monkeypatch, tmp_path):
    table = tmp_path / "t.json"
    table.write_text(json.dumps({"xx": 7}))
    monkeypatch.setenv(mon.ENDPOINT_ENV, "http://example.invalid/")
    monkeypatch.setenv(mon.TOKEN_ENV, "tok")
    monkeypatch.setenv(mon.FALLBACK_ENV, str(table))
    cfg = mon.CarbonClientConfig.from_env()
    assert (cfg.endpoint, cfg.token, cfg.fallback) == ("http://example.invalid/", "tok", {"XX": 7.0})


# --- supervision ------------------------------------------------------------

def _watch(d, chid="fake"):
    w = WatchSpec.for_chid(d, chid)
    w.hrr = None
    w.state = None
    return w


def test_supervise_to_completion(store, tmp_path):
    res = mon.supervise(child_command(tmp_path, n=5, interval=0.02), _watch(tmp_path), [], store,
                        name="ok", poll=0.05)
    assert res.status == "completed" and res.returncode == 0
    run = store.get_run(res.run_id)
    assert run.status == "completed" and run.metadata["fds.version"] == "6.7.9"
    assert store.metric(res.run_id, "visibility_min").values == [10.0, 9.0, 8.0, 7.0, 6.0]
    assert store.metric(res.run_id, "vis_mean").values == [11.0, 10.0, 9.0, 8.0, 7.0]
    names = {a.name for a in store.artifacts(res.run_id)}
    assert names == {"fake_devc.csv", "fake.out"}
    assert any("time step 5" in e.message for e in store.events(res.run_id))


def test_supervise_notify_rule_does_not_stop(store, tmp_path):
    rule = mon.parse_alert_rule("visibility_min below 8 for 2")
    res = mon.supervise(child_command(tmp_path, n=5, interval=0.01), _watch(tmp_path), [rule], store, poll=0.05)
    assert res.status == "completed" and res.fired == [str(rule)]
    assert any("alert firing" in e.message for e in store.events(res.run_id))


def test_supervise_nonzero_exit_fails(store, tmp_path):
    res = mon.supervise(child_command(tmp_path, "fake", 0.01, 1, 1, 2, 3), _watch(tmp_path), [], store, poll=0.05)
    assert res.status == "failed" and res.returncode == 3


def test_supervise_launch_failure(store, tmp_path):
    with pytest.raises(mon.LaunchFailure) as err:
        mon.supervise([str(tmp_path / "no-such-binary")], _watch(tmp_path), [], store)
    assert store.get_run(err.value.run_id).status == "failed"


def test_abort_escalates_to_kill(store, tmp_path):
    rule = mon.parse_alert_rule("visibility_min below 9.5 : abort")
    t0 = time.time()
    res = mon.supervise(child_command(tmp_path, "fake", 0.05, 10, 1, 400, "ignore-term"), _watch(tmp_path),
                        [rule], store, poll=0.1, grace=0.5)
    assert res.status == "terminated"
    assert res.returncode == -9
    assert time.time() - t0 < 5.0
    # rows written before the kill are all recorded
    assert len(store.metric(res.run_id, "visibility_min").points) == len(row_times(tmp_path))


def test_resources_recorded(store, tmp_path):
    res = mon.supervise(child_command(tmp_path, n=6, interval=0.05), _watch(tmp_path), [], store, poll=0.05)
    samples = store.resources(res.run_id)
    assert len(samples) >= 2
    assert all(p == mon.DEFAULT_WATTS_PER_CORE for *_, p in samples)


def test_terminate_run_idempotent(store):
    rid = store.create_run()
    store.set_status(rid, "running")
    assert mon.terminate_run(store, rid) == "terminated"
    assert mon.terminate_run(store, rid) == "terminated"
