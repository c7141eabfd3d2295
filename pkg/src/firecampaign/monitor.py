"""Supervise a simulation process, stream its outputs into a run and act on alerts.

Also home to the resource sampler and the CO2 estimate built on it.
"""

from __future__ import annotations

import json
import logging
import math
import os
import re
import signal
import subprocess
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import psutil
import requests

from . import fds_formats as ff
from .tracker import FdsIngestor, RunStore, WatchSpec

log = logging.getLogger(__name__)

ENDPOINT_ENV = "FIRECAMPAIGN_CARBON_ENDPOINT"
TOKEN_ENV = "FIRECAMPAIGN_CARBON_TOKEN"
FALLBACK_ENV = "FIRECAMPAIGN_CARBON_FALLBACK"
DEFAULT_WATTS_PER_CORE = 12.0


class MonitorError(Exception):
    pass


class LaunchFailure(MonitorError):
    def __init__(self, message: str, run_id: str | None = None):
        super().__init__(message)
        self.run_id = run_id


class WatchFailure(MonitorError):
    pass


class NegativeInterval(ValueError):
    pass


class UnknownZone(LookupError):
    pass


class RuleSyntaxError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Alert rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlertRule:
    metric: str
    comparison: str  # below | above
    threshold: float
    window: int = 1
    action: str = "notify"  # notify | abort

    def __post_init__(self):
        if self.comparison not in ("below", "above"):
            raise RuleSyntaxError(f"comparison must be 'below' or 'above', not {self.comparison!r}")
        if self.action not in ("notify", "abort"):
            raise RuleSyntaxError(f"action must be 'notify' or 'abort', not {self.action!r}")
        if int(self.window) != self.window or self.window < 1:
            raise RuleSyntaxError("window must be an integer >= 1")
        if not math.isfinite(self.threshold):
            raise RuleSyntaxError("threshold must be finite")

    def satisfied(self, value: float) -> bool:
        return value < self.threshold if self.comparison == "below" else value > self.threshold

    def __str__(self) -> str:
        return f"{self.metric} {self.comparison} {self.threshold:g} for {self.window} : {self.action}"


_RULE = re.compile(
    r"^\s*(?P<metric>\S+)\s+(?P<cmp>below|above)\s+(?P<thr>\S+)"
    r"(?:\s+for\s+(?P<win>\d+))?\s*(?::\s*(?P<act>notify|abort))?\s*$",
    re.IGNORECASE,
)


def parse_alert_rule(text: str) -> AlertRule:
    """Parse ``"<metric> <below|above> <threshold> for <n> : <notify|abort>"``."""
    m = _RULE.match(text)
    if m is None:
        raise RuleSyntaxError(f"cannot parse alert rule {text!r}")
    try:
        threshold = float(m.group("thr"))
    except ValueError:
        raise RuleSyntaxError(f"bad threshold in {text!r}") from None
    return AlertRule(
        m.group("metric"), m.group("cmp").lower(), threshold,
        int(m.group("win") or 1), (m.group("act") or "notify").lower(),
    )


def evaluate_rule(rule: AlertRule, points) -> str:
    """``"firing"`` iff the last ``rule.window`` values all satisfy the comparison.

    ``points`` may be bare values or ``(time, step, value)`` tuples.
    """
    recent = list(points)[-rule.window:]
    if len(recent) < rule.window:
        return "inactive"
    values = [p[-1] if isinstance(p, tuple) else p for p in recent]
    return "firing" if all(rule.satisfied(v) for v in values) else "inactive"


# ---------------------------------------------------------------------------
# Resources and emissions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResourceSample:
    timestamp: float
    cpu_seconds: float
    rss: int
    power_draw: float


def sample_process(proc: psutil.Process, cores: int = 1,
                   watts_per_core: float = DEFAULT_WATTS_PER_CORE) -> ResourceSample | None:
    """Cumulative CPU time and RSS of a process and its children."""
    try:
        procs = [proc] + proc.children(recursive=True)
    except psutil.Error:
        return None
    cpu = 0.0
    rss = 0
    for p in procs:
        try:
            t = p.cpu_times()
            cpu += t.user + t.system
            rss += p.memory_info().rss
        except psutil.Error:
            continue
    return ResourceSample(time.time(), cpu, rss, watts_per_core * cores)


@dataclass(frozen=True)
class EmissionEstimate:
    energy: float        # kWh
    intensity: float     # gCO2/kWh
    emissions: float     # g
    intensity_source: str = "live"


def estimate_emissions(samples, intensity: float, source: str = "live") -> EmissionEstimate:
    """Energy from trapezoidal integration of power draw, times carbon intensity."""
    samples = list(samples)
    joules = []
    for a, b in zip(samples, samples[1:]):
        dt = b.timestamp - a.timestamp
        if dt < 0:
            raise NegativeInterval(f"sample at {b.timestamp} precedes {a.timestamp}")
        joules.append(0.5 * (a.power_draw + b.power_draw) * dt)
    energy = math.fsum(joules) / 3.6e6
    return EmissionEstimate(energy, float(intensity), energy * float(intensity), source)


@dataclass
class CarbonClientConfig:
    endpoint: str | None = None
    token: str | None = None
    fallback: dict[str, float] | None = None
    field: str = "carbonIntensity"
    timeout: float = 5.0

    @classmethod
    def from_env(cls, fallback_path=None) -> "CarbonClientConfig":
        path = fallback_path or os.environ.get(FALLBACK_ENV)
        return cls(os.environ.get(ENDPOINT_ENV), os.environ.get(TOKEN_ENV), load_fallback_table(path))


def load_fallback_table(path=None) -> dict[str, float]:
    if path is None:
        text = (resources.files("firecampaign") / "data" / "carbon_intensity.json").read_text()
    else:
        text = Path(path).read_text()
    return {k.upper(): float(v) for k, v in json.loads(text).items() if not k.startswith("_")}


def get_intensity(zone: str, config: CarbonClientConfig) -> tuple[float, str]:
    """Current carbon intensity for ``zone`` and whether it came from the endpoint."""
    if config.endpoint:
        headers = {"auth-token": config.token} if config.token else {}
        try:
            resp = requests.get(config.endpoint, params={"zone": zone}, headers=headers, timeout=config.timeout)
            resp.raise_for_status()
            value = float(resp.json()[config.field])
            if math.isfinite(value) and value >= 0:
                return value, "live"
            log.warning("endpoint returned unusable intensity %r", value)
        except (requests.RequestException, ValueError, KeyError, TypeError) as exc:
            log.warning("carbon intensity lookup failed for %s: %s", zone, exc)
    table = config.fallback or {}
    if zone.upper() in table:
        return table[zone.upper()], "fallback"
    raise UnknownZone(f"no live intensity and no fallback entry for zone {zone!r}")


# ---------------------------------------------------------------------------
# Supervision
# ---------------------------------------------------------------------------


class _ByteTail:
    def __init__(self, path: Path):
        self.path = path
        self.offset = 0

    def read(self) -> bytes:
        try:
            with open(self.path, "rb") as fh:
                fh.seek(self.offset)
                data = fh.read()
        except FileNotFoundError:
            return b""
        except OSError as exc:
            raise WatchFailure(f"cannot read {self.path}: {exc}") from exc
        self.offset += len(data)
        return data


class _LineTail(_ByteTail):
    def __init__(self, path: Path):
        super().__init__(path)
        self.pending = b""

    def lines(self, final: bool = False) -> list[str]:
        buf = self.pending + self.read()
        *complete, self.pending = buf.split(b"\n")
        if final and self.pending:
            complete.append(self.pending)
            self.pending = b""
        return [ln.decode("utf-8", "replace").rstrip("\r") for ln in complete]


class _TableTail(_ByteTail):
    def __init__(self, path: Path, kind: str):
        super().__init__(path)
        self.kind = kind
        self.state = ff.TailState()

    def rows(self, final: bool = False):
        rows, self.state = ff.tail_metric_table(self.state, self.read())
        if final:
            more, self.state = ff.tail_flush(self.state)
            rows += more
        return rows


@dataclass
class SupervisionResult:
    run_id: str
    status: str
    returncode: int | None = None
    fired: list[str] = field(default_factory=list)
    alert_time: float | None = None


def _terminate(proc: subprocess.Popen, grace: float) -> None:
    if proc.poll() is not None:
        return
    try:
        os.killpg(proc.pid, signal.SIGTERM)
    except (ProcessLookupError, PermissionError):
        proc.terminate()
    try:
        proc.wait(timeout=grace)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except (ProcessLookupError, PermissionError):
            proc.kill()
        proc.wait()


def supervise(command: list[str], watch: WatchSpec, rules: list[AlertRule], store: RunStore,
              run_id: str | None = None, *, name: str = "", folder: str = "/", tags=("fds",),
              poll: float = 1.0, grace: float = 10.0, cwd=None, cores: int = 1,
              watts_per_core: float = DEFAULT_WATTS_PER_CORE, stdout_path=None,
              code_files=()) -> SupervisionResult:
    """Run ``command`` to completion (or abort), tailing the files named in ``watch``.

    DEVC/HRR rows become metrics, console lines and state changes become
    events and metadata, alert rules are checked after every new sample.
    Watched files are stored as artifacts once the process has gone.
    """
    if run_id is None:
        run_id = store.create_run(name, folder, tags)
    if watch.input is not None and Path(watch.input).exists():
        data = Path(watch.input).read_bytes()
        try:
            store.update_metadata(run_id, ff.namelist_to_metadata(ff.parse_namelist(data)))
        except ff.FormatError as exc:
            store.log_event(run_id, f"input file could not be parsed: {exc}")
        store.store_artifact(run_id, Path(watch.input).name, "input", data)
    for path in code_files:
        store.store_artifact(run_id, Path(path).name, "code", Path(path).read_bytes())

    out = open(stdout_path, "ab") if stdout_path else subprocess.DEVNULL
    try:
        proc = subprocess.Popen(command, cwd=cwd, stdout=out, stderr=subprocess.STDOUT,
                                start_new_session=True)
    except OSError as exc:
        store.log_event(run_id, f"launch failure: {exc}")
        store.set_status(run_id, "failed")
        raise LaunchFailure(f"cannot launch {command[0]!r}: {exc}", run_id) from exc
    finally:
        if stdout_path:
            out.close()
    store.set_status(run_id, "running")
    store.log_event(run_id, f"launched pid {proc.pid}: {' '.join(map(str, command))}")

    ingest = FdsIngestor(store, run_id)
    tables = [_TableTail(Path(p), k) for k, p in (("devc", watch.devc), ("hrr", watch.hrr)) if p is not None]
    console = _LineTail(Path(watch.console)) if watch.console is not None else None
    state_log = _LineTail(Path(watch.state)) if watch.state is not None else None
    recent: dict[str, list[float]] = {}
    depth = max((r.window for r in rules), default=1)
    firing: set[AlertRule] = set()
    result = SupervisionResult(run_id, "running")
    try:
        ps_proc = psutil.Process(proc.pid)
    except psutil.Error:
        ps_proc = None

    def drain(final: bool = False) -> AlertRule | None:
        abort = None
        for tail in tables:
            rows = tail.rows(final)
            if not rows:
                continue
            names = tail.state.names
            for values in ingest.table_rows(tail.kind, names, rows):
                for metric, value in values.items():
                    buf = recent.setdefault(metric, [])
                    buf.append(value)
                    del buf[:-depth]
                for rule in rules:
                    if rule.metric not in values:
                        continue
                    now_firing = evaluate_rule(rule, recent[rule.metric]) == "firing"
                    if now_firing and rule not in firing:
                        firing.add(rule)
                        result.fired.append(str(rule))
                        store.log_event(run_id, f"alert firing: {rule} (latest value {values[rule.metric]:g})")
                        if rule.action == "abort" and abort is None:
                            abort = rule
                    elif not now_firing:
                        firing.discard(rule)
        if console is not None:
            for line in console.lines(final):
                ingest.console_line(line)
        if state_log is not None:
            for line in state_log.lines(final):
                ingest.state_line(line)
        return abort

    aborted = None
    try:
        while True:
            exited = proc.poll() is not None
            aborted = drain(final=exited)
            if aborted is not None:
                result.alert_time = time.time()
                store.log_event(run_id, f"terminating run: {aborted}")
                _terminate(proc, grace)
                rules = []
                drain(final=True)
                break
            if ps_proc is not None and not exited:
                sample = sample_process(ps_proc, cores, watts_per_core)
                if sample is not None:
                    store.log_resource(run_id, sample.timestamp, sample.cpu_seconds, sample.rss, sample.power_draw)
            store.heartbeat(run_id)
            if exited:
                break
            time.sleep(poll)
    except WatchFailure as exc:
        store.log_event(run_id, f"watch failure: {exc}")
        _terminate(proc, grace)
        _store_outputs(store, run_id, watch)
        store.set_status(run_id, "failed")
        result.status, result.returncode = "failed", proc.returncode
        return result
    except BaseException:
        _terminate(proc, grace)
        raise

    result.returncode = proc.returncode
    _store_outputs(store, run_id, watch)
    if aborted is not None:
        status = "terminated"
    elif proc.returncode == 0:
        status = "completed"
    else:
        store.log_event(run_id, f"process exited with code {proc.returncode}")
        status = "failed"
    store.set_status(run_id, status)
    result.status = status
    return result


def _store_outputs(store: RunStore, run_id: str, watch: WatchSpec) -> None:
    for _, path in watch.outputs():
        path = Path(path)
        if path.is_file():
            store.store_artifact(run_id, path.name, "output", path.read_bytes())


def terminate_run(store: RunStore, run_id: str) -> str:
    """Mark a run terminated; a no-op for runs already terminated."""
    return store.set_status(run_id, "terminated").status
