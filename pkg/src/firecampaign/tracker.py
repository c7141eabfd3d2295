"""File-backed run store: runs, metrics, events, artifacts and lineage.

Layout under the store root::

    runs/<id>/run.json              run record (one JSON object, one line)
    runs/<id>/metrics/<name>.csv    time,step,value  (append-only)
    runs/<id>/events.jsonl          {"timestamp", "message"} per line
    runs/<id>/artifacts.jsonl       {"name", "kind", "content_hash", "size"} per line
    runs/<id>/resources.csv         timestamp,cpu_seconds,rss,power_draw
    blobs/<hh>/<sha256>             artifact bytes, content addressed
    lineage.jsonl                   {"src", "dst", "name", "kind"} per line

Lineage node ids are ``run:<id>`` and ``artifact:<sha256>``.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path
from urllib.parse import quote, unquote

from filelock import FileLock

from ._io import atomic_write_bytes, atomic_write_text
from . import fds_formats as ff

STATUSES = ("created", "running", "completed", "failed", "terminated", "lost")
TERMINAL = {"completed", "failed", "terminated", "lost"}
_TRANSITIONS = {
    "created": {"running", "failed"},
    "running": {"completed", "failed", "terminated", "lost"},
}
ARTIFACT_KINDS = ("input", "output", "code")
STORE_ENV = "FIRECAMPAIGN_STORE"


class TrackerError(Exception):
    pass


class StoreUnavailable(TrackerError):
    pass


class UnknownRun(TrackerError, KeyError):
    pass


class RunNotActive(TrackerError):
    pass


class OutOfOrderPoint(TrackerError):
    pass


class IllegalTransition(TrackerError):
    pass


class InvalidFilter(TrackerError, ValueError):
    pass


class InvalidMetadata(TrackerError, TypeError):
    pass


class UnknownNode(TrackerError, KeyError):
    pass


class LineageCycle(TrackerError):
    pass


class MissingInputFile(TrackerError, FileNotFoundError):
    pass


class ImportFailure(TrackerError):
    def __init__(self, path, cause: Exception):
        super().__init__(f"{path}: {cause}")
        self.path = Path(path)
        self.cause = cause


@dataclass
class Run:
    id: str
    name: str
    folder: str
    tags: list[str]
    status: str
    metadata: dict
    created: float
    started: float | None = None
    ended: float | None = None
    heartbeat: float | None = None

    @classmethod
    def from_json(cls, data: dict) -> "Run":
        return cls(**data)


@dataclass
class MetricSeries:
    name: str
    points: list[tuple[float, int, float]] = field(default_factory=list)

    @property
    def values(self) -> list[float]:
        return [p[2] for p in self.points]


@dataclass
class Event:
    timestamp: float
    message: str


@dataclass(frozen=True)
class ArtifactRef:
    name: str
    kind: str
    content_hash: str
    size: int


@dataclass
class LineageGraph:
    nodes: set[str] = field(default_factory=set)
    edges: set[tuple[str, str]] = field(default_factory=set)


def run_node(run_id: str) -> str:
    return f"run:{run_id}"


def artifact_node(content_hash: str) -> str:
    return f"artifact:{content_hash}"


def _is_scalar(v) -> bool:
    return isinstance(v, (str, int, float, bool))


def _check_metadata(metadata: dict) -> dict:
    for key, value in metadata.items():
        if not isinstance(key, str) or not _is_scalar(value):
            raise InvalidMetadata(f"metadata {key!r}={value!r}: values must be text, number or boolean")
    return dict(metadata)


def _normalize_folder(folder: str) -> str:
    if not isinstance(folder, str):
        raise ValueError(f"folder must be text, got {folder!r}")
    parts = [p for p in folder.replace("\\", "/").split("/") if p]
    return "/" + "/".join(parts)


# ---------------------------------------------------------------------------
# Query filters
# ---------------------------------------------------------------------------


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


@dataclass
class RunFilter:
    """Conjunction of predicates; unset fields match everything."""

    folder: str | None = None
    tags: frozenset[str] = frozenset()
    status: str | None = None
    name: str | None = None
    metadata_eq: dict = field(default_factory=dict)
    metadata_range: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tags = frozenset(self.tags)
        if self.status is not None and self.status not in STATUSES:
            raise InvalidFilter(f"unknown status {self.status!r}")
        for key, bounds in self.metadata_range.items():
            try:
                lo, hi = bounds
                lo, hi = float(lo), float(hi)
            except (TypeError, ValueError):
                raise InvalidFilter(f"range for {key!r} must be two numbers") from None
            if lo > hi:
                raise InvalidFilter(f"empty range for {key!r}: {lo} > {hi}")

    @classmethod
    def parse(cls, exprs: list[str]) -> "RunFilter":
        """Build a filter from ``tag=``, ``status=``, ``folder=``, ``name=`` and
        ``meta:<key>=<value>`` / ``meta:<key>=<lo>..<hi>`` expressions."""
        kw = {"tags": set(), "metadata_eq": {}, "metadata_range": {}}
        for expr in exprs:
            key, sep, value = expr.partition("=")
            key = key.strip()
            if not sep or not key:
                raise InvalidFilter(f"expected key=value, got {expr!r}")
            if key == "tag":
                kw["tags"].add(value)
            elif key in ("status", "folder", "name"):
                kw[key] = value
            elif key.startswith("meta:") and len(key) > 5:
                mkey = key[5:]
                if ".." in value:
                    lo, _, hi = value.partition("..")
                    try:
                        kw["metadata_range"][mkey] = (float(lo), float(hi))
                    except ValueError:
                        raise InvalidFilter(f"bad range {value!r}") from None
                else:
                    kw["metadata_eq"][mkey] = _coerce(value)
            else:
                raise InvalidFilter(f"unknown filter key {key!r}")
        return cls(**kw)

    def matches(self, run: Run) -> bool:
        if self.folder is not None:
            prefix = _normalize_folder(self.folder)
            if not (prefix == "/" or run.folder == prefix or run.folder.startswith(prefix + "/")):
                return False
        if self.status is not None and run.status != self.status:
            return False
        if self.name is not None and run.name != self.name:
            return False
        if not self.tags <= set(run.tags):
            return False
        for key, want in self.metadata_eq.items():
            if key not in run.metadata:
                return False
            have = run.metadata[key]
            if isinstance(have, bool) != isinstance(want, bool) or have != want:
                return False
        for key, (lo, hi) in self.metadata_range.items():
            have = run.metadata.get(key)
            if isinstance(have, bool) or not isinstance(have, (int, float)):
                return False
            if not float(lo) <= have <= float(hi):
                return False
        return True


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


class RunStore:
    def __init__(self, root=None):
        root = root or os.environ.get(STORE_ENV)
        if not root:
            raise StoreUnavailable(f"no store root given and ${STORE_ENV} is unset")
        self.root = Path(root)
        try:
            (self.root / "runs").mkdir(parents=True, exist_ok=True)
            (self.root / "blobs").mkdir(exist_ok=True)
        except OSError as exc:
            raise StoreUnavailable(f"cannot use store at {self.root}: {exc}") from exc
        self._lineage_lock = FileLock(str(self.root / "lineage.lock"))
        self._last_points: dict[tuple[str, str], tuple[int, tuple[float, int]]] = {}

    # -- runs ---------------------------------------------------------------

    def _run_dir(self, run_id: str) -> Path:
        return self.root / "runs" / run_id

    def _lock(self, run_id: str) -> FileLock:
        return FileLock(str(self._run_dir(run_id) / ".lock"))

    def _write_run(self, run: Run) -> None:
        atomic_write_text(self._run_dir(run.id) / "run.json", json.dumps(asdict(run), sort_keys=True) + "\n")

    def create_run(self, name: str = "", folder: str = "/", tags=(), metadata: dict | None = None) -> str:
        folder = _normalize_folder(folder)
        metadata = _check_metadata(metadata or {})
        run_id = uuid.uuid4().hex[:16]
        now = time.time()
        run = Run(run_id, name or f"run-{run_id[:8]}", folder, sorted(set(tags)), "created", metadata, now)
        try:
            (self._run_dir(run_id) / "metrics").mkdir(parents=True)
            self._write_run(run)
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc
        return run_id

    def get_run(self, run_id: str) -> Run:
        path = self._run_dir(run_id) / "run.json"
        try:
            return Run.from_json(json.loads(path.read_text()))
        except FileNotFoundError:
            raise UnknownRun(run_id) from None

    def list_runs(self) -> list[Run]:
        runs = []
        for d in (self.root / "runs").iterdir():
            if (d / "run.json").exists():
                runs.append(self.get_run(d.name))
        runs.sort(key=lambda r: (r.created, r.id))
        return runs

    def _mutate(self, run_id: str, fn) -> Run:
        if not (self._run_dir(run_id) / "run.json").exists():
            raise UnknownRun(run_id)
        with self._lock(run_id):
            run = self.get_run(run_id)
            fn(run)
            self._write_run(run)
            return run

    def set_status(self, run_id: str, status: str) -> Run:
        if status not in STATUSES:
            raise IllegalTransition(f"unknown status {status!r}")

        def apply(run: Run):
            if run.status == status and status in TERMINAL:
                return  # idempotent re-termination
            if status not in _TRANSITIONS.get(run.status, set()):
                raise IllegalTransition(f"{run.status} -> {status}")
            now = time.time()
            run.status = status
            if status == "running":
                run.started = now
                run.heartbeat = now
            if status in TERMINAL:
                run.ended = now

        return self._mutate(run_id, apply)

    def update_metadata(self, run_id: str, metadata: dict) -> Run:
        metadata = _check_metadata(metadata)
        return self._mutate(run_id, lambda run: run.metadata.update(metadata))

    def add_tags(self, run_id: str, tags) -> Run:
        return self._mutate(run_id, lambda run: setattr(run, "tags", sorted(set(run.tags) | set(tags))))

    def heartbeat(self, run_id: str, now: float | None = None) -> None:
        stamp = time.time() if now is None else now
        self._mutate(run_id, lambda run: setattr(run, "heartbeat", stamp))

    def sweep_lost(self, max_age: float = 60.0, now: float | None = None) -> list[str]:
        """Mark running runs whose last heartbeat is older than ``max_age`` as lost."""
        now = time.time() if now is None else now
        lost = []
        for run in self.list_runs():
            if run.status == "running" and now - (run.heartbeat or run.started or run.created) > max_age:
                self.set_status(run.id, "lost")
                lost.append(run.id)
        return lost

    # -- metrics ------------------------------------------------------------

    def _metric_path(self, run_id: str, name: str) -> Path:
        return self._run_dir(run_id) / "metrics" / (quote(name, safe="") + ".csv")

    def _last_point(self, run_id: str, name: str) -> tuple[float, int] | None:
        path = self._metric_path(run_id, name)
        try:
            size = path.stat().st_size
        except FileNotFoundError:
            return None
        cached = self._last_points.get((run_id, name))
        if cached and cached[0] == size:
            return cached[1]
        line = _last_line(path)
        last = line.split(",") if line else None
        point = (float(last[0]), int(last[1])) if last else None
        self._last_points[(run_id, name)] = (size, point)
        return point

    def log_metrics(self, run_id: str, t: float, step: int, values: dict[str, float]) -> None:
        run = self.get_run(run_id)
        if run.status != "running":
            raise RunNotActive(f"run {run_id} is {run.status}")
        key = (float(t), int(step))
        with self._lock(run_id):
            for name in values:
                last = self._last_point(run_id, name)
                if last is not None and key <= last:
                    raise OutOfOrderPoint(f"{name}: point {key} does not follow {last}")
            for name, value in values.items():
                path = self._metric_path(run_id, name)
                with open(path, "a") as fh:
                    fh.write(f"{float(t)!r},{int(step)},{float(value)!r}\n")
                self._last_points[(run_id, name)] = (path.stat().st_size, key)

    def metric_names(self, run_id: str) -> list[str]:
        d = self._run_dir(run_id) / "metrics"
        if not d.exists():
            raise UnknownRun(run_id)
        return sorted(unquote(p.stem) for p in d.glob("*.csv"))

    def metric(self, run_id: str, name: str) -> MetricSeries:
        series = MetricSeries(name)
        path = self._metric_path(run_id, name)
        if not path.exists():
            return series
        for line in path.read_text().splitlines():
            t, s, v = line.split(",")
            series.points.append((float(t), int(s), float(v)))
        return series

    def metrics(self, run_id: str) -> dict[str, MetricSeries]:
        return {name: self.metric(run_id, name) for name in self.metric_names(run_id)}

    # -- events and resources ------------------------------------------------

    def log_event(self, run_id: str, message: str, timestamp: float | None = None) -> Event:
        path = self._run_dir(run_id) / "events.jsonl"
        if not (self._run_dir(run_id) / "run.json").exists():
            raise UnknownRun(run_id)
        with self._lock(run_id):
            stamp = time.time() if timestamp is None else timestamp
            last = _last_line(path) if path.exists() else None
            if last:
                stamp = max(stamp, json.loads(last)["timestamp"])
            with open(path, "a") as fh:
                fh.write(json.dumps({"timestamp": stamp, "message": message}) + "\n")
        return Event(stamp, message)

    def events(self, run_id: str) -> list[Event]:
        path = self._run_dir(run_id) / "events.jsonl"
        if not path.exists():
            return []
        return [Event(**json.loads(line)) for line in path.read_text().splitlines() if line]

    def log_resource(self, run_id: str, timestamp: float, cpu_seconds: float, rss: int, power_draw: float) -> None:
        path = self._run_dir(run_id) / "resources.csv"
        with self._lock(run_id):
            new = not path.exists()
            with open(path, "a") as fh:
                if new:
                    fh.write("timestamp,cpu_seconds,rss,power_draw\n")
                fh.write(f"{timestamp!r},{cpu_seconds!r},{int(rss)},{power_draw!r}\n")

    def resources(self, run_id: str) -> list[tuple[float, float, int, float]]:
        path = self._run_dir(run_id) / "resources.csv"
        if not path.exists():
            return []
        rows = []
        for line in path.read_text().splitlines()[1:]:
            ts, cpu, rss, pw = line.split(",")
            rows.append((float(ts), float(cpu), int(rss), float(pw)))
        return rows

    # -- artifacts and lineage ----------------------------------------------

    def _blob_path(self, content_hash: str) -> Path:
        return self.root / "blobs" / content_hash[:2] / content_hash

    def blob_count(self) -> int:
        return sum(1 for p in (self.root / "blobs").glob("*/*") if not p.name.startswith("."))

    def read_blob(self, content_hash: str) -> bytes:
        return self._blob_path(content_hash).read_bytes()

    def store_artifact(self, run_id: str, name: str, kind: str, data: bytes) -> ArtifactRef:
        if kind not in ARTIFACT_KINDS:
            raise ValueError(f"artifact kind must be one of {ARTIFACT_KINDS}")
        if not (self._run_dir(run_id) / "run.json").exists():
            raise UnknownRun(run_id)
        digest = hashlib.sha256(data).hexdigest()
        blob = self._blob_path(digest)
        try:
            if not blob.exists():
                atomic_write_bytes(blob, data)
        except OSError as exc:
            raise StoreUnavailable(str(exc)) from exc
        ref = ArtifactRef(name, kind, digest, len(data))
        if kind == "output":
            self.add_edge(run_node(run_id), artifact_node(digest), name, kind)
        else:
            self.add_edge(artifact_node(digest), run_node(run_id), name, kind)
        with self._lock(run_id):
            with open(self._run_dir(run_id) / "artifacts.jsonl", "a") as fh:
                fh.write(json.dumps(asdict(ref)) + "\n")
        return ref

    def artifacts(self, run_id: str) -> list[ArtifactRef]:
        path = self._run_dir(run_id) / "artifacts.jsonl"
        if not path.exists():
            return []
        return [ArtifactRef(**json.loads(line)) for line in path.read_text().splitlines() if line]

    def _read_edges(self) -> list[dict]:
        path = self.root / "lineage.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text().splitlines() if line]

    def lineage_graph(self) -> LineageGraph:
        g = LineageGraph()
        for e in self._read_edges():
            g.nodes.update((e["src"], e["dst"]))
            g.edges.add((e["src"], e["dst"]))
        for d in (self.root / "runs").iterdir():
            if (d / "run.json").exists():
                g.nodes.add(run_node(d.name))
        return g

    def add_edge(self, src: str, dst: str, name: str = "", kind: str = "") -> None:
        """Insert a lineage edge, refusing any that would close a cycle."""
        if src.split(":")[0] == dst.split(":")[0]:
            raise LineageCycle(f"edge {src} -> {dst} joins two nodes of the same kind")
        with self._lineage_lock:
            graph = self.lineage_graph()
            if (src, dst) in graph.edges:
                return
            if src == dst or src in _reachable(graph.edges, dst, forward=True):
                raise LineageCycle(f"edge {src} -> {dst} would create a cycle")
            with open(self.root / "lineage.jsonl", "a") as fh:
                fh.write(json.dumps({"src": src, "dst": dst, "name": name, "kind": kind}) + "\n")

    def lineage(self, node: str, direction: str = "ancestors") -> LineageGraph:
        if direction not in ("ancestors", "descendants"):
            raise ValueError("direction must be 'ancestors' or 'descendants'")
        graph = self.lineage_graph()
        if node not in graph.nodes:
            raise UnknownNode(node)
        reach = _reachable(graph.edges, node, forward=direction == "descendants") | {node}
        return LineageGraph(reach, {e for e in graph.edges if e[0] in reach and e[1] in reach})

    # -- queries ------------------------------------------------------------

    def query_runs(self, flt: RunFilter | None = None) -> list[Run]:
        flt = flt or RunFilter()
        return [r for r in self.list_runs() if flt.matches(r)]


def _last_line(path: Path) -> str | None:
    with open(path, "rb") as fh:
        fh.seek(0, os.SEEK_END)
        end = fh.tell()
        chunk = 512
        while True:
            start = max(0, end - chunk)
            fh.seek(start)
            lines = fh.read(end - start).splitlines()
            if len(lines) > 1 or start == 0:
                return lines[-1].decode() if lines else None
            chunk *= 4


def _reachable(edges, start: str, forward: bool) -> set[str]:
    adj: dict[str, list[str]] = {}
    for a, b in edges:
        if forward:
            adj.setdefault(a, []).append(b)
        else:
            adj.setdefault(b, []).append(a)
    seen: set[str] = set()
    stack = [start]
    while stack:
        for nxt in adj.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    seen.discard(start)
    return seen


# ---------------------------------------------------------------------------
# Turning FDS outputs into metrics, events and metadata
# ---------------------------------------------------------------------------


def metric_name(column: str) -> str:
    return column.strip().lower()


class FdsIngestor:
    """Feeds parsed FDS output into a run. Shared by live supervision and historic import
    so both paths record identical series."""

    def __init__(self, store: RunStore, run_id: str):
        self.store = store
        self.run_id = run_id
        self.row_counts: dict[str, int] = {}

    def table_rows(self, table: str, names, rows) -> list[dict[str, float]]:
        """Log rows of a DEVC/HRR table; returns the logged value maps."""
        logged = []
        start = self.row_counts.get(table, 0)
        columns = [metric_name(n) for n in list(names)[1:]]
        for k, (t, vals) in enumerate(rows):
            values = dict(zip(columns, vals))
            self.store.log_metrics(self.run_id, t, start + k, values)
            logged.append(values)
        self.row_counts[table] = start + len(rows)
        return logged

    def console_line(self, line: str) -> ff.ConsoleObservation:
        obs = ff.parse_console_line(line)
        if obs.kind == "version":
            self.store.update_metadata(self.run_id, {"fds.version": obs.text})
        elif obs.kind == "timestep":
            self.store.log_event(self.run_id, f"time step {obs.step}: simulation time {obs.sim_time} s")
        elif obs.kind == "error":
            self.store.log_event(self.run_id, f"FDS error: {obs.text}")
        return obs

    def state_line(self, line: str) -> ff.StateTransition | None:
        try:
            tr = ff.parse_state_log_line(line)
        except ff.UnrecognizedLine:
            return None
        flag = "T" if tr.new_state else "F"
        self.store.update_metadata(self.run_id, {f"state.{tr.entity}.{tr.name.lower()}": tr.new_state})
        self.store.log_event(self.run_id, f"{tr.entity} {tr.name} changed to {flag} at {tr.time} s")
        return tr


@dataclass
class WatchSpec:
    input: Path | None = None
    devc: Path | None = None
    hrr: Path | None = None
    console: Path | None = None
    state: Path | None = None
    extra: list[Path] = field(default_factory=list)

    @classmethod
    def for_chid(cls, directory, chid: str) -> "WatchSpec":
        d = Path(directory)
        return cls(d / f"{chid}.fds", d / f"{chid}_devc.csv", d / f"{chid}_hrr.csv",
                   d / f"{chid}.out", d / f"{chid}_devc_ctrl_log.csv")

    def outputs(self) -> list[tuple[str, Path]]:
        named = [("devc", self.devc), ("hrr", self.hrr), ("console", self.console), ("state", self.state)]
        return [(k, p) for k, p in named if p is not None] + [("extra", p) for p in self.extra]


def find_input_file(directory) -> Path:
    d = Path(directory)
    candidates = sorted(d.glob("*.fds"))
    if not candidates:
        raise MissingInputFile(f"no .fds input file in {d}")
    return candidates[0]


def import_historic(store: RunStore, directory, folder: str = "/historic", tags=("fds", "historic"),
                    name: str | None = None) -> str:
    """Load a finished simulation directory as a completed run."""
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingInputFile(f"{directory} is not a directory")
    input_path = find_input_file(directory)
    try:
        doc = ff.parse_namelist(input_path.read_bytes())
    except ff.FormatError as exc:
        raise ImportFailure(input_path, exc) from exc
    chid = str(doc.first("HEAD", "CHID", input_path.stem))
    watch = WatchSpec.for_chid(directory, chid)
    watch.input = input_path

    run_id = store.create_run(name or chid, folder, tags, ff.namelist_to_metadata(doc))
    store.set_status(run_id, "running")
    ingest = FdsIngestor(store, run_id)
    for table, path in (("devc", watch.devc), ("hrr", watch.hrr)):
        if path.exists() and path.stat().st_size > 0:
            try:
                parsed = ff.parse_metric_table(path.read_bytes().decode("utf-8", "replace"), table)
            except ff.FormatError as exc:
                store.set_status(run_id, "failed")
                raise ImportFailure(path, exc) from exc
            ingest.table_rows(table, parsed.names, parsed.rows)
    if watch.console.exists():
        for line in watch.console.read_text(errors="replace").splitlines():
            ingest.console_line(line)
    if watch.state.exists():
        for line in watch.state.read_text(errors="replace").splitlines():
            ingest.state_line(line)

    store.store_artifact(run_id, input_path.name, "input", input_path.read_bytes())
    for path in sorted(directory.iterdir()):
        if path.is_file() and path != input_path and not path.name.startswith("."):
            store.store_artifact(run_id, path.name, "output", path.read_bytes())
    store.set_status(run_id, "completed")
    return run_id
