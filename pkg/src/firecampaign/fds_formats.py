"""Readers and writers for FDS-style input and output files.

Covers the Fortran namelist input file, the DEVC/HRR comma-separated output
tables (whole-file and incremental tailing), console output lines and the
device/control state log.
"""

from __future__ import annotations

import bisect
import re
from dataclasses import dataclass, field, replace
from typing import Iterator, Union

Scalar = Union[str, float, int, bool]
Value = Union[Scalar, tuple]


class FormatError(ValueError):
    """Base class for all parse failures in this module."""


class NamelistError(FormatError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class UnterminatedGroup(NamelistError):
    pass


class MalformedValue(NamelistError):
    pass


class MetricTableError(FormatError):
    pass


class MissingHeaders(MetricTableError):
    pass


class ColumnMismatch(MetricTableError):
    def __init__(self, row: int, expected: int, found: int):
        super().__init__(f"data row {row}: expected {expected} columns, found {found}")
        self.row = row
        self.expected = expected
        self.found = found


class UnparseableNumber(MetricTableError):
    def __init__(self, row: int, column: int, cell: str):
        super().__init__(f"data row {row}, column {column}: cannot parse {cell!r}")
        self.row = row
        self.column = column
        self.cell = cell


class TimeOrderError(MetricTableError):
    def __init__(self, row: int, time: float, previous: float):
        super().__init__(f"data row {row}: time {time} precedes {previous}")
        self.row = row
        self.time = time
        self.previous = previous


class UnrecognizedLine(FormatError):
    pass


# ---------------------------------------------------------------------------
# Namelist
# ---------------------------------------------------------------------------


@dataclass
class NamelistGroup:
    name: str
    params: dict[str, Value] = field(default_factory=dict)


@dataclass
class NamelistDocument:
    groups: list[NamelistGroup] = field(default_factory=list)

    def find(self, name: str) -> list[NamelistGroup]:
        """All groups called ``name`` (case-insensitive), in file order."""
        return [g for g in self.groups if g.name.upper() == name.upper()]

    def first(self, name: str, param: str, default=None):
        for group in self.find(name):
            for key, value in group.params.items():
                if key.upper() == param.upper():
                    return value
        return default


_GROUP_START = re.compile(r"^[ \t]*&([A-Za-z0-9_]+)", re.MULTILINE)
_KEY = re.compile(r"([A-Za-z_][A-Za-z0-9_]*(?:\([^)=/]*\))?)\s*=")
_WORD = re.compile(r"[^\s,=/'\"]+")
_INT = re.compile(r"[+-]?\d+")
_REAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eEdD][+-]?\d+)?")
_REPEAT = re.compile(r"(\d+)\*(.*)")
_TRUE = {"T", ".T.", ".TRUE.", "TRUE"}
_FALSE = {"F", ".F.", ".FALSE.", "FALSE"}


class _Lines:
    def __init__(self, text: str):
        self._breaks = [i for i, ch in enumerate(text) if ch == "\n"]

    def __call__(self, offset: int) -> int:
        return bisect.bisect_right(self._breaks, offset - 1) + 1


def _convert_word(word: str, line: int) -> Value:
    upper = word.upper()
    if upper in _TRUE:
        return True
    if upper in _FALSE:
        return False
    if _INT.fullmatch(word):
        return int(word)
    if _REAL.fullmatch(word):
        return float(word.replace("d", "e").replace("D", "e"))
    raise MalformedValue(f"unrecognised value {word!r}", line)


def _read_string(text: str, pos: int, line_of) -> tuple[str, int]:
    quote = text[pos]
    out = []
    i = pos + 1
    while True:
        j = text.find(quote, i)
        if j < 0:
            raise MalformedValue("unclosed quote", line_of(pos))
        out.append(text[i:j])
        if j + 1 < len(text) and text[j + 1] == quote:
            out.append(quote)
            i = j + 2
            continue
        return "".join(out), j + 1


def _collapse(values: list, line: int) -> Value:
    if len(values) == 1:
        return values[0]
    kinds = {type(v) for v in values}
    if kinds <= {int, float}:
        if float in kinds:
            return tuple(float(v) for v in values)
        return tuple(values)
    if len(kinds) == 1:
        return tuple(values)
    raise MalformedValue("array mixes incompatible value types", line)


def parse_namelist(text: str | bytes) -> NamelistDocument:
    """Parse every ``&GROUP ... /`` block of an FDS-style input file.

    Anything outside a group is treated as a comment. Values are typed:
    quoted text stays text, T/F and .TRUE./.FALSE. become booleans, integer
    literals become ints, other numerics become floats, and comma lists
    become tuples. ``n*value`` repeat counts are expanded.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError:
            text = text.decode("latin-1")
    line_of = _Lines(text)
    doc = NamelistDocument()
    pos = 0
    n = len(text)
    while True:
        m = _GROUP_START.search(text, pos)
        if m is None:
            break
        group = NamelistGroup(m.group(1))
        group_line = line_of(m.start(1))
        pos = m.end()
        key = None
        key_line = group_line
        values: list = []
        repeat = None

        def close_key():
            if key is None:
                return
            if not values:
                raise MalformedValue(f"no value for {key}", key_line)
            group.params[key] = _collapse(values, key_line)

        while True:
            while pos < n and (text[pos].isspace() or text[pos] == ","):
                pos += 1
            if pos >= n:
                raise UnterminatedGroup(f"group &{group.name} has no closing '/'", group_line)
            ch = text[pos]
            if ch == "/":
                close_key()
                pos += 1
                break
            km = _KEY.match(text, pos)
            if km:
                close_key()
                key, key_line, values = km.group(1), line_of(pos), []
                pos = km.end()
                continue
            if key is None:
                raise MalformedValue("value before any parameter name", line_of(pos))
            if ch in "'\"":
                s, pos = _read_string(text, pos, line_of)
                values.extend([s] * (repeat or 1))
                repeat = None
                continue
            wm = _WORD.match(text, pos)
            if wm is None:
                raise MalformedValue(f"unexpected character {ch!r}", line_of(pos))
            word = wm.group(0)
            line = line_of(pos)
            pos = wm.end()
            rm = _REPEAT.fullmatch(word)
            if rm:
                count = int(rm.group(1))
                if rm.group(2):
                    values.extend([_convert_word(rm.group(2), line)] * count)
                else:
                    repeat = count
                continue
            values.append(_convert_word(word, line))
        doc.groups.append(group)
    return doc


def _format_scalar(value: Scalar) -> str:
    if isinstance(value, bool):
        return "T" if value else "F"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return "'" + value.replace("'", "''") + "'"


def format_value(value: Value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_scalar(v) for v in value)
    return _format_scalar(value)


def serialize_namelist(doc: NamelistDocument) -> str:
    lines = []
    for group in doc.groups:
        body = ", ".join(f"{k}={format_value(v)}" for k, v in group.params.items())
        lines.append(f"&{group.name} {body} /" if body else f"&{group.name} /")
    return "\n".join(lines) + "\n"


def namelist_to_metadata(doc: NamelistDocument) -> dict[str, Scalar]:
    """Flatten a document to ``group.occurrence.param[.element]`` keys (lower case)."""
    counts: dict[str, int] = {}
    meta: dict[str, Scalar] = {}
    for group in doc.groups:
        gname = group.name.lower()
        idx = counts.get(gname, 0)
        counts[gname] = idx + 1
        for key, value in group.params.items():
            base = f"{gname}.{idx}.{key.lower()}"
            if isinstance(value, tuple):
                for j, item in enumerate(value):
                    meta[f"{base}.{j}"] = item
            else:
                meta[base] = value
    return meta


# ---------------------------------------------------------------------------
# DEVC / HRR tables
# ---------------------------------------------------------------------------


@dataclass
class MetricTable:
    units: list[str]
    names: list[str]
    rows: list[tuple[float, list[float]]]
    kind: str = "devc"

    def column(self, name: str) -> list[float]:
        j = self.names.index(name)
        if j == 0:
            return [t for t, _ in self.rows]
        return [vals[j - 1] for _, vals in self.rows]


def _split_cells(line: str) -> list[str]:
    return [c.strip().strip('"').strip() for c in line.split(",")]


def _parse_row(line: str, index: int, width: int, last_time: float | None):
    cells = _split_cells(line)
    if len(cells) != width:
        raise ColumnMismatch(index, width, len(cells))
    numbers = []
    for j, cell in enumerate(cells):
        try:
            numbers.append(float(cell))
        except ValueError:
            raise UnparseableNumber(index, j, cell) from None
    t = numbers[0]
    if last_time is not None and t < last_time:
        raise TimeOrderError(index, t, last_time)
    return t, numbers[1:]


def parse_metric_table(text: str, kind: str = "devc") -> MetricTable:
    """Parse a complete DEVC or HRR table (units row, names row, data rows)."""
    lines = [ln.rstrip("\r") for ln in text.split("\n")]
    lines = [ln for ln in lines if ln.strip()]
    if len(lines) < 2:
        raise MissingHeaders(f"{kind} table needs a units row and a names row")
    units = _split_cells(lines[0])
    names = _split_cells(lines[1])
    if len(names) != len(units):
        raise MissingHeaders(f"units row has {len(units)} columns, names row {len(names)}")
    rows = []
    last = None
    for i, line in enumerate(lines[2:]):
        t, vals = _parse_row(line, i, len(names), last)
        rows.append((t, vals))
        last = t
    return MetricTable(units, names, rows, kind)


@dataclass(frozen=True)
class TailState:
    """Position of an incremental reader within a growing table file."""

    byte_offset: int = 0
    pending: bytes = b""
    units_seen: bool = False
    names_seen: bool = False
    units: tuple[str, ...] = ()
    names: tuple[str, ...] = ()
    rows_emitted: int = 0
    last_time: float | None = None

    @property
    def header_seen(self) -> tuple[bool, bool]:
        return (self.units_seen, self.names_seen)


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("latin-1")


def _consume_lines(state: TailState, lines: list[bytes]):
    units_seen, names_seen = state.units_seen, state.names_seen
    units, names = state.units, state.names
    count, last = state.rows_emitted, state.last_time
    rows = []
    for raw in lines:
        line = _decode(raw).rstrip("\r")
        if not line.strip():
            continue
        if not units_seen:
            units, units_seen = tuple(_split_cells(line)), True
        elif not names_seen:
            names, names_seen = tuple(_split_cells(line)), True
            if len(names) != len(units):
                raise MissingHeaders(f"units row has {len(units)} columns, names row {len(names)}")
        else:
            t, vals = _parse_row(line, count, len(names), last)
            rows.append((t, vals))
            count, last = count + 1, t
    return rows, dict(
        units_seen=units_seen, names_seen=names_seen, units=units, names=names,
        rows_emitted=count, last_time=last,
    )


def tail_metric_table(state: TailState, new_bytes: bytes) -> tuple[list[tuple[float, list[float]]], TailState]:
    """Consume bytes appended since ``state.byte_offset``.

    Only newline-terminated rows are returned; a trailing partial row stays
    buffered in the returned state until its newline arrives.
    """
    if not new_bytes:
        return [], state
    buf = state.pending + new_bytes
    *complete, pending = buf.split(b"\n")
    rows, fields = _consume_lines(state, complete)
    return rows, replace(
        state, byte_offset=state.byte_offset + len(new_bytes), pending=pending, **fields
    )


def tail_flush(state: TailState) -> tuple[list[tuple[float, list[float]]], TailState]:
    """Treat the buffered partial row as complete (writer has exited)."""
    if not state.pending:
        return [], state
    rows, fields = _consume_lines(state, [state.pending])
    return rows, replace(state, pending=b"", **fields)


# ---------------------------------------------------------------------------
# Console and state log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConsoleObservation:
    kind: str  # version | timestep | error | other
    text: str = ""
    step: int | None = None
    sim_time: float | None = None


_TIMESTEP = re.compile(
    r"Time\s+Step\s*:?\s*(\d+)\s*,\s*Simulation\s+Time\s*:?\s*([-+0-9.eEdD]+)\s*s", re.IGNORECASE
)
_VERSION = re.compile(r"\bVersion\s*:\s*(?:FDS-?)?([0-9][\w.\-]*)", re.IGNORECASE)


def parse_console_line(line: str) -> ConsoleObservation:
    """Classify one console line. Never raises."""
    text = line.rstrip("\r\n")
    if "ERROR" in text:
        return ConsoleObservation("error", text.strip())
    m = _TIMESTEP.search(text)
    if m:
        try:
            sim_time = float(m.group(2).replace("d", "e").replace("D", "e"))
        except ValueError:
            return ConsoleObservation("other", text)
        return ConsoleObservation("timestep", text.strip(), int(m.group(1)), sim_time)
    m = _VERSION.search(text)
    if m:
        return ConsoleObservation("version", m.group(1))
    return ConsoleObservation("other", text)


def format_console_timestep(step: int, sim_time: float) -> str:
    return f" Time Step: {step:7d}, Simulation Time: {sim_time:10.2f} s"


@dataclass(frozen=True)
class StateTransition:
    time: float
    entity: str  # device | control
    name: str
    new_state: bool


_ENTITIES = {"DEVC": "device", "CTRL": "control"}
_BOOLS = {"T": True, "F": False, ".TRUE.": True, ".FALSE.": False}


def parse_state_log_line(line: str) -> StateTransition:
    """Parse ``time, DEVC|CTRL, name, old, new``."""
    cells = [c.strip().strip('"').strip() for c in line.strip().split(",")]
    if len(cells) != 5:
        raise UnrecognizedLine(f"expected 5 fields: {line!r}")
    t_raw, ent, name, old, new = cells
    try:
        t = float(t_raw)
    except ValueError:
        raise UnrecognizedLine(f"bad time field: {line!r}") from None
    entity = _ENTITIES.get(ent.upper())
    if entity is None or not name:
        raise UnrecognizedLine(f"bad entity or name: {line!r}")
    if old.upper() not in _BOOLS or new.upper() not in _BOOLS:
        raise UnrecognizedLine(f"bad state flags: {line!r}")
    return StateTransition(t, entity, name, _BOOLS[new.upper()])


def format_state_log_line(time: float, entity: str, name: str, old: bool, new: bool) -> str:
    tag = "DEVC" if entity == "device" else "CTRL"
    return f"{time:.1f}, {tag}, {name}, {'T' if old else 'F'}, {'T' if new else 'F'}"


def iter_state_log(text: str) -> Iterator[StateTransition]:
    """Transitions from a whole state log; non-matching lines (headers) are skipped."""
    for line in text.splitlines():
        if not line.strip():
            continue
        try:
            yield parse_state_log_line(line)
        except UnrecognizedLine:
            continue
