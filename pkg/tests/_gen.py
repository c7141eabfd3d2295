"""Random input generators shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from firecampaign.fds_formats import NamelistDocument, NamelistGroup

NAME = st.from_regex(r"[A-Z][A-Z0-9_]{0,7}", fullmatch=True)
KEY = st.one_of(NAME, st.builds(lambda k, i: f"{k}({i})", NAME, st.sampled_from(["1", "2", "1:3", "1,2"])))
TEXT = st.text(st.characters(min_codepoint=32, max_codepoint=126), max_size=12)
FLOAT = st.floats(allow_nan=False, allow_infinity=False, width=64)
INT = st.integers(-10**9, 10**9)
SCALARS = [st.booleans(), INT, FLOAT, TEXT]


@st.composite
def values(draw):
    kind = draw(st.integers(0, len(SCALARS) - 1))
    if draw(st.booleans()):
        return draw(SCALARS[kind])
    return tuple(draw(st.lists(SCALARS[kind], min_size=2, max_size=6)))


@st.composite
def namelist_docs(draw):
    groups = []
    for _ in range(draw(st.integers(0, 6))):
        keys = draw(st.lists(KEY, max_size=6, unique_by=str.upper))
        groups.append(NamelistGroup(draw(NAME), {k: draw(values()) for k in keys}))
    return NamelistDocument(groups)


def typed(v):
    """Comparison key that tells True from 1 and 1 from 1.0."""
    if isinstance(v, tuple):
        return tuple(typed(x) for x in v)
    return (type(v).__name__, v)


def doc_key(doc: NamelistDocument):
    return [(g.name, [(k, typed(v)) for k, v in g.params.items()]) for g in doc.groups]


def metric_table_text(rng: np.random.Generator, n_rows: int | None = None, n_cols: int | None = None,
                      crlf: bool = False, quoted: bool = False) -> str:
    """A units row, a names row and monotone-time numeric rows."""
    n_cols = n_cols or int(rng.integers(2, 8))
    n_rows = int(rng.integers(0, 40)) if n_rows is None else n_rows
    q = (lambda s: f'"{s}"') if quoted else (lambda s: s)
    units = ["s"] + [str(rng.choice(["m", "kW", "C", "kg/m3"])) for _ in range(n_cols - 1)]
    names = ["Time"] + [f"COL_{j}" for j in range(n_cols - 1)]
    lines = [",".join(q(u) for u in units), ",".join(q(n) for n in names)]
    t = 0.0
    for _ in range(n_rows):
        t += float(rng.uniform(0.0, 5.0))
        cells = [t] + list(rng.normal(0, 10.0 ** rng.integers(-3, 4), n_cols - 1))
        fmt = rng.choice(["{!r}", "{:.7E}", "{:.3f}"])
        lines.append(",".join(fmt.format(float(c)) for c in cells))
    eol = "\r\n" if crlf else "\n"
    text = eol.join(lines)
    return text + eol if rng.random() < 0.8 else text


def random_chunks(data: bytes, rng: np.random.Generator) -> list[bytes]:
    if not data:
        return [b""]
    n_cuts = int(rng.integers(0, min(len(data), 30) + 1))
    cuts = sorted(set(int(c) for c in rng.integers(0, len(data) + 1, n_cuts)))
    bounds = [0] + cuts + [len(data)]
    return [data[a:b] for a, b in zip(bounds, bounds[1:])]
