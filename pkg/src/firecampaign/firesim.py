"""Desk-scale smoke and visibility model of a five-floor office block.

A stand-in for FDS: each floor is a 2-D grid of soot density (well mixed
over the floor height). Smoke spreads by diffusion within a floor, moves
between floors through the openings of a diagonal cascade with a buoyant
upward bias, and after the activation time is extracted by ceiling vents
on the top floor while ground-floor doors let in clean air.

Outputs are written in the same layouts FDS uses, so the parsers, the
monitor and the importer handle them unchanged::

    CHID.fds                   namelist input (written by ``write_input``)
    CHID_devc.csv              per-floor min/mean eye-level visibility
    CHID_hrr.csv               heat release rate (kW)
    CHID.out                   console log with time-step lines
    CHID_devc_ctrl_log.csv     vent / door state transitions
    CHID_slices.bin            eye-level visibility slices (see below)

Slice file layout: an ASCII line ``FIRESLICE 1``, one line of JSON header
(``floors``, ``nx``, ``ny``, ``samples``, ``dt_out``, ``cell``, ``dtype``)
and then ``samples * floors * ny * nx`` little-endian float32 values in C
order. Sample ``k`` is the time average over ``[k*dt_out, (k+1)*dt_out)``.
Cells inside pillars are NaN.
"""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from ._io import load_toml
from .fds_formats import (
    NamelistDocument,
    NamelistGroup,
    format_console_timestep,
    format_state_log_line,
    parse_namelist,
    serialize_namelist,
)

Rect = tuple[float, float, float, float]

SLICE_MAGIC = b"FIRESLICE 1\n"


class UnstableTimestep(ValueError):
    pass


class InvalidLocation(ValueError):
    pass


@dataclass(frozen=True)
class Physics:
    diffusivity: float = 0.5
    soot_yield: float = 0.07
    heat_of_combustion: float = 20.0e6
    visibility_constant: float = 3.0
    extinction_coefficient: float = 8700.0
    exchange_rate: float = 0.5
    upward_bias: float = 0.2
    vent_rate: float = 5.0
    vis_cap: float = 30.0


@dataclass(frozen=True)
class _Grid:
    mask: np.ndarray          # (floors, ny, nx) True where a cell is open floor
    link_x: np.ndarray        # (floors, ny, nx-1) both neighbours open
    link_y: np.ndarray        # (floors, ny-1, nx)
    lower: np.ndarray         # flat indices, lower side of opening cells
    upper: np.ndarray         # flat indices, matching upper side
    vent_cells: np.ndarray    # flat indices into the top floor
    vent_counts: np.ndarray
    door_cells: np.ndarray    # flat indices into the bottom floor


def _cells_in(rect: Rect, nx: int, ny: int, h: float) -> np.ndarray:
    x0, x1, y0, y1 = rect
    xc = (np.arange(nx) + 0.5) * h
    yc = (np.arange(ny) + 0.5) * h
    inx = (xc > x0) & (xc < x1)
    iny = (yc > y0) & (yc < y1)
    return iny[:, None] & inx[None, :]


def _overlaps(a: Rect, b: Rect) -> bool:
    return a[0] < b[1] and b[0] < a[1] and a[2] < b[3] and b[2] < a[3]


@dataclass(frozen=True)
class BuildingModel:
    width: float = 100.0
    depth: float = 30.0
    cell: float = 1.0
    floor_height: float = 4.0
    floor_labels: tuple[str, ...] = ("L4", "L5", "L6", "L7", "L8")
    pillars: tuple[Rect, ...] = ()
    openings: tuple[Rect, ...] = ()
    vents: tuple[tuple[float, float], ...] = ()
    doors: tuple[Rect, ...] = ()
    activation_time: float = 120.0
    physics: Physics = field(default_factory=Physics)

    @classmethod
    def from_dict(cls, data: dict) -> "BuildingModel":
        data = dict(data)
        physics = Physics(**data.pop("physics", {}))
        doors = data.pop("doors", [])
        if doors and not isinstance(doors[0], (list, tuple)):
            doors = [doors]
        return cls(
            width=float(data.pop("width", 100.0)),
            depth=float(data.pop("depth", 30.0)),
            cell=float(data.pop("cell", 1.0)),
            floor_height=float(data.pop("floor_height", 4.0)),
            floor_labels=tuple(data.pop("floor_labels", ("L4", "L5", "L6", "L7", "L8"))),
            pillars=tuple(tuple(map(float, r)) for r in data.pop("pillars", [])),
            openings=tuple(tuple(map(float, r)) for r in data.pop("openings", [])),
            vents=tuple(tuple(map(float, v)) for v in data.pop("vents", [])),
            doors=tuple(tuple(map(float, r)) for r in doors),
            activation_time=float(data.pop("activation_time", 120.0)),
            physics=physics,
            **data,
        )

    @classmethod
    def from_toml(cls, path) -> "BuildingModel":
        return cls.from_dict(load_toml(path))

    @classmethod
    def default(cls) -> "BuildingModel":
        with resources.as_file(resources.files("firecampaign") / "data" / "building.toml") as p:
            return cls.from_toml(p)

    def sealed(self) -> "BuildingModel":
        """Same building with vents and doors removed (closed system)."""
        return replace(self, vents=(), doors=())

    def coarsened(self, cell: float) -> "BuildingModel":
        return replace(self, cell=cell)

    @property
    def n_floors(self) -> int:
        return len(self.floor_labels)

    @property
    def nx(self) -> int:
        return int(round(self.width / self.cell))

    @property
    def ny(self) -> int:
        return int(round(self.depth / self.cell))

    @property
    def cell_volume(self) -> float:
        return self.cell * self.cell * self.floor_height

    @cached_property
    def grid(self) -> _Grid:
        nf, ny, nx, h = self.n_floors, self.ny, self.nx, self.cell
        plate = np.ones((ny, nx), dtype=bool)
        for rect in self.pillars:
            plate &= ~_cells_in(rect, nx, ny, h)
        mask = np.broadcast_to(plate, (nf, ny, nx)).copy()
        link_x = mask[:, :, 1:] & mask[:, :, :-1]
        link_y = mask[:, 1:, :] & mask[:, :-1, :]
        lower, upper = [], []
        plane = ny * nx
        for k, rect in enumerate(self.openings[: nf - 1]):
            cells = np.flatnonzero(_cells_in(rect, nx, ny, h) & plate)
            lower.append(k * plane + cells)
            upper.append((k + 1) * plane + cells)
        vent_flat = []
        for vx, vy in self.vents:
            i = min(int(vx // h), nx - 1)
            j = min(int(vy // h), ny - 1)
            if plate[j, i]:
                vent_flat.append((nf - 1) * plane + j * nx + i)
        vent_cells, vent_counts = np.unique(np.array(vent_flat, dtype=np.int64), return_counts=True)
        door_mask = np.zeros((ny, nx), dtype=bool)
        for rect in self.doors:
            door_mask |= _cells_in(rect, nx, ny, h)
        door_cells = np.flatnonzero(door_mask & plate)
        cat = lambda parts: np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
        return _Grid(mask, link_x, link_y, cat(lower), cat(upper), vent_cells, vent_counts, door_cells)

    def stable_dt(self) -> float:
        """Largest dt keeping every explicit update positive."""
        p = self.physics
        bounds = [self.cell ** 2 / (4.0 * p.diffusivity)]
        if self.openings:
            bounds.append(1.0 / (2.0 * p.exchange_rate + p.upward_bias))
        counts = self.grid.vent_counts
        if len(counts):
            bounds.append(self.cell_volume / (p.vent_rate * counts.max()))
        if len(self.grid.door_cells) and len(counts):
            per_door = p.vent_rate * counts.sum() / len(self.grid.door_cells)
            bounds.append(self.cell_volume / per_door)
        return min(bounds)


@dataclass(frozen=True)
class FireScenario:
    x: float
    y: float
    floor: int
    peak_hrr: float = 1.0e6
    growth_time: float = 150.0
    duration: float = 1800.0
    size: float = 2.0

    @property
    def patch(self) -> Rect:
        return (self.x, self.x + self.size, self.y, self.y + self.size)


def hrr_at(t: float, scenario: FireScenario) -> float:
    """t-squared growth to the peak heat release rate (W), then constant."""
    if scenario.growth_time <= 0:
        return scenario.peak_hrr
    return scenario.peak_hrr * min(1.0, (t / scenario.growth_time) ** 2)


def validate_fire_location(model: BuildingModel, x: float, y: float, floor: int,
                           size: float = 2.0, clearance: float = 1.0) -> str | None:
    """Return ``None`` if the fire patch is allowed, else a description of the violation."""
    if int(floor) != floor or not 0 <= floor < model.n_floors:
        return f"floor {floor} outside 0..{model.n_floors - 1}"
    patch = (x, x + size, y, y + size)
    if (patch[0] < clearance - 1e-9 or patch[1] > model.width - clearance + 1e-9
            or patch[2] < clearance - 1e-9 or patch[3] > model.depth - clearance + 1e-9):
        return f"wall clearance: patch {patch} closer than {clearance} m to a wall"
    for k, (px0, px1, py0, py1) in enumerate(model.pillars):
        buffered = (px0 - clearance, px1 + clearance, py0 - clearance, py1 + clearance)
        if _overlaps(patch, buffered):
            return f"pillar clearance: patch {patch} within {clearance} m of pillar {k}"
    return None


def fire_source_weights(model: BuildingModel, scenario: FireScenario) -> np.ndarray:
    """Fraction of the fire patch area over each cell of its floor, shape (ny, nx)."""
    h = model.cell
    x0, x1, y0, y1 = scenario.patch
    edges_x = np.arange(model.nx + 1) * h
    edges_y = np.arange(model.ny + 1) * h
    ox = np.clip(np.minimum(x1, edges_x[1:]) - np.maximum(x0, edges_x[:-1]), 0.0, None)
    oy = np.clip(np.minimum(y1, edges_y[1:]) - np.maximum(y0, edges_y[:-1]), 0.0, None)
    w = np.outer(oy, ox) / (scenario.size * scenario.size)
    return w * model.grid.mask[int(scenario.floor)]


@dataclass
class SimState:
    step_index: int
    dt: float
    smoke: np.ndarray  # (floors, ny, nx) soot density, kg/m3
    activation_time: float = 120.0

    @property
    def t(self) -> float:
        return self.step_index * self.dt

    @property
    def vents_active(self) -> bool:
        return self.t >= self.activation_time - 1e-9

    def total_mass(self, model: BuildingModel) -> float:
        return float(np.sum(self.smoke, dtype=np.float64) * model.cell_volume)


def initial_state(model: BuildingModel, dt: float) -> SimState:
    return SimState(0, dt, np.zeros((model.n_floors, model.ny, model.nx)), model.activation_time)


def check_timestep(model: BuildingModel, dt: float) -> None:
    limit = model.stable_dt()
    if not dt > 0 or dt > limit * (1 + 1e-12):
        raise UnstableTimestep(f"dt={dt} s exceeds stability bound {limit:.6g} s")


def step(state: SimState, model: BuildingModel, scenario: FireScenario | None, dt: float | None = None,
         _weights: np.ndarray | None = None, _checked: bool = False) -> SimState:
    """Advance one explicit step. Returns a new state; ``state`` is untouched."""
    dt = state.dt if dt is None else dt
    if not _checked:
        check_timestep(model, dt)
    p = model.physics
    g = model.grid
    rho = state.smoke.copy()
    t = state.step_index * dt

    if scenario is not None and t < scenario.duration:
        weights = fire_source_weights(model, scenario) if _weights is None else _weights
        soot_rate = hrr_at(t + 0.5 * dt, scenario) / p.heat_of_combustion * p.soot_yield
        if soot_rate > 0:
            rho[int(scenario.floor)] += weights * (soot_rate * dt / model.cell_volume)

    r = p.diffusivity * dt / (model.cell * model.cell)
    fx = r * (rho[:, :, 1:] - rho[:, :, :-1]) * g.link_x
    fy = r * (rho[:, 1:, :] - rho[:, :-1, :]) * g.link_y
    rho[:, :, :-1] += fx
    rho[:, :, 1:] -= fx
    rho[:, :-1, :] += fy
    rho[:, 1:, :] -= fy

    flat = rho.reshape(-1)
    if len(g.lower):
        lo = flat[g.lower]
        up = flat[g.upper]
        moved = dt * (p.exchange_rate * (lo - up) + p.upward_bias * lo)
        flat[g.lower] -= moved
        flat[g.upper] += moved

    if state.vents_active:
        if len(g.vent_cells):
            flat[g.vent_cells] *= 1.0 - g.vent_counts * (p.vent_rate * dt / model.cell_volume)
            if len(g.door_cells):
                inflow = p.vent_rate * g.vent_counts.sum() / len(g.door_cells)
                flat[g.door_cells] *= 1.0 - inflow * dt / model.cell_volume

    np.maximum(rho, 0.0, out=rho)
    return SimState(state.step_index + 1, dt, rho, state.activation_time)


def visibility(smoke: np.ndarray, model: BuildingModel) -> np.ndarray:
    """Visibility distance (m) for a density field; capped, NaN on void cells."""
    p = model.physics
    with np.errstate(divide="ignore"):
        vis = np.where(smoke > 0, p.visibility_constant / (p.extinction_coefficient * smoke), p.vis_cap)
    vis = np.minimum(vis, p.vis_cap)
    return np.where(model.grid.mask, vis, np.nan)


@dataclass
class VisibilitySlice:
    floor: int
    values: np.ndarray


def extract_eye_level_slices(state: SimState, model: BuildingModel) -> list[VisibilitySlice]:
    vis = visibility(state.smoke, model)
    return [VisibilitySlice(k, vis[k]) for k in range(model.n_floors)]


# ---------------------------------------------------------------------------
# Integration and output files
# ---------------------------------------------------------------------------


@dataclass
class OutputSettings:
    dt: float = 0.25
    devc_interval: float = 15.0
    hrr_interval: float = 15.0
    slice_interval: float = 5.0
    console_every: int = 100
    chid: str = "fire"


def _ratio(interval: float, dt: float, what: str) -> int:
    n = round(interval / dt)
    if n < 1 or abs(n * dt - interval) > 1e-9 * max(1.0, interval):
        raise ValueError(f"{what} interval {interval} is not a multiple of dt={dt}")
    return n


def integrate(model: BuildingModel, scenario: FireScenario, settings: OutputSettings,
              on_slice: Callable[[int, np.ndarray], None] | None = None,
              on_devc: Callable[[float, np.ndarray], None] | None = None,
              on_hrr: Callable[[float], None] | None = None,
              on_step: Callable[[SimState], None] | None = None,
              on_activate: Callable[[float], None] | None = None) -> SimState:
    """Run 0 -> duration, reporting outputs through callbacks.

    ``on_slice(k, vis)`` receives the time-averaged visibility over
    ``[k*slice_interval, (k+1)*slice_interval)``; ``on_devc(t, vis)`` and
    ``on_hrr(t)`` fire at every multiple of their interval up to the end.
    """
    dt = settings.dt
    check_timestep(model, dt)
    n_steps = _ratio(scenario.duration, dt, "duration")
    per_slice = _ratio(settings.slice_interval, dt, "slice")
    per_devc = _ratio(settings.devc_interval, dt, "devc")
    per_hrr = _ratio(settings.hrr_interval, dt, "hrr")
    weights = fire_source_weights(model, scenario)
    state = initial_state(model, dt)
    acc = None
    activated = False
    for n in range(n_steps):
        if on_activate is not None and not activated and state.vents_active:
            activated = True
            on_activate(state.t)
        if on_slice is not None:
            vis = visibility(state.smoke, model)
            acc = vis if acc is None else acc + vis
            if (n + 1) % per_slice == 0:
                on_slice((n + 1) // per_slice - 1, acc / per_slice)
                acc = None
        state = step(state, model, scenario, dt, _weights=weights, _checked=True)
        if on_step is not None:
            on_step(state)
        if on_devc is not None and (n + 1) % per_devc == 0:
            on_devc(state.t, visibility(state.smoke, model))
        if on_hrr is not None and (n + 1) % per_hrr == 0:
            on_hrr(state.t)
    return state


def simulate_slices(model: BuildingModel, scenario: FireScenario, settings: OutputSettings) -> np.ndarray:
    """Time-averaged eye-level slices in memory, shape (samples, floors, ny, nx)."""
    out = []
    integrate(model, scenario, settings, on_slice=lambda k, v: out.append(v))
    return np.stack(out)


def devc_columns(model: BuildingModel) -> list[str]:
    labels = model.floor_labels
    return (["Time"] + [f"VIS_MIN_{lab}" for lab in labels]
            + [f"VIS_MEAN_{lab}" for lab in labels] + ["VISIBILITY_MIN"])


def devc_row_values(vis: np.ndarray) -> list[float]:
    mins = [float(np.nanmin(v)) for v in vis]
    means = [float(np.nanmean(v)) for v in vis]
    return mins + means + [min(mins)]


def _fmt(v: float) -> str:
    return f"{v:.7E}"


@dataclass
class ScenarioOutputs:
    files: dict[str, Path]
    wall_time: float
    steps: int


def output_paths(directory, chid: str) -> dict[str, Path]:
    d = Path(directory)
    return {
        "input": d / f"{chid}.fds",
        "devc": d / f"{chid}_devc.csv",
        "hrr": d / f"{chid}_hrr.csv",
        "console": d / f"{chid}.out",
        "state": d / f"{chid}_devc_ctrl_log.csv",
        "slices": d / f"{chid}_slices.bin",
    }


def run_scenario(model: BuildingModel, scenario: FireScenario, directory,
                 settings: OutputSettings | None = None, building_ref: str = "default",
                 write_input_file: bool = True) -> ScenarioOutputs:
    """Simulate one scenario, streaming FDS-shaped output files into ``directory``."""
    settings = settings or OutputSettings()
    problem = validate_fire_location(model, scenario.x, scenario.y, scenario.floor, scenario.size)
    if problem:
        raise InvalidLocation(problem)
    paths = output_paths(directory, settings.chid)
    paths["input"].parent.mkdir(parents=True, exist_ok=True)
    if write_input_file:
        write_input(paths["input"], scenario, settings, building_ref)
    n_samples = _ratio(scenario.duration, settings.dt, "duration") // _ratio(settings.slice_interval, settings.dt, "slice")
    start = time.perf_counter()
    labels = model.floor_labels

    with open(paths["devc"], "w", buffering=1) as devc, \
            open(paths["hrr"], "w", buffering=1) as hrr, \
            open(paths["console"], "w", buffering=1) as console, \
            open(paths["state"], "w", buffering=1) as state_log, \
            open(paths["slices"], "wb") as slices:
        cols = devc_columns(model)
        devc.write(",".join(["s"] + ["m"] * (len(cols) - 1)) + "\n")
        devc.write(",".join(cols) + "\n")
        hrr.write("s,kW\nTime,HRR\n")
        state_log.write("Time, Type, ID, Old State, New State\n")
        console.write(" Fire Dynamics Simulator (firecampaign desk-scale model)\n")
        console.write(f" Version: {__version__}\n")
        console.write(f" Job TITLE: fire at x={scenario.x} m, y={scenario.y} m, floor {labels[scenario.floor]}\n")
        header = {
            "floors": model.n_floors, "nx": model.nx, "ny": model.ny, "samples": n_samples,
            "dt_out": settings.slice_interval, "cell": model.cell, "dtype": "<f4",
        }
        slices.write(SLICE_MAGIC + json.dumps(header).encode() + b"\n")

        def on_slice(k, vis):
            slices.write(vis.astype("<f4").tobytes())
            slices.flush()

        def on_devc(t, vis):
            devc.write(",".join(_fmt(v) for v in [t] + devc_row_values(vis)) + "\n")

        def on_hrr(t):
            hrr.write(f"{_fmt(t)},{_fmt(hrr_at(t, scenario) / 1000.0)}\n")

        def on_step(st):
            if st.step_index % settings.console_every == 0:
                console.write(format_console_timestep(st.step_index, st.t) + "\n")

        def on_activate(t):
            if model.vents or model.doors:
                state_log.write(format_state_log_line(t, "device", "VENT_TIMER", False, True) + "\n")
                state_log.write(format_state_log_line(t, "control", "VENTS_OPEN", False, True) + "\n")
                state_log.write(format_state_log_line(t, "control", "DOORS_OPEN", False, True) + "\n")

        final = integrate(model, scenario, settings, on_slice, on_devc, on_hrr, on_step, on_activate)
        console.write(" STOP: FDS completed successfully\n")
    return ScenarioOutputs(paths, time.perf_counter() - start, final.step_index)


@dataclass
class SliceHistory:
    data: np.ndarray  # (samples, floors, ny, nx)
    dt_out: float
    cell: float

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.data.shape[0]) * self.dt_out


def write_slice_history(path, data: np.ndarray, dt_out: float, cell: float = 1.0) -> Path:
    from ._io import atomic_write_bytes

    s, f, ny, nx = data.shape
    header = {"floors": f, "nx": nx, "ny": ny, "samples": s, "dt_out": dt_out, "cell": cell, "dtype": "<f4"}
    payload = SLICE_MAGIC + json.dumps(header).encode() + b"\n" + np.asarray(data, dtype="<f4").tobytes()
    return atomic_write_bytes(path, payload)


def read_slice_history(path) -> SliceHistory:
    with open(path, "rb") as fh:
        if fh.readline() != SLICE_MAGIC:
            raise ValueError(f"{path}: not a slice history file")
        header = json.loads(fh.readline())
        raw = fh.read()
    shape = (header["floors"], header["ny"], header["nx"])
    per = int(np.prod(shape)) * 4
    complete = len(raw) // per
    data = np.frombuffer(raw[: complete * per], dtype=header.get("dtype", "<f4"))
    return SliceHistory(data.reshape((complete,) + shape).astype(np.float64), float(header["dt_out"]),
                        float(header.get("cell", 1.0)))


# ---------------------------------------------------------------------------
# Namelist input: scenario <-> file
# ---------------------------------------------------------------------------


def scenario_namelist(scenario: FireScenario, settings: OutputSettings, building_ref: str = "default",
                      model: BuildingModel | None = None) -> NamelistDocument:
    model = model or BuildingModel()
    z = float(scenario.floor) * model.floor_height
    area = scenario.size * scenario.size
    groups = [
        NamelistGroup("HEAD", {"CHID": settings.chid, "TITLE": "firecampaign office block"}),
        NamelistGroup("TIME", {"T_END": float(scenario.duration)}),
        NamelistGroup("SURF", {"ID": "FIRE", "HRRPUA": float(scenario.peak_hrr) / area,
                               "TAU_Q": -float(scenario.growth_time)}),
        NamelistGroup("OBST", {"XB": (float(scenario.x), float(scenario.x + scenario.size),
                                      float(scenario.y), float(scenario.y + scenario.size), z, z),
                               "SURF_ID": "FIRE"}),
        NamelistGroup("DUMP", {"DT_DEVC": float(settings.devc_interval), "DT_HRR": float(settings.hrr_interval),
                               "DT_SLCF": float(settings.slice_interval)}),
        NamelistGroup("FIRESIM", {"FLOOR": int(scenario.floor), "DT": float(settings.dt),
                                  "SIZE": float(scenario.size), "CONSOLE_EVERY": int(settings.console_every),
                                  "BUILDING": building_ref}),
    ]
    return NamelistDocument(groups)


def write_input(path, scenario: FireScenario, settings: OutputSettings, building_ref: str = "default") -> Path:
    from ._io import atomic_write_text

    return atomic_write_text(path, serialize_namelist(scenario_namelist(scenario, settings, building_ref)))


def scenario_from_namelist(doc: NamelistDocument, base_dir=None):
    """Recover (model, scenario, settings) from an input written by ``write_input``."""
    xb = None
    for obst in doc.find("OBST"):
        if str(obst.params.get("SURF_ID", "")).upper() == "FIRE":
            xb = obst.params["XB"]
            break
    if xb is None:
        raise ValueError("input has no OBST with SURF_ID='FIRE'")
    size = float(doc.first("FIRESIM", "SIZE", xb[1] - xb[0]))
    building = doc.first("FIRESIM", "BUILDING", "default")
    if building == "default":
        model = BuildingModel.default()
    else:
        bpath = Path(building)
        if not bpath.is_absolute() and base_dir is not None:
            bpath = Path(base_dir) / bpath
        model = BuildingModel.from_toml(bpath)
    scenario = FireScenario(
        x=float(xb[0]), y=float(xb[2]), floor=int(doc.first("FIRESIM", "FLOOR")),
        peak_hrr=float(doc.first("SURF", "HRRPUA")) * size * size,
        growth_time=-float(doc.first("SURF", "TAU_Q", -150.0)),
        duration=float(doc.first("TIME", "T_END", 1800.0)),
        size=size,
    )
    settings = OutputSettings(
        dt=float(doc.first("FIRESIM", "DT", 0.25)),
        devc_interval=float(doc.first("DUMP", "DT_DEVC", 15.0)),
        hrr_interval=float(doc.first("DUMP", "DT_HRR", 15.0)),
        slice_interval=float(doc.first("DUMP", "DT_SLCF", 5.0)),
        console_every=int(doc.first("FIRESIM", "CONSOLE_EVERY", 100)),
        chid=str(doc.first("HEAD", "CHID", "fire")),
    )
    return model, scenario, settings


def load_scenario_toml(path):
    """Read a scenario configuration file into (model, scenario, settings, building_ref)."""
    path = Path(path)
    cfg = load_toml(path)
    sc = cfg.get("scenario", {})
    out = cfg.get("output", {})
    building_ref = cfg.get("building", "default")
    if building_ref == "default":
        model = BuildingModel.default()
    else:
        bpath = Path(building_ref)
        if not bpath.is_absolute():
            bpath = path.parent / bpath
        building_ref = str(bpath.resolve())
        model = BuildingModel.from_toml(bpath)
    scenario = FireScenario(
        x=float(sc["x"]), y=float(sc["y"]), floor=int(sc["floor"]),
        peak_hrr=float(sc.get("peak_hrr", 1.0e6)), growth_time=float(sc.get("growth_time", 150.0)),
        duration=float(sc.get("duration", 1800.0)), size=float(sc.get("size", 2.0)),
    )
    settings = OutputSettings(**out)
    return model, scenario, settings, building_ref


def main(argv=None) -> int:
    """Entry point used as the supervised child: ``python -m firecampaign.firesim INPUT.fds``."""
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m firecampaign.firesim INPUT.fds", file=sys.stderr)
        return 2
    path = Path(argv[0])
    try:
        doc = parse_namelist(path.read_bytes())
        model, scenario, settings = scenario_from_namelist(doc, path.parent)
        run_scenario(model, scenario, path.parent, settings, write_input_file=False)
    except (OSError, ValueError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
