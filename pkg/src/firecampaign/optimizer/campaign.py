"""Sobol-initialised, GP-guided search over fire locations.

A campaign evaluates ``n_init`` quasi-random points, then repeatedly fits a
GP to everything seen so far and evaluates the expected-improvement argmax.
The objective is maximised (the worst fire); callers wanting a minimum
negate their objective.
"""

from __future__ import annotations

import logging
import math
import statistics
import string
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import firesim
from ..tenability import TenabilityConfig, score_slices
from .gp import GpConfig, GpModel, ei_from_moments, fit_gp, gp_posterior
from .sobol import SobolState, sobol_next

log = logging.getLogger(__name__)

Params = dict


class ObjectiveFailure(RuntimeError):
    def __init__(self, params: Params, reason: str = ""):
        super().__init__(f"objective failed at {params}: {reason}" if reason else f"objective failed at {params}")
        self.params = params
        self.reason = reason


class InsufficientRuns(ValueError):
    pass


class MissingKey(KeyError):
    def __init__(self, run_id: str, key: str):
        super().__init__(f"run {run_id} has no numeric value for {key!r}")
        self.run_id = run_id
        self.key = key

    def __str__(self):
        return self.args[0]


# --- parameter space -------------------------------------------------------

@dataclass(frozen=True)
class ContinuousDim:
    name: str
    lower: float
    upper: float
    resolution: float = 1.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower must be below upper")
        if not self.resolution > 0:
            raise ValueError(f"{self.name}: resolution must be positive")


@dataclass(frozen=True)
class QuantisedDim:
    name: str
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"{self.name}: need at least one level")


@dataclass(frozen=True)
class ParameterSpace:
    dims: tuple

    def __post_init__(self):
        names = [d.name for d in self.dims]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def continuous(self) -> list[int]:
        return [i for i, d in enumerate(self.dims) if isinstance(d, ContinuousDim)]

    @property
    def quantised(self) -> list[int]:
        return [i for i, d in enumerate(self.dims) if isinstance(d, QuantisedDim)]

    def to_unit(self, params: Params) -> np.ndarray:
        """Unit-cube coordinates; a level ``l`` of ``L`` sits at ``(l + 0.5) / L``."""
        out = np.empty(self.ndim)
        for i, d in enumerate(self.dims):
            v = params[d.name]
            if isinstance(d, ContinuousDim):
                out[i] = (float(v) - d.lower) / (d.upper - d.lower)
            else:
                out[i] = (int(v) + 0.5) / d.levels
        return out

    def from_unit(self, u) -> Params:
        return map_to_space(u, self)

    def contains(self, params: Params) -> bool:
        for d in self.dims:
            v = params.get(d.name)
            if v is None:
                return False
            if isinstance(d, ContinuousDim):
                if not d.lower - 1e-9 <= v <= d.upper + 1e-9:
                    return False
            elif int(v) != v or not 0 <= v < d.levels:
                return False
        return True

    def distinct(self, a: Params, b: Params) -> bool:
        """True when ``a`` and ``b`` differ by at least one grid cell in some dimension."""
        for d in self.dims:
            if isinstance(d, ContinuousDim):
                if abs(a[d.name] - b[d.name]) >= d.resolution - 1e-9:
                    return True
            elif int(a[d.name]) != int(b[d.name]):
                return True
        return False


def map_to_space(u, space: ParameterSpace) -> Params:
    u = np.asarray(u, dtype=np.float64)
    out = {}
    for i, d in enumerate(space.dims):
        if isinstance(d, ContinuousDim):
            out[d.name] = d.lower + float(u[i]) * (d.upper - d.lower)
        else:
            out[d.name] = min(int(math.floor(u[i] * d.levels)), d.levels - 1)
    return out


def fire_space(model: firesim.BuildingModel | None = None, size: float = 2.0, clearance: float = 1.0,
               resolution: float | None = None) -> ParameterSpace:
    """Patch-origin coordinates that keep a ``size`` m fire off the walls."""
    model = model or firesim.BuildingModel.default()
    res = resolution if resolution is not None else model.cell
    return ParameterSpace((
        ContinuousDim("x", clearance, model.width - clearance - size, res),
        ContinuousDim("y", clearance, model.depth - clearance - size, res),
        QuantisedDim("floor", model.n_floors),
    ))


def fire_feasibility(model: firesim.BuildingModel, size: float = 2.0, clearance: float = 1.0):
    def feasible(params: Params) -> bool:
        return firesim.validate_fire_location(model, params["x"], params["y"], int(params["floor"]),
                                              size, clearance) is None
    return feasible


# --- acquisition -----------------------------------------------------------

@dataclass(frozen=True)
class AcquisitionConfig:
    jitter: float = 0.01          # standardized output units
    n_starts: int = 256
    n_refine: int = 8
    initial_step: float = 0.1     # fraction of each continuous range


@dataclass
class Observation:
    params: Params
    value: float
    run_id: str | None = None


def _level_grid(space: ParameterSpace) -> list[tuple[int, ...]]:
    grids = [[()]]
    for i in space.quantised:
        grids = [[g + (lev,) for g in grids[0] for lev in range(space.dims[i].levels)]]
    return grids[0]


def _admissible(params, space, observed, feasible) -> bool:
    if feasible is not None and not feasible(params):
        return False
    return all(space.distinct(params, o) for o in observed)


def propose_next(model: GpModel, space: ParameterSpace, acq: AcquisitionConfig | None = None,
                 seed: int = 0, observed: Sequence[Params] = (),
                 feasible: Callable[[Params], bool] | None = None) -> tuple[Params, float]:
    """Argmax of expected improvement over ``space``; returns (params, EI).

    ``model`` must be fitted on unit-cube inputs (``space.to_unit``).
    Random multistarts are scored at every level of the quantised
    dimensions, then the best few are refined by coordinate search over the
    continuous dimensions. EI is computed in standardized output units.
    """
    acq = acq or AcquisitionConfig()
    rng = np.random.default_rng(seed)
    cont, quant = space.continuous, space.quantised
    levels = _level_grid(space)
    best_y = float(np.max(model.y)) if len(model.y) else 0.0

    def unit_point(c: np.ndarray, lev: tuple[int, ...]) -> np.ndarray:
        u = np.empty(space.ndim)
        u[cont] = c
        for i, lv in zip(quant, lev):
            u[i] = (lv + 0.5) / space.dims[i].levels
        return u

    def to_params(c, lev) -> Params:
        p = {}
        for i, v in zip(cont, c):
            d = space.dims[i]
            p[d.name] = d.lower + float(v) * (d.upper - d.lower)
        for i, lv in zip(quant, lev):
            p[space.dims[i].name] = int(lv)
        return p

    def score_many(points: np.ndarray) -> np.ndarray:
        z = (points - model.lower) / (model.upper - model.lower)
        mean, var = model.predict_normalized(z)
        return ei_from_moments(mean, np.sqrt(var), best_y, acq.jitter)

    starts = rng.random((acq.n_starts, len(cont)))
    cands = []
    for lev in levels:
        pts = np.array([unit_point(c, lev) for c in starts])
        ei = score_many(pts)
        for k in range(len(starts)):
            cands.append((float(ei[k]), k, lev))
    cands.sort(key=lambda t: (-t[0], t[1], t[2]))

    fallback = None
    refined = []
    for ei0, k, lev in cands:
        params = to_params(starts[k], lev)
        if not _admissible(params, space, observed, feasible):
            continue
        if fallback is None:
            fallback = (params, ei0)
        if len(refined) >= acq.n_refine:
            break
        refined.append(_refine(starts[k].copy(), lev, ei0, space, cont, acq, unit_point, to_params,
                               score_many, observed, feasible))
    if refined:
        refined.sort(key=lambda t: -t[1])
        return refined[0]
    if fallback is not None:
        return fallback
    # nothing admissible among the starts: take the top candidate regardless of spacing
    ei0, k, lev = cands[0]
    return to_params(starts[k], lev), ei0


def _refine(c, lev, ei, space, cont, acq, unit_point, to_params, score_many, observed, feasible):
    mins = [space.dims[i].resolution / (space.dims[i].upper - space.dims[i].lower) for i in cont]
    step = acq.initial_step
    while True:
        improved = False
        for j in range(len(cont)):
            if step < mins[j] * 0.5:
                continue
            for sign in (1.0, -1.0):
                trial = c.copy()
                trial[j] = min(max(trial[j] + sign * step, 0.0), 1.0)
                val = float(score_many(unit_point(trial, lev)[None, :])[0])
                if val > ei + 1e-15 and _admissible(to_params(trial, lev), space, observed, feasible):
                    c, ei, improved = trial, val, True
        if not improved:
            step *= 0.5
            if all(step < m * 0.5 for m in mins):
                break
    return to_params(c, lev), ei


# --- campaign loop ---------------------------------------------------------

@dataclass
class CampaignResult:
    observations: list[Observation]
    best: Observation | None
    evaluations_used: int
    proposals: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)


def sobol_design(space: ParameterSpace, n: int, seed: int = 0,
                 feasible: Callable[[Params], bool] | None = None, max_draws: int = 100_000) -> list[Params]:
    """First ``n`` admissible points of a digitally shifted Sobol sequence."""
    state = SobolState.shifted(space.ndim, seed)
    out: list[Params] = []
    for _ in range(max_draws):
        if len(out) == n:
            break
        p = map_to_space(sobol_next(state), space)
        if _admissible(p, space, out, feasible):
            out.append(p)
    if len(out) < n:
        raise ValueError(f"only {len(out)} admissible Sobol points found")
    return out


def run_campaign(objective: Callable[[Params], float], space: ParameterSpace, n_init: int = 10,
                 n_guided: int = 10, seed: int = 0, tracker=None,
                 feasible: Callable[[Params], bool] | None = None,
                 gp_config: GpConfig | None = None, acq: AcquisitionConfig | None = None,
                 folder: str = "/campaign", name: str = "campaign", tags=("campaign",),
                 on_observation: Callable[[Observation], None] | None = None) -> CampaignResult:
    if n_init < 2:
        raise ValueError("n_init must be at least 2")
    acq = acq or AcquisitionConfig()
    gp_config = gp_config or GpConfig(seed=seed)
    result = CampaignResult([], None, 0)
    attempted: list[Params] = []

    def evaluate(params: Params, phase: str, index: int) -> None:
        attempted.append(params)
        result.evaluations_used += 1
        run_id = None
        if tracker is not None:
            meta = {**params, "campaign.seed": seed, "campaign.phase": phase, "campaign.index": index}
            run_id = tracker.create_run(name=f"{name}-{index:03d}", folder=folder, tags=tags, metadata=meta)
            tracker.set_status(run_id, "running")
        try:
            value = float(objective(params))
            if not math.isfinite(value):
                raise ObjectiveFailure(params, f"non-finite score {value}")
        except ObjectiveFailure as exc:
            log.warning("%s", exc)
            result.failures.append({"index": index, "params": params, "reason": str(exc)})
            if tracker is not None:
                tracker.log_event(run_id, f"objective failure: {exc}")
                tracker.set_status(run_id, "failed")
            return
        if tracker is not None:
            tracker.log_metrics(run_id, 0.0, 0, {"badness": value})
            tracker.set_status(run_id, "completed")
        obs = Observation(params, value, run_id)
        result.observations.append(obs)
        if result.best is None or value > result.best.value:
            result.best = obs
        if on_observation is not None:
            on_observation(obs)

    for i, p in enumerate(sobol_design(space, n_init, seed, feasible)):
        evaluate(p, "init", i)

    sobol_extra = None
    for g in range(n_guided):
        index = n_init + g
        if len(result.observations) >= 2:
            X = np.array([space.to_unit(o.params) for o in result.observations])
            y = np.array([o.value for o in result.observations])
            model = fit_gp(X, y, gp_config, bounds=(np.zeros(space.ndim), np.ones(space.ndim)))
            params, ei = propose_next(model, space, acq, seed=seed * 7919 + g, observed=attempted,
                                      feasible=feasible)
            result.proposals.append({"index": index, "params": params, "ei": ei,
                                     "lengthscales": model.lengthscales.tolist(),
                                     "degenerate": model.degenerate})
        else:
            # too few successes to fit a surrogate: keep sampling quasi-randomly
            if sobol_extra is None:
                sobol_extra = iter(sobol_design(space, n_init + n_guided, seed, feasible)[n_init:])
            params = next(sobol_extra)
            result.proposals.append({"index": index, "params": params, "ei": None,
                                     "lengthscales": None, "degenerate": None})
        evaluate(params, "guided", index)
    return result


# --- grid baseline ---------------------------------------------------------

def grid_candidates(model: firesim.BuildingModel, cell_size: float = 10.0, size: float = 2.0,
                    clearance: float = 1.0) -> list[Params]:
    """One fire per ``cell_size`` square per floor, centred in the square.

    Squares that would put the fire inside a pillar buffer are dropped.
    Ordered by floor, then y, then x.
    """
    if not cell_size > 0:
        raise ValueError("cell_size must be positive")
    nx = max(1, round(model.width / cell_size))
    ny = max(1, round(model.depth / cell_size))
    px, py = model.width / nx, model.depth / ny
    feasible = fire_feasibility(model, size, clearance)
    out = []
    for floor in range(model.n_floors):
        for j in range(ny):
            for i in range(nx):
                p = {"x": (i + 0.5) * px - size / 2, "y": (j + 0.5) * py - size / 2, "floor": floor}
                if feasible(p):
                    out.append(p)
    return out


def grid_search(objective: Callable[[Params], float], candidates: Sequence[Params]) -> list[Observation]:
    out = []
    for p in candidates:
        try:
            out.append(Observation(p, float(objective(p))))
        except ObjectiveFailure as exc:
            log.warning("%s", exc)
    return out


# --- objectives ------------------------------------------------------------

def firesim_objective(model: firesim.BuildingModel | None = None,
                      settings: firesim.OutputSettings | None = None,
                      config: TenabilityConfig | None = None, duration: float = 1800.0,
                      **scenario_kwargs) -> Callable[[Params], float]:
    """Badness of an in-memory simulator run for a fire at ``params``."""
    model = model or firesim.BuildingModel.default()
    settings = settings or firesim.OutputSettings()
    config = config or TenabilityConfig().rescaled(duration)
    size = scenario_kwargs.get("size", 2.0)
    if config.bin_width < settings.slice_interval - 1e-9:
        raise ValueError(f"slice interval {settings.slice_interval:g} s is coarser than the "
                         f"{config.bin_width:g} s score bins; shorten it or lengthen the run")

    def objective(params: Params) -> float:
        problem = firesim.validate_fire_location(model, params["x"], params["y"], int(params["floor"]), size)
        if problem:
            raise ObjectiveFailure(params, problem)
        scenario = firesim.FireScenario(params["x"], params["y"], int(params["floor"]),
                                        duration=duration, **scenario_kwargs)
        raw = firesim.simulate_slices(model, scenario, settings)
        return score_slices(raw, settings.slice_interval, config)

    return objective


def command_objective(template: str, command: Sequence[str], score_file: str, workdir,
                      score_column: str | None = None, timeout: float | None = None,
                      input_name: str = "input.fds") -> Callable[[Params], float]:
    """Objective backed by an external program.

    ``template`` is namelist text with ``$x``-style placeholders for each
    parameter. Each evaluation writes it to a fresh directory, runs
    ``command`` there (``{input}`` in an argument is replaced by the file
    name) and reads the score from ``score_file``: the last value of
    ``score_column`` if that names a metric-table column, otherwise the
    file's first token.
    """
    from ..fds_formats import parse_metric_table

    base = Path(workdir)
    counter = [0]

    def objective(params: Params) -> float:
        counter[0] += 1
        d = base / f"eval-{counter[0]:03d}"
        d.mkdir(parents=True, exist_ok=True)
        try:
            text = string.Template(template).substitute({k: _fmt_param(v) for k, v in params.items()})
        except (KeyError, ValueError) as exc:
            raise ObjectiveFailure(params, f"template error: {exc}") from exc
        (d / input_name).write_text(text)
        argv = [a.replace("{input}", input_name) for a in command]
        try:
            proc = subprocess.run(argv, cwd=d, capture_output=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ObjectiveFailure(params, str(exc)) from exc
        if proc.returncode != 0:
            raise ObjectiveFailure(params, f"exit status {proc.returncode}")
        try:
            raw = (d / score_file).read_text()
            if score_column:
                return parse_metric_table(raw).column(score_column)[-1]
            return float(raw.split()[0])
        except (OSError, ValueError, IndexError, KeyError) as exc:
            raise ObjectiveFailure(params, f"no score: {exc}") from exc

    return objective


def _fmt_param(v) -> str:
    return str(v) if isinstance(v, int) else repr(float(v))


def synthetic_objective(seed: int, space: ParameterSpace | None = None, n_bumps: int = 4) -> Callable[[Params], float]:
    """Seeded sum of Gaussian bumps over the space, for benchmarking search."""
    space = space or fire_space()
    rng = np.random.default_rng(seed)
    centers = rng.random((n_bumps, space.ndim))
    heights = rng.uniform(0.3, 1.0, n_bumps)
    heights[0] = 1.0
    widths = rng.uniform(0.08, 0.25, n_bumps)

    def objective(params: Params) -> float:
        u = space.to_unit(params)
        d2 = np.sum((centers - u) ** 2, axis=1)
        return float(np.sum(heights * np.exp(-0.5 * d2 / widths ** 2)))

    return objective


# --- trend fitting over stored runs ---------------------------------------

@dataclass
class TrendModel:
    model: GpModel
    keys: list[str]
    metric: str
    X: np.ndarray
    y: np.ndarray
    run_ids: list[str]

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation at points ``x`` (rows ordered like ``keys``)."""
        mean, var = gp_posterior(self.model, np.atleast_2d(np.asarray(x, dtype=np.float64)))
        return mean, np.sqrt(var)

    def sweep(self, key: str, n: int = 50, others: dict | None = None):
        """Vary ``key`` over its observed range; the rest stay at their medians.

        Returns ``(x, mean, two_sigma)``.
        """
        j = self.keys.index(key)
        base = np.median(self.X, axis=0)
        for k, v in (others or {}).items():
            base[self.keys.index(k)] = v
        xs = np.linspace(self.X[:, j].min(), self.X[:, j].max(), n)
        pts = np.tile(base, (n, 1))
        pts[:, j] = xs
        mean, sd = self.predict(pts)
        return xs, mean, 2.0 * sd


def fit_trend(store, flt, keys: Sequence[str], metric: str, config: GpConfig | None = None) -> TrendModel:
    runs = store.query_runs(flt)
    if len(runs) < 3:
        raise InsufficientRuns(f"{len(runs)} matching runs, need at least 3")
    X, y, ids = [], [], []
    for run in runs:
        row = []
        for k in keys:
            v = run.metadata.get(k)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise MissingKey(run.id, k)
            row.append(float(v))
        series = store.metric(run.id, metric)
        if not series.points:
            raise MissingKey(run.id, metric)
        X.append(row)
        y.append(series.points[-1][2])
        ids.append(run.id)
    X = np.array(X)
    y = np.array(y)
    model = fit_gp(X, y, config or GpConfig(noise=1e-10))
    return TrendModel(model, list(keys), metric, X, y, ids)


def summary_record(result: CampaignResult) -> dict:
    best = result.best
    return {
        "evaluations_used": result.evaluations_used,
        "observations": len(result.observations),
        "failures": len(result.failures),
        "best": None if best is None else {"params": best.params, "value": best.value, "run_id": best.run_id},
        "median_value": statistics.median(o.value for o in result.observations) if result.observations else None,
    }
