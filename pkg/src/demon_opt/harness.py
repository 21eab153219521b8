"""Experiment orchestration: single runs, lr x momentum sweeps, ELR comparison, result files."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import optimizers as opt
from .problems import (
    Problem,
    make_logistic,
    make_mlp,
    make_quadratic,
    make_rosenbrock,
    make_scale_invariant,
    make_synthetic_data,
    train_val_split,
)
from .schedules import Kind, ScheduleSpec, Target, plateau_start, plateau_update, schedule_eval
from .verify import TRACE_COLUMNS, Trace

DIVERGENCE_NORM = 1e12
VAL_FRACTION = 0.2
DEFAULT_MOMENTUM_GRID = (0.9, 0.95, 0.97)
GRID_COLUMNS = ("lr", "momentum", "mean_final_val", "std_final_val", "diverged_count", "n_seeds")


class ConfigError(ValueError):
    pass


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    SGDM = "sgdm"
    ADAM = "adam"
    DEMON_SGDM = "demon_sgdm"
    DEMON_ADAM = "demon_adam"

    @property
    def is_demon(self) -> bool:
        return self in (Optimizer.DEMON_SGDM, Optimizer.DEMON_ADAM)


def lr_grid(base_lr: float, k_min: int = -2, k_max: int = 2) -> list[float]:
    """Learning rates ``base_lr * 3**k`` for ``k`` in ``[k_min, k_max]``."""
    return [base_lr * 3.0**k for k in range(k_min, k_max + 1)]


# --- configuration ---------------------------------------------------------------

DATA_GENERATORS = ("logistic", "mlp")
PROBLEM_KEYS = {
    "quadratic": {"generator", "L", "mu", "dim"},
    "rosenbrock": {"generator", "dim"},
    "scale_invariant": {"generator", "dim", "seed"},
    "logistic": {"generator", "dataset", "l2"},
    "mlp": {"generator", "dataset", "layer_sizes", "activation"},
}
DATASET_KEYS = {"kind", "n", "d", "noise", "seed"}


def _check_problem_spec(spec: Mapping[str, Any]) -> None:
    gen = spec.get("generator")
    if gen not in PROBLEM_KEYS:
        raise ConfigError(f"problem_spec.generator must be one of {sorted(PROBLEM_KEYS)}, got {gen!r}")
    unknown = sorted(set(spec) - PROBLEM_KEYS[gen])
    if unknown:
        raise ConfigError(f"unknown problem_spec key(s) for {gen}: {', '.join(unknown)}")
    if gen in DATA_GENERATORS:
        ds = spec.get("dataset")
        if not isinstance(ds, Mapping):
            raise ConfigError("problem_spec.dataset must be a record")
        unknown = sorted(set(ds) - DATASET_KEYS)
        if unknown:
            raise ConfigError(f"unknown problem_spec.dataset key(s): {', '.join(unknown)}")
        missing = sorted(DATASET_KEYS - set(ds))
        if missing:
            raise ConfigError(f"missing problem_spec.dataset key(s): {', '.join(missing)}")


@dataclass(frozen=True)
class RunConfig:
    """Full description of one training run.

    Momentum comes from exactly one source: ``beta_init`` for the Demon
    optimizers, ``momentum_schedule`` for SGDM and Adam (as the first-moment
    decay), neither for SGD. ``T`` may be omitted and is then derived from
    ``epochs``: one iteration per epoch for full-batch runs,
    ``ceil(n_train / batch_size)`` per epoch otherwise.
    """

    problem_spec: Mapping[str, Any]
    optimizer: Optimizer
    lr_schedule: ScheduleSpec
    momentum_schedule: ScheduleSpec | None = None
    beta_init: float | None = None
    epochs: int = 100
    T: int | None = None
    batch_size: int | None = None
    weight_decay: float = 0.0
    seed: int = 0
    record_full_vectors: bool = False
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        _check_problem_spec(self.problem_spec)
        if self.lr_schedule.target is not Target.LEARNING_RATE:
            raise ConfigError("lr_schedule must target the learning rate")
        ms = self.momentum_schedule
        if ms is not None and ms.target is not Target.MOMENTUM:
            raise ConfigError("momentum_schedule must target momentum")
        if self.optimizer.is_demon:
            if ms is not None:
                raise ConfigError(f"{self.optimizer.value} decays momentum itself; drop momentum_schedule")
            if self.beta_init is None or not 0.0 <= self.beta_init < 1.0:
                raise ConfigError(f"{self.optimizer.value} needs beta_init in [0, 1)")
        else:
            if self.beta_init is not None:
                raise ConfigError(f"beta_init only applies to Demon optimizers, not {self.optimizer.value}")
            if self.optimizer is Optimizer.SGD and ms is not None:
                raise ConfigError("sgd takes no momentum_schedule")
            if self.optimizer is not Optimizer.SGD and ms is None:
                raise ConfigError(f"{self.optimizer.value} needs a momentum_schedule")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size is not None:
            if self.problem_spec["generator"] not in DATA_GENERATORS:
                raise ConfigError("batch_size only applies to dataset problems")
            if self.batch_size < 1:
                raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        expected = self.epochs * self.iterations_per_epoch
        if self.T is not None and self.T != expected:
            raise ConfigError(f"T={self.T} disagrees with epochs x iterations per epoch = {expected}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")

    @property
    def n_train(self) -> int | None:
        if self.problem_spec["generator"] not in DATA_GENERATORS:
            return None
        n = int(self.problem_spec["dataset"]["n"])
        return n - int(round(VAL_FRACTION * n))

    @property
    def iterations_per_epoch(self) -> int:
        if self.batch_size is None:
            return 1
        return math.ceil(self.n_train / self.batch_size)

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iterations_per_epoch

    @property
    def momentum(self) -> float:
        """Headline momentum value (``beta_init`` or the schedule's initial value)."""
        if self.optimizer.is_demon:
            return self.beta_init
        if self.momentum_schedule is None:
            return 0.0
        return self.momentum_schedule.init_value

    def with_lr(self, lr: float) -> RunConfig:
        s = self.lr_schedule
        lo = None if s.min_value is None else s.min_value * (lr / s.init_value)
        return replace(self, lr_schedule=replace(s, init_value=lr, min_value=lo))

    def with_momentum(self, m: float) -> RunConfig:
        if self.optimizer.is_demon:
            return replace(self, beta_init=m)
        if self.optimizer is Optimizer.SGD:
            return self
        return replace(self, momentum_schedule=replace(self.momentum_schedule, init_value=m))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, ScheduleSpec):
                v = v.to_dict()
            elif isinstance(v, enum.Enum):
                v = v.value
            elif f.name == "problem_spec":
                v = json.loads(json.dumps(v))
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> RunConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        rec = dict(record)
        try:
            for key in ("lr_schedule", "momentum_schedule"):
                if rec.get(key) is not None:
                    rec[key] = ScheduleSpec.from_dict(rec[key])
            return cls(**rec)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


# --- problems ----------------------------------------------------------------------


def build_problem(spec: Mapping[str, Any], seed: int) -> tuple[Problem, Problem | None]:
    """Training objective and (for dataset problems) the held-out validation objective."""
    gen = spec["generator"]
    if gen == "quadratic":
        return make_quadratic(float(spec["L"]), float(spec.get("mu", spec["L"])), int(spec["dim"])), None
    if gen == "rosenbrock":
        return make_rosenbrock(int(spec.get("dim", 2))), None
    if gen == "scale_invariant":
        return make_scale_invariant(int(spec["dim"]), int(spec.get("seed", 0))), None
    ds_spec = spec["dataset"]
    data = make_synthetic_data(
        ds_spec["kind"], int(ds_spec["n"]), int(ds_spec["d"]), float(ds_spec["noise"]), int(ds_spec["seed"])
    )
    train, val = train_val_split(data, seed, VAL_FRACTION)
    if gen == "logistic":
        l2 = float(spec.get("l2", 0.0))
        return make_logistic(train, l2), make_logistic(val, l2)
    sizes = list(spec["layer_sizes"])
    act = spec.get("activation", "tanh")
    return make_mlp(sizes, act, train, seed), make_mlp(sizes, act, val, seed)


# --- single run -----------------------------------------------------------------------


def _diverged(loss: float, theta: np.ndarray) -> bool:
    return not math.isfinite(loss) or not np.all(np.isfinite(theta)) or float(np.linalg.norm(theta)) > DIVERGENCE_NORM


def run_training(config: RunConfig) -> Trace:
    """Execute ``T`` optimizer steps and return the full per-iteration trace.

    Row ``t`` holds the state before step ``t`` together with the step size and
    momentum applied at that step; row ``T`` is the final state. A
    non-finite loss or a parameter norm above ``1e12`` stops the run with
    ``trace.diverged`` set.
    """
    problem, val_problem = build_problem(config.problem_spec, config.seed)
    T = config.total_iterations
    ipe = config.iterations_per_epoch
    init_rng = np.random.default_rng([config.seed, 0])
    batch_rng = np.random.default_rng([config.seed, 1])
    state = opt.init_state(problem.init(init_rng))
    full_vectors = config.record_full_vectors
    trace = Trace(thetas=[] if full_vectors else None, vs=[] if full_vectors else None)
    trace.meta.update(config=config.to_dict(), T=T, problem=problem.name, scale_invariant=problem.scale_invariant)

    lr_plateau = plateau_start(config.lr_schedule) if config.lr_schedule.kind is Kind.PLATEAU else None
    ms = config.momentum_schedule
    mom_plateau = plateau_start(ms) if ms is not None and ms.kind is Kind.PLATEAU else None
    order = np.arange(problem.n_samples) if problem.n_samples else None

    def buffer(s: opt.OptimizerState) -> np.ndarray:
        return s.m if config.optimizer is Optimizer.DEMON_ADAM else s.v

    for t in range(T + 1):
        theta = state.theta
        loss = problem.eval(theta)
        val = None
        if t % ipe == 0:
            val = val_problem.eval(theta) if val_problem is not None else loss
            if math.isfinite(val):
                if lr_plateau is not None:
                    lr_plateau = plateau_update(lr_plateau, val, config.lr_schedule.patience, config.lr_schedule.factor)
                if mom_plateau is not None:
                    mom_plateau = plateau_update(mom_plateau, val, ms.patience, ms.factor)
        eta = schedule_eval(config.lr_schedule, t, T, lr_plateau)
        if config.optimizer.is_demon:
            beta = schedule_eval(ScheduleSpec(Kind.DEMON, config.beta_init, target=Target.MOMENTUM), t, T)
        elif ms is not None:
            beta = schedule_eval(ms, t, T, mom_plateau)
        else:
            beta = 0.0

        if _diverged(loss, theta):
            trace.append(t, loss, beta, eta, theta, buffer(state), math.nan, val)
            trace.diverged = True
            break
        if t == T:
            trace.append(t, loss, beta, eta, theta, buffer(state), float(np.linalg.norm(problem.grad(theta))), val)
            break

        if order is not None and config.batch_size is not None:
            k = t % ipe
            if k == 0:
                order = batch_rng.permutation(problem.n_samples)
            idx = order[k * config.batch_size : (k + 1) * config.batch_size]
            g = problem.batch_grad(theta, idx)
        else:
            g = problem.grad(theta)
        trace.append(t, loss, beta, eta, theta, buffer(state), float(np.linalg.norm(g)), val)
        if not np.all(np.isfinite(g)):
            trace.diverged = True
            break

        h = opt.StepHyper(
            eta=eta,
            beta=beta,
            beta2=config.beta2,
            epsilon=config.epsilon,
            weight_decay=config.weight_decay,
            grad_clip=config.grad_clip,
        )
        kind = config.optimizer
        if kind is Optimizer.SGD:
            state = opt.sgd_step(state, g, h)
        elif kind is Optimizer.SGDM:
            state = opt.sgdm_step(state, g, h)
        elif kind is Optimizer.ADAM:
            state = opt.adam_step(state, g, h)
        elif kind is Optimizer.DEMON_SGDM:
            state = opt.demon_sgdm_step(state, g, eta, config.beta_init, t, T, h)
        else:
            state = opt.demon_adam_step(state, g, eta, config.beta_init, t, T, h)
    trace.meta["final_state"] = state
    return trace


def final_val(trace: Trace) -> float:
    vals = [v for v in trace.val_metric if v is not None]
    return vals[-1] if vals else math.nan


def best_val(trace: Trace) -> float:
    vals = [v for v in trace.val_metric if v is not None and math.isfinite(v)]
    return min(vals) if vals else math.nan


# --- grid sweep ---------------------------------------------------------------------------


@dataclass
class GridCell:
    lr: float
    momentum: float
    seeds: list[int]
    final_train_loss: list[float] = field(default_factory=list)
    final_val: list[float] = field(default_factory=list)
    best_val: list[float] = field(default_factory=list)
    diverged: list[bool] = field(default_factory=list)

    @property
    def diverged_count(self) -> int:
        return int(sum(self.diverged))

    @property
    def is_diverged(self) -> bool:
        """Any diverged seed disqualifies the cell from best-cell and robustness counts."""
        return self.diverged_count > 0

    def _finite_vals(self) -> np.ndarray:
        return np.array([v for v, d in zip(self.final_val, self.diverged) if not d and math.isfinite(v)])

    @property
    def mean_final_val(self) -> float:
        vals = self._finite_vals()
        return float(np.mean(vals)) if vals.size else math.nan

    @property
    def std_final_val(self) -> float:
        vals = self._finite_vals()
        return float(np.std(vals)) if vals.size else math.nan


@dataclass
class GridResult:
    lr_values: list[float]
    momentum_values: list[float]
    cells: list[GridCell]

    def cell(self, lr: float, momentum: float) -> GridCell:
        for c in self.cells:
            if c.lr == lr and c.momentum == momentum:
                return c
        raise KeyError((lr, momentum))


def _run_cell_seed(config: RunConfig) -> tuple[float, float, float, bool]:
    trace = run_training(config)
    return trace.loss[-1], final_val(trace), best_val(trace), trace.diverged


def grid_search(
    base: RunConfig,
    lr_values: Sequence[float],
    momentum_values: Sequence[float] = DEFAULT_MOMENTUM_GRID,
    seeds: Sequence[int] = (0,),
    workers: int = 1,
) -> GridResult:
    """Run every (lr, momentum) cell for every seed; cells are ordered lr-major."""
    if not lr_values or not momentum_values or not seeds:
        raise ValueError("grid axes and seed list must be non-empty")
    cells = [GridCell(float(lr), float(m), list(seeds)) for lr in lr_values for m in momentum_values]
    jobs = [
        replace(base.with_lr(c.lr).with_momentum(c.momentum), seed=int(s)) for c in cells for s in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_cell_seed, jobs, chunksize=1))
    else:
        outcomes = [_run_cell_seed(j) for j in jobs]
    it = iter(outcomes)
    for c in cells:
        for _ in seeds:
            train, fin, best, div = next(it)
            c.final_train_loss.append(train)
            c.final_val.append(fin)
            c.best_val.append(best)
            c.diverged.append(div)
    return GridResult([float(x) for x in lr_values], [float(x) for x in momentum_values], cells)


def best_cell(result: GridResult) -> tuple[float, float]:
    """Lowest mean final validation metric; ties go to smaller lr, then smaller momentum."""
    usable = [c for c in result.cells if not c.is_diverged and math.isfinite(c.mean_final_val)]
    if not usable:
        raise ValueError("every grid cell diverged")
    best = min(usable, key=lambda c: (c.mean_final_val, c.lr, c.momentum))
    return best.lr, best.momentum


def cells_within(result: GridResult, ratio: float = 1.10) -> int:
    """Number of non-diverged cells whose mean final metric is within ``ratio`` of the best cell."""
    lr, m = best_cell(result)
    threshold = ratio * result.cell(lr, m).mean_final_val
    return sum(1 for c in result.cells if not c.is_diverged and c.mean_final_val <= threshold)


# --- effective learning rate ----------------------------------------------------------------


def elr_configs(config: RunConfig, m: float) -> tuple[RunConfig, RunConfig]:
    """Momentum arm with momentum ``m`` and plain-SGD arm with step size scaled by ``1/(1-m)``."""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum m must lie in [0, 1), got {m}")
    if config.optimizer not in (Optimizer.SGDM, Optimizer.DEMON_SGDM):
        raise ConfigError("elr_comparison needs an SGDM or Demon-SGDM config")
    arm_a = config.with_momentum(m)
    if config.optimizer is Optimizer.SGDM:
        arm_a = replace(arm_a, momentum_schedule=ScheduleSpec(Kind.CONSTANT, m, target=Target.MOMENTUM))
    arm_b = replace(
        config,
        optimizer=Optimizer.SGD,
        lr_schedule=config.lr_schedule.scaled(1.0 / (1.0 - m)),
        momentum_schedule=None,
        beta_init=None,
    )
    return arm_a, arm_b


def elr_comparison(config: RunConfig, m: float) -> tuple[Trace, Trace]:
    arm_a, arm_b = elr_configs(config, m)
    return run_training(arm_a), run_training(arm_b)


# --- result files -------------------------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _grid_rows(result: GridResult) -> list[dict[str, Any]]:
    return [
        {
            "lr": c.lr,
            "momentum": c.momentum,
            "mean_final_val": c.mean_final_val,
            "std_final_val": c.std_final_val,
            "diverged_count": c.diverged_count,
            "n_seeds": len(c.seeds),
        }
        for c in result.cells
    ]


def _json_float(v: float | None) -> float | str | None:
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _unjson_float(v: Any) -> float | None:
    if v is None:
        return None
    return float(v)


def render_csv(result: GridResult | Trace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if isinstance(result, Trace):
        writer.writerow(TRACE_COLUMNS)
        for row in result.rows():
            writer.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])
    else:
        writer.writerow(GRID_COLUMNS)
        for row in _grid_rows(result):
            writer.writerow([_fmt(row[c]) for c in GRID_COLUMNS])
    return buf.getvalue()


def render_jsonl(result: GridResult | Trace) -> str:
    lines = []
    if isinstance(result, Trace):
        for row in result.rows():
            rec = {c: (row[c] if c == "t" else _json_float(row[c])) for c in TRACE_COLUMNS}
            lines.append(json.dumps(rec))
    else:
        for c in result.cells:
            rec = {
                "lr": c.lr,
                "momentum": c.momentum,
                "seeds": c.seeds,
                "final_train_loss": [_json_float(x) for x in c.final_train_loss],
                "final_val": [_json_float(x) for x in c.final_val],
                "best_val": [_json_float(x) for x in c.best_val],
                "diverged": c.diverged,
                "mean_final_val": _json_float(c.mean_final_val),
                "std_final_val": _json_float(c.std_final_val),
                "diverged_count": c.diverged_count,
            }
            lines.append(json.dumps(rec))
    return "".join(line + "\n" for line in lines)


def emit_results(result: GridResult | Trace, path: str | os.PathLike, format: str = "csv") -> Path:
    if format not in ("csv", "jsonl"):
        raise ValueError(f"format must be csv or jsonl, got {format!r}")
    text = render_csv(result) if format == "csv" else render_jsonl(result)
    path = Path(path)
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def load_jsonl(path: str | os.PathLike) -> GridResult | Trace:
    """Inverse of ``emit_results(..., format="jsonl")``."""
    records = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if records and "lr" in records[0]:
        cells = [
            GridCell(
                lr=r["lr"],
                momentum=r["momentum"],
                seeds=list(r["seeds"]),
                final_train_loss=[_unjson_float(x) for x in r["final_train_loss"]],
                final_val=[_unjson_float(x) for x in r["final_val"]],
                best_val=[_unjson_float(x) for x in r["best_val"]],
                diverged=list(r["diverged"]),
            )
            for r in records
        ]
        lrs = list(dict.fromkeys(c.lr for c in cells))
        moms = list(dict.fromkeys(c.momentum for c in cells))
        return GridResult(lrs, moms, cells)
    trace = Trace()
    for r in records:
        trace.t.append(int(r["t"]))
        for c in TRACE_COLUMNS[1:]:
            getattr(trace, c).append(_unjson_float(r[c]))
    return trace
