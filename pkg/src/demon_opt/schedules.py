"""Learning-rate and momentum schedules.

Every schedule is indexed per optimizer iteration ``t`` in ``[0, T]``. The
functions here are pure; the one stateful family (decay on plateau) is
advanced functionally through :class:`PlateauState`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields, replace
from typing import Any, Mapping, Sequence


class Kind(str, enum.Enum):
    CONSTANT = "constant"
    DEMON = "demon"
    COSINE = "cosine"
    LINEAR = "linear"
    STEP = "step"
    EXPONENTIAL = "exponential"
    ONECYCLE = "onecycle"
    PLATEAU = "plateau"
    DEMON_THEORY = "demon_theory"


class Target(str, enum.Enum):
    LEARNING_RATE = "learning_rate"
    MOMENTUM = "momentum"


def _check_range(t: float, T: int) -> None:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if t < 0 or t > T:
        raise ValueError(f"iteration t={t} outside [0, {T}]")


def _lerp(a: float, b: float, s: float) -> float:
    # Monotone in s with exact endpoints: rounding of a + (b - a) * s can
    # overshoot b by an ulp, so clamp and pin s == 1 to b.
    if s <= 0.0:
        return a
    if s >= 1.0:
        return b
    v = a + (b - a) * s
    lo, hi = (a, b) if a <= b else (b, a)
    return min(max(v, lo), hi)


def demon_beta(t: float, T: int, beta_init: float) -> float:
    """Decaying momentum coefficient for iteration ``t`` of ``T``.

    Decays from ``beta_init`` at ``t = 0`` to exactly 0 at ``t = T`` so that
    ``beta_t / (1 - beta_t)`` shrinks linearly with the fraction of
    iterations remaining.
    """
    if not 0.0 <= beta_init < 1.0:
        raise ValueError(f"beta_init must lie in [0, 1), got {beta_init}")
    _check_range(t, T)
    p_t = (T - t) / T
    return beta_init * (p_t / (1.0 - beta_init + beta_init * p_t))


def cosine_value(t: float, T: int, gamma_max: float, gamma_min: float = 0.0) -> float:
    if gamma_min > gamma_max:
        raise ValueError(f"gamma_min={gamma_min} exceeds gamma_max={gamma_max}")
    _check_range(t, T)
    s = 0.5 * (1.0 - math.cos(math.pi * t / T))
    return _lerp(gamma_max, gamma_min, s)


def linear_value(t: float, T: int, gamma_init: float) -> float:
    _check_range(t, T)
    return gamma_init * ((T - t) / T)


def milestone_iterations(milestones: Sequence[float], T: int) -> list[int]:
    """Convert fractional milestones to iteration indices (round half to even)."""
    _validate_milestones(milestones)
    return [round(m * T) for m in milestones]


def step_value(
    t: float,
    T: int,
    gamma_init: float,
    milestones: Sequence[float] = (0.5, 0.75),
    factor: float = 0.1,
) -> float:
    _check_range(t, T)
    if not 0.0 < factor < 1.0:
        raise ValueError(f"factor must lie in (0, 1), got {factor}")
    passed = sum(1 for it in milestone_iterations(milestones, T) if t >= it)
    return gamma_init * factor**passed


def default_exponential_rate(T: int) -> float:
    """Starting decay rate for the exponential schedule, scaled to ``T``."""
    return -0.05 * (100.0 / T)


def exponential_value(t: float, T: int, gamma_init: float, k: float | None = None) -> float:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if k is None:
        k = default_exponential_rate(T)
    return gamma_init * math.exp(k * t)


def onecycle_value(
    t: float,
    T: int,
    peak: float,
    floor: float,
    target: Target | str = Target.LEARNING_RATE,
) -> float:
    """Triangular one-cycle schedule with a 50/50 phase split.

    The learning-rate variant climbs ``floor -> peak -> floor``; the momentum
    variant is the mirror image, ``peak -> floor -> peak``.
    """
    if floor > peak:
        raise ValueError(f"floor={floor} exceeds peak={peak}")
    _check_range(t, T)
    target = Target(target)
    half = T / 2.0
    if t <= half:
        s = t / half
        start, end = (floor, peak) if target is Target.LEARNING_RATE else (peak, floor)
    else:
        s = (t - half) / half
        start, end = (peak, floor) if target is Target.LEARNING_RATE else (floor, peak)
    return _lerp(start, end, s)


def demon_theory_beta(t: int) -> float:
    """Momentum schedule ``(1/t) * (t+1)/(t+2)`` used by the convex convergence bound."""
    if t < 1:
        raise ValueError(f"theory schedule is defined for t >= 1, got {t}")
    return (t + 1) / (t * (t + 2))


@dataclass(frozen=True)
class PlateauState:
    current_value: float
    best_metric: float = math.inf
    epochs_since_improvement: int = 0


def plateau_update(
    state: PlateauState, val_metric: float, patience: int = 5, factor: float = 0.1
) -> PlateauState:
    """Advance decay-on-plateau by one epoch.

    Improvement is strict (``<``) with no threshold. The value is multiplied
    by ``factor`` once the non-improvement counter exceeds ``patience``.
    """
    if not math.isfinite(val_metric):
        raise ValueError(f"validation metric must be finite, got {val_metric}")
    if val_metric < state.best_metric:
        return replace(state, best_metric=val_metric, epochs_since_improvement=0)
    n = state.epochs_since_improvement + 1
    if n > patience:
        return replace(state, current_value=state.current_value * factor, epochs_since_improvement=0)
    return replace(state, epochs_since_improvement=n)


def _validate_milestones(milestones: Sequence[float]) -> None:
    for m in milestones:
        if not 0.0 < m < 1.0:
            raise ValueError(f"milestone {m} outside (0, 1)")
    for a, b in zip(milestones, milestones[1:]):
        if not a < b:
            raise ValueError(f"milestones must be strictly increasing, got {list(milestones)}")


@dataclass(frozen=True)
class ScheduleSpec:
    """Declarative description of one learning-rate or momentum schedule.

    ``min_value`` of ``None`` means the family default: 0 for most families,
    ``0.1 * init_value`` for the learning-rate one-cycle. ``k`` of ``None``
    means :func:`default_exponential_rate`.
    """

    kind: Kind
    init_value: float
    target: Target = Target.LEARNING_RATE
    min_value: float | None = None
    milestones: tuple[float, ...] = (0.5, 0.75)
    factor: float = 0.1
    k: float | None = None
    patience: int = 5

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "target", Target(self.target))
        object.__setattr__(self, "milestones", tuple(float(m) for m in self.milestones))
        if not (math.isfinite(self.init_value) and self.init_value >= 0):
            raise ValueError(f"init_value must be finite and >= 0, got {self.init_value}")
        if self.min_value is not None:
            if self.min_value < 0:
                raise ValueError(f"min_value must be >= 0, got {self.min_value}")
            if self.min_value > self.init_value:
                raise ValueError(f"min_value={self.min_value} exceeds init_value={self.init_value}")
        if self.kind is Kind.STEP:
            _validate_milestones(self.milestones)
        if self.kind in (Kind.STEP, Kind.PLATEAU) and not 0.0 < self.factor < 1.0:
            raise ValueError(f"factor must lie in (0, 1), got {self.factor}")
        if self.kind is Kind.PLATEAU and self.patience < 1:
            raise ValueError(f"patience must be a positive integer, got {self.patience}")
        if self.kind in (Kind.DEMON, Kind.DEMON_THEORY):
            if self.target is not Target.MOMENTUM:
                raise ValueError(f"{self.kind.value} schedule only applies to momentum")
            if self.kind is Kind.DEMON and self.init_value >= 1.0:
                raise ValueError(f"beta_init must be < 1, got {self.init_value}")
        if self.kind is Kind.ONECYCLE and self.target is Target.MOMENTUM and self.min_value is None:
            raise ValueError("momentum one-cycle needs an explicit min_value (beta_min)")

    @property
    def floor(self) -> float:
        if self.min_value is not None:
            return self.min_value
        if self.kind is Kind.ONECYCLE:
            return 0.1 * self.init_value
        return 0.0

    def scaled(self, c: float) -> ScheduleSpec:
        """Same schedule with every magnitude multiplied by ``c``."""
        return replace(
            self,
            init_value=self.init_value * c,
            min_value=None if self.min_value is None else self.min_value * c,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, enum.Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> ScheduleSpec:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(record) - known)
        if unknown:
            raise ValueError(f"unknown schedule field(s): {', '.join(unknown)}")
        return cls(**record)


def schedule_eval(
    spec: ScheduleSpec, t: float, T: int, plateau_state: PlateauState | None = None
) -> float:
    """Evaluate ``spec`` at iteration ``t`` of ``T``."""
    if (spec.kind is Kind.PLATEAU) != (plateau_state is not None):
        raise ValueError("plateau_state must be supplied exactly when kind is plateau")
    kind = spec.kind
    if kind is Kind.CONSTANT:
        return spec.init_value
    if kind is Kind.DEMON:
        return demon_beta(t, T, spec.init_value)
    if kind is Kind.COSINE:
        return cosine_value(t, T, spec.init_value, spec.floor)
    if kind is Kind.LINEAR:
        return linear_value(t, T, spec.init_value)
    if kind is Kind.STEP:
        return step_value(t, T, spec.init_value, spec.milestones, spec.factor)
    if kind is Kind.EXPONENTIAL:
        return exponential_value(t, T, spec.init_value, spec.k)
    if kind is Kind.ONECYCLE:
        return onecycle_value(t, T, spec.init_value, spec.floor, spec.target)
    if kind is Kind.PLATEAU:
        return plateau_state.current_value
    if kind is Kind.DEMON_THEORY:
        return demon_theory_beta(int(t))
    raise AssertionError(kind)


def plateau_start(spec: ScheduleSpec) -> PlateauState:
    return PlateauState(current_value=spec.init_value)


def constant(value: float, target: Target | str = Target.LEARNING_RATE) -> ScheduleSpec:
    return ScheduleSpec(Kind.CONSTANT, value, target=Target(target))
