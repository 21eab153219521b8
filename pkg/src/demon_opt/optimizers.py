"""First-order update rules driven by externally scheduled step sizes and momenta.

Each update is a pure transition ``(state, gradient, hyper) -> new state``;
inputs are never modified in place.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Mapping

import numpy as np

from .schedules import demon_beta


class NonFiniteGradient(ValueError):
    def __init__(self, step: int):
        super().__init__(f"non-finite gradient at step {step}")
        self.step = step


@dataclass(frozen=True)
class OptimizerState:
    theta: np.ndarray
    v: np.ndarray
    second_moment: np.ndarray
    m: np.ndarray
    step: int = 0

    def __post_init__(self) -> None:
        n = self.theta.shape
        for name in ("v", "second_moment", "m"):
            if getattr(self, name).shape != n:
                raise ValueError(f"buffer {name} has shape {getattr(self, name).shape}, expected {n}")

    def to_record(self) -> dict[str, Any]:
        return {
            "theta": self.theta.tolist(),
            "v": self.v.tolist(),
            "second_moment": self.second_moment.tolist(),
            "m": self.m.tolist(),
            "step": self.step,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> OptimizerState:
        expected = {"theta", "v", "second_moment", "m", "step"}
        if set(record) != expected:
            raise ValueError(f"state record keys {sorted(record)} != {sorted(expected)}")
        return cls(
            theta=np.asarray(record["theta"], dtype=float),
            v=np.asarray(record["v"], dtype=float),
            second_moment=np.asarray(record["second_moment"], dtype=float),
            m=np.asarray(record["m"], dtype=float),
            step=int(record["step"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def loads(cls, text: str) -> OptimizerState:
        return cls.from_record(json.loads(text))


def init_state(theta: np.ndarray) -> OptimizerState:
    theta = np.array(theta, dtype=float)
    z = np.zeros_like(theta)
    return OptimizerState(theta=theta, v=z.copy(), second_moment=z.copy(), m=z.copy(), step=0)


@dataclass(frozen=True)
class StepHyper:
    eta: float
    beta: float = 0.0
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        for name in ("eta", "beta", "beta2", "epsilon", "weight_decay"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.eta <= 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"beta2 must lie in [0, 1), got {self.beta2}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")


def apply_weight_decay(g: np.ndarray, theta: np.ndarray, lam: float) -> np.ndarray:
    """Coupled L2 penalty: ``g + lam * theta``."""
    if lam < 0:
        raise ValueError(f"weight decay must be >= 0, got {lam}")
    if lam == 0:
        return g
    return g + lam * theta


def _prepare(state: OptimizerState, g: np.ndarray, h: StepHyper) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.shape != state.theta.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {state.theta.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(state.step)
    g = apply_weight_decay(g, state.theta, h.weight_decay)
    if h.grad_clip is not None:
        norm = float(np.linalg.norm(g))
        if norm > h.grad_clip:
            g = g * (h.grad_clip / norm)
    return g


def sgd_step(state: OptimizerState, g: np.ndarray, h: StepHyper) -> OptimizerState:
    """Plain gradient step; ``v`` keeps the applied displacement ``-eta * g``."""
    g = _prepare(state, g, h)
    return replace(state, theta=state.theta - h.eta * g, v=0.0 * state.v - h.eta * g, step=state.step + 1)


def sgdm_step(state: OptimizerState, g: np.ndarray, h: StepHyper) -> OptimizerState:
    """Heavy-ball step in velocity form.

    ``theta' = theta - eta*g + beta*v`` then ``v' = beta*v - eta*g``, so the
    parameter displacement always equals the new velocity.
    """
    g = _prepare(state, g, h)
    theta = state.theta - h.eta * g + h.beta * state.v
    v = h.beta * state.v - h.eta * g
    return replace(state, theta=theta, v=v, step=state.step + 1)


def demon_sgdm_step(
    state: OptimizerState,
    g: np.ndarray,
    eta: float,
    beta_init: float,
    t: int,
    T: int,
    extras: StepHyper | None = None,
) -> OptimizerState:
    if not 0 <= t < T:
        raise ValueError(f"iteration t={t} outside [0, {T})")
    beta_t = demon_beta(t, T, beta_init)
    h = replace(extras, eta=eta, beta=beta_t) if extras else StepHyper(eta=eta, beta=beta_t)
    return sgdm_step(state, g, h)


def demon_adam_step(
    state: OptimizerState,
    g: np.ndarray,
    eta: float,
    beta_init: float,
    t: int,
    T: int,
    h: StepHyper | None = None,
) -> OptimizerState:
    """Adam variant with decaying momentum.

    The momentum buffer accumulates ``m = g + beta_t * m`` with no
    ``(1 - beta)`` scaling and neither buffer is bias corrected; epsilon sits
    inside the square root.
    """
    if not 0 <= t < T:
        raise ValueError(f"iteration t={t} outside [0, {T})")
    beta_t = demon_beta(t, T, beta_init)
    h = replace(h, eta=eta, beta=beta_t) if h else StepHyper(eta=eta, beta=beta_t)
    g = _prepare(state, g, h)
    second = h.beta2 * state.second_moment + (1.0 - h.beta2) * (g * g)
    m = g + beta_t * state.m
    theta = state.theta - h.eta / np.sqrt(second + h.epsilon) * m
    return replace(state, theta=theta, second_moment=second, m=m, step=state.step + 1)


def adam_step(state: OptimizerState, g: np.ndarray, h: StepHyper) -> OptimizerState:
    """Bias-corrected Adam; ``h.beta`` is the first-moment decay and ``v`` its buffer."""
    g = _prepare(state, g, h)
    k = state.step + 1
    first = h.beta * state.v + (1.0 - h.beta) * g
    second = h.beta2 * state.second_moment + (1.0 - h.beta2) * (g * g)
    first_hat = first / (1.0 - h.beta**k)
    second_hat = second / (1.0 - h.beta2**k)
    theta = state.theta - h.eta * first_hat / (np.sqrt(second_hat) + h.epsilon)
    return replace(state, theta=theta, v=first, second_moment=second, step=k)
