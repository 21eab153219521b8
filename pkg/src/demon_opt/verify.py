"""Executable checks of the momentum identities, bounds and reductions.

Each check returns a :class:`CheckReport`; :func:`run_suite` bundles the
standard configurations used by the CLI and the acceptance tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence

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
)
from .schedules import Kind, ScheduleSpec, Target, demon_beta, demon_theory_beta, schedule_eval

TRACE_COLUMNS = ("t", "loss", "val_metric", "beta_t", "eta_t", "theta_norm_sq", "v_norm_sq", "grad_norm")


@dataclass
class Trace:
    """Per-iteration record stream; row ``t`` describes the iterate ``theta_t``.

    ``beta_t`` and ``eta_t`` are the schedule values in force at iteration
    ``t`` (the ones that produce ``theta_{t+1}``). ``val_metric`` is ``None``
    off epoch boundaries.
    """

    t: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_metric: list[float | None] = field(default_factory=list)
    beta_t: list[float] = field(default_factory=list)
    eta_t: list[float] = field(default_factory=list)
    theta_norm_sq: list[float] = field(default_factory=list)
    v_norm_sq: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    thetas: list[np.ndarray] | None = None
    vs: list[np.ndarray] | None = None
    diverged: bool = False
    meta: dict[str, Any] = field(default_factory=dict)

    def append(
        self,
        t: int,
        loss: float,
        beta: float,
        eta: float,
        theta: np.ndarray,
        v: np.ndarray,
        grad_norm: float,
        val_metric: float | None = None,
    ) -> None:
        if self.t and t <= self.t[-1]:
            raise ValueError(f"trace iterations must increase, got {t} after {self.t[-1]}")
        self.t.append(t)
        self.loss.append(float(loss))
        self.val_metric.append(None if val_metric is None else float(val_metric))
        self.beta_t.append(float(beta))
        self.eta_t.append(float(eta))
        self.theta_norm_sq.append(float(theta @ theta))
        self.v_norm_sq.append(float(v @ v))
        self.grad_norm.append(float(grad_norm))
        if self.thetas is not None:
            self.thetas.append(np.array(theta, dtype=float))
        if self.vs is not None:
            self.vs.append(np.array(v, dtype=float))

    def __len__(self) -> int:
        return len(self.t)

    def rows(self) -> list[dict[str, Any]]:
        return [{c: getattr(self, c)[i] for c in TRACE_COLUMNS} for i in range(len(self))]


@dataclass
class CheckReport:
    """Outcome of one check.

    For identity checks the errors measure disagreement between the two
    sides. For bound checks ``max_abs_error`` is the largest
    ``lhs - bound`` (negative when never violated) and ``max_rel_error`` is
    the largest ``lhs / bound``.
    """

    check_name: str
    passed: bool
    max_abs_error: float
    max_rel_error: float
    witness: str
    tolerance: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> CheckReport:
        return cls(**json.loads(line))


def _rel(a: np.ndarray | float, b: np.ndarray | float) -> tuple[float, float]:
    err = float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
    scale = float(np.linalg.norm(np.asarray(b)))
    return err, (err / scale if scale > 0 else err)


def schedule_betas(spec: ScheduleSpec, T: int) -> list[float]:
    """Momentum values ``beta_0 .. beta_{T-1}`` of a non-plateau schedule."""
    return [schedule_eval(spec, t, T) for t in range(T)]


# --- norm growth under scale invariance ------------------------------------


def run_norm_form_sgdm(
    problem: Problem,
    theta0: np.ndarray,
    eta: float,
    betas: Sequence[float],
) -> Trace:
    """SGDM in the form ``theta_{t+1} = theta_t + eta v_t``, ``v_{t+1} = beta_t v_t - g_{t+1}``.

    ``v_0 = 0`` and ``g_t`` is the full gradient at ``theta_t``. Keeps every
    ``theta_t`` and ``v_t``.
    """
    theta = np.array(theta0, dtype=float)
    v = np.zeros_like(theta)
    trace = Trace(thetas=[], vs=[])
    trace.meta.update(scale_invariant=problem.scale_invariant, eta=eta, problem=problem.name)
    T = len(betas)
    for t in range(T + 1):
        g = problem.grad(theta)
        beta = betas[t] if t < T else 0.0
        trace.append(t, problem.eval(theta), beta, eta, theta, v, float(np.linalg.norm(g)))
        if t == T:
            break
        theta = theta + eta * v
        v = betas[t] * v - problem.grad(theta)
    return trace


def check_lemma1(trace: Trace, eta: float, fault: float = 0.0, tol: float = 1e-8) -> CheckReport:
    """Norm-growth identity for momentum SGD on a scale-invariant objective.

    ``|theta_{t+1}|^2 = |theta_t|^2 + eta^2 |v_t|^2
    + 2 eta^2 sum_{i<t} beta_i ... beta_{t-1} |v_i|^2``, checked both with the
    explicit product sum and with the running inner product
    ``a_t = <theta_t, v_t> = beta_{t-1} (a_{t-1} + eta |v_{t-1}|^2)``.
    ``fault`` is added to the explicit sum (test hook).
    """
    if not trace.meta.get("scale_invariant"):
        raise ValueError("check_lemma1 needs a trace from a scale-invariant problem")
    if trace.vs is None or trace.thetas is None:
        raise ValueError("check_lemma1 needs full theta and v history")
    betas = np.asarray(trace.beta_t)
    vsq = np.asarray(trace.v_norm_sq)
    thsq = np.asarray(trace.theta_norm_sq)
    n = len(trace) - 1
    worst = (0.0, 0.0, "no steps")
    worst_abs = 0.0
    running = 0.0
    for t in range(n):
        explicit = 0.0
        if t > 0:
            running = betas[t - 1] * (running + eta * vsq[t - 1])
            prods = np.cumprod(betas[:t][::-1])[::-1]
            explicit = float(np.sum(prods * vsq[:t]))
        explicit += fault
        lhs = float(thsq[t + 1])
        base = float(thsq[t] + eta**2 * vsq[t])
        for form, rhs in (("explicit", base + 2 * eta**2 * explicit), ("running", base + 2 * eta * running)):
            err = abs(lhs - rhs)
            rel = err / lhs if lhs > 0 else err
            worst_abs = max(worst_abs, err)
            if rel > worst[0]:
                worst = (rel, err, f"{form} form at t={t}: lhs={lhs!r} rhs={rhs!r}")
    return CheckReport(
        check_name="lemma1",
        passed=bool(worst[0] <= tol),
        max_abs_error=worst_abs,
        max_rel_error=worst[0],
        witness=worst[2],
        tolerance=tol,
    )


# --- convex convergence bound -----------------------------------------------


def theorem1_bound(L: float, alpha: float, dist_sq: float, T: int) -> float:
    return dist_sq / T * (0.75 * L + 1.0 / (2.0 * alpha))


def run_theorem1_iteration(problem: Problem, alpha: float, theta1: np.ndarray, T: int) -> np.ndarray:
    """Heavy-ball iterates ``theta_1 .. theta_T`` with ``theta_0 = theta_1``.

    ``theta_{t+1} = theta_t - alpha grad f(theta_t) + beta_t (theta_t - theta_{t-1})``
    with ``beta_t = (t+1) / (t (t+2))``.
    """
    out = np.empty((T, problem.dim))
    prev = cur = np.array(theta1, dtype=float)
    for t in range(1, T + 1):
        out[t - 1] = cur
        if t == T:
            break
        nxt = cur - alpha * problem.grad(cur) + demon_theory_beta(t) * (cur - prev)
        prev, cur = cur, nxt
    return out


def check_theorem1(
    L: float,
    alpha: float,
    T: int,
    theta1: np.ndarray | float,
    problem: Problem | None = None,
) -> CheckReport:
    """Cesaro-average suboptimality against the bound at every prefix ``1..T``.

    Without ``problem`` a quadratic with curvatures spread over ``[L/10, L]``
    (or just ``L`` in 1-D) is used.
    """
    if not 0.0 < alpha < 2.0 / (3.0 * L):
        raise ValueError(f"alpha={alpha} outside the admissible interval (0, {2.0 / (3.0 * L)!r})")
    theta1 = np.atleast_1d(np.asarray(theta1, dtype=float))
    if problem is None:
        problem = make_quadratic(L, L / 10.0, theta1.size)
    if problem.optimum_point is None or problem.optimum_value is None:
        raise ValueError("check_theorem1 needs a problem with a known optimum")
    iterates = run_theorem1_iteration(problem, alpha, theta1, T)
    averages = np.cumsum(iterates, axis=0) / np.arange(1, T + 1)[:, None]
    dist_sq = float(np.sum((theta1 - problem.optimum_point) ** 2))
    worst_gap, worst_ratio, witness = -math.inf, 0.0, "no violation"
    violated = False
    for k in range(T):
        lhs = problem.eval(averages[k]) - problem.optimum_value
        bound = theorem1_bound(L, alpha, dist_sq, k + 1)
        ratio = lhs / bound if bound > 0 else (0.0 if lhs <= 0 else math.inf)
        worst_gap = max(worst_gap, lhs - bound)
        violated |= lhs > bound
        if ratio > worst_ratio:
            worst_ratio = ratio
            witness = f"T'={k + 1}: f(avg)-f*={lhs!r} bound={bound!r}"
    return CheckReport(
        check_name=f"theorem1(L={L!r}, alpha={alpha!r}, dim={theta1.size})",
        passed=not violated,
        max_abs_error=worst_gap,
        max_rel_error=worst_ratio,
        witness=witness,
        tolerance=0.0,
    )


# --- unrolled momentum ---------------------------------------------------------


def explicit_sgdm_trajectory(
    grads: np.ndarray, eta: float, betas: Sequence[float], theta0: np.ndarray
) -> np.ndarray:
    """``theta_{t+1} = theta_t - eta g_t - eta sum_{i=1}^{t} (beta_{t-i+1} ... beta_t) g_{t-i}``."""
    grads = np.asarray(grads, dtype=float)
    betas = np.asarray(betas, dtype=float)
    T = grads.shape[0]
    out = np.empty((T + 1, grads.shape[1]))
    out[0] = theta0
    for t in range(T):
        step = grads[t].copy()
        for i in range(1, t + 1):
            step += np.prod(betas[t - i + 1 : t + 1]) * grads[t - i]
        out[t + 1] = out[t] - eta * step
    return out


def check_unroll_equivalence(
    gradient_sequence: np.ndarray,
    eta: float,
    beta_schedule: Sequence[float],
    theta0: np.ndarray | None = None,
    tol: float = 1e-10,
    name: str = "unroll",
) -> CheckReport:
    """Recursive velocity-form SGDM against the explicit sum, gradients fed open loop."""
    grads = np.asarray(gradient_sequence, dtype=float)
    T, dim = grads.shape
    theta0 = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float)
    explicit = explicit_sgdm_trajectory(grads, eta, beta_schedule, theta0)
    state = opt.init_state(theta0)
    worst_rel, worst_abs, witness = 0.0, 0.0, "all steps agree"
    for t in range(T):
        state = opt.sgdm_step(state, grads[t], opt.StepHyper(eta=eta, beta=float(beta_schedule[t])))
        err, rel = _rel(state.theta, explicit[t + 1])
        worst_abs = max(worst_abs, err)
        if rel > worst_rel:
            worst_rel, witness = rel, f"step {t + 1}: |diff|={err!r}"
    return CheckReport(name, bool(worst_rel <= tol), worst_abs, worst_rel, witness, tol)


# --- finite differences --------------------------------------------------------


def finite_difference_gradient(
    problem: Problem, x: np.ndarray, h: float = 1e-5
) -> tuple[np.ndarray, list[int]]:
    """Central differences with step ``h * max(1, |x_i|)``; also returns skipped coordinates.

    A coordinate is skipped when the perturbation crosses a kink, detected
    by a change of ``problem.kink_signature``.
    """
    x = np.asarray(x, dtype=float)
    fd = np.zeros_like(x)
    skipped = []
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        if problem.kink_signature is not None and (
            problem.kink_signature(x + e) != problem.kink_signature(x - e)
        ):
            skipped.append(i)
            continue
        fd[i] = (problem.eval(x + e) - problem.eval(x - e)) / (2.0 * step)
    return fd, skipped


def check_gradient(
    problem: Problem, points: Sequence[np.ndarray], h: float = 1e-5, tol: float | None = None
) -> CheckReport:
    tol = problem.fd_tolerance if tol is None else tol
    worst_rel, worst_abs, witness = 0.0, 0.0, "all points agree"
    notes = []
    for k, x in enumerate(points):
        try:
            analytic = problem.grad(x)
            fd, skipped = finite_difference_gradient(problem, x, h)
        except ValueError as exc:
            notes.append(f"point {k} skipped: {exc}")
            continue
        if skipped:
            analytic = analytic.copy()
            analytic[skipped] = 0.0
            notes.append(f"point {k}: {len(skipped)} kink coordinate(s) skipped")
        err = float(np.linalg.norm(analytic - fd))
        scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(fd)))
        rel = err / scale if scale > 0 else err
        worst_abs = max(worst_abs, err)
        if rel > worst_rel:
            worst_rel, witness = rel, f"point {k}: |analytic - fd|={err!r}"
    if notes:
        witness += "; " + "; ".join(notes)
    return CheckReport(f"gradient[{problem.name}]", bool(worst_rel <= tol), worst_abs, worst_rel, witness, tol)


# --- reductions ----------------------------------------------------------------


def _max_diff(a: list[np.ndarray], b: list[np.ndarray]) -> tuple[float, int]:
    diffs = [float(np.max(np.abs(x - y))) for x, y in zip(a, b)]
    k = int(np.argmax(diffs))
    return diffs[k], k


def check_reductions(steps: int = 100, tol: float = 1e-14) -> list[CheckReport]:
    """Special cases of the decaying-momentum optimizers against their simpler parents."""
    problem = make_quadratic(1.0, 0.1, 5)
    theta0 = np.random.default_rng(7).standard_normal(5)
    eta = 0.1
    reports = []

    def trajectory(step: Callable[[opt.OptimizerState, int], opt.OptimizerState]) -> list[np.ndarray]:
        state = opt.init_state(theta0)
        out = [state.theta]
        for t in range(steps):
            state = step(state, t)
            out.append(state.theta)
        return out

    demon = trajectory(lambda s, t: opt.demon_sgdm_step(s, problem.grad(s.theta), eta, 0.0, t, steps))
    sgd = trajectory(lambda s, t: opt.sgd_step(s, problem.grad(s.theta), opt.StepHyper(eta=eta)))
    err, k = _max_diff(demon, sgd)
    reports.append(CheckReport("reduction[demon_sgdm(0)=sgd]", err <= tol, err, err, f"step {k}", tol))

    const = ScheduleSpec(Kind.CONSTANT, 0.9, target=Target.MOMENTUM)
    scheduled = trajectory(
        lambda s, t: opt.sgdm_step(
            s, problem.grad(s.theta), opt.StepHyper(eta=eta, beta=schedule_eval(const, t, steps))
        )
    )
    plain = trajectory(lambda s, t: opt.sgdm_step(s, problem.grad(s.theta), opt.StepHyper(eta=eta, beta=0.9)))
    err, k = _max_diff(scheduled, plain)
    reports.append(CheckReport("reduction[constant schedule=sgdm]", err <= tol, err, err, f"step {k}", tol))

    beta2, eps, eta_a = 0.999, 1e-8, 0.01
    demon_adam = trajectory(
        lambda s, t: opt.demon_adam_step(
            s, problem.grad(s.theta), eta_a, 0.0, t, steps, opt.StepHyper(eta=eta_a, beta2=beta2, epsilon=eps)
        )
    )
    # second-moment-only reference, written out independently
    theta = theta0.copy()
    second = np.zeros_like(theta)
    reference = [theta]
    for _ in range(steps):
        g = problem.grad(theta)
        second = beta2 * second + (1.0 - beta2) * (g * g)
        theta = theta - eta_a / np.sqrt(second + eps) * g
        reference.append(theta)
    err, k = _max_diff(demon_adam, reference)
    reports.append(CheckReport("reduction[demon_adam(0)=rmsprop]", err <= tol, err, err, f"step {k}", tol))
    return reports


# --- suites ----------------------------------------------------------------------

SUITES = ("lemma1", "theorem1", "unroll", "gradients", "reductions")


def lemma1_reports(T: int = 200, dim: int = 8, eta: float = 0.1, fault: float = 0.0) -> list[CheckReport]:
    problem = make_scale_invariant(dim, seed=0)
    theta0 = np.random.default_rng(0).standard_normal(dim)
    out = []
    for label, betas in (
        ("constant 0.9", [0.9] * T),
        ("demon 0.9", [demon_beta(t, T, 0.9) for t in range(T)]),
    ):
        report = check_lemma1(run_norm_form_sgdm(problem, theta0, eta, betas), eta, fault=fault)
        report.check_name = f"lemma1[{label}]"
        out.append(report)
    return out


def theorem1_reports(T: int = 1000, seed: int = 0) -> list[CheckReport]:
    rng = np.random.default_rng(seed)
    out = []
    for dim in (1, 8):
        worst: CheckReport | None = None
        ok = True
        count = 0
        for L in (0.5, 1.0, 4.0):
            for c in (0.1, 0.3, 0.6):
                for _ in range(3):
                    theta1 = rng.standard_normal(dim)
                    r = check_theorem1(L, c / L, T, theta1)
                    count += 1
                    ok &= r.passed
                    if worst is None or r.max_rel_error > worst.max_rel_error:
                        worst = r
        out.append(
            CheckReport(
                f"theorem1[dim={dim}, {count} configs]",
                ok,
                worst.max_abs_error,
                worst.max_rel_error,
                f"worst {worst.check_name} {worst.witness}",
                0.0,
            )
        )
    return out


def unroll_reports(T: int = 100, dim: int = 5, eta: float = 0.1, seed: int = 0) -> list[CheckReport]:
    grads = np.random.default_rng(seed).standard_normal((T, dim))
    theta0 = np.random.default_rng(seed + 1).standard_normal(dim)
    specs = {
        "constant": ScheduleSpec(Kind.CONSTANT, 0.9, target=Target.MOMENTUM),
        "demon": ScheduleSpec(Kind.DEMON, 0.9, target=Target.MOMENTUM),
        "cosine": ScheduleSpec(Kind.COSINE, 0.9, target=Target.MOMENTUM),
        "linear": ScheduleSpec(Kind.LINEAR, 0.9, target=Target.MOMENTUM),
    }
    return [
        check_unroll_equivalence(grads, eta, schedule_betas(spec, T), theta0, name=f"unroll[{label}]")
        for label, spec in specs.items()
    ]


def gradient_problems() -> list[Problem]:
    moons = make_synthetic_data("two_moons", 60, 2, 0.1, 0)
    blobs = make_synthetic_data("multiclass_blobs", 60, 3, 0.5, 1)
    return [
        make_quadratic(1.0, 0.1, 6),
        make_rosenbrock(4),
        make_logistic(moons, l2=0.01),
        make_mlp([2, 8, 8, 2], "tanh", moons),
        make_mlp([3, 8, 3], "relu", blobs),
        make_scale_invariant(8),
    ]


def gradient_reports(n_points: int = 10, seed: int = 0) -> list[CheckReport]:
    out = []
    for problem in gradient_problems():
        rng = np.random.default_rng(seed)
        points = [problem.init(rng) for _ in range(n_points)]
        out.append(check_gradient(problem, points))
    return out


def run_suite(suite: str = "all", fault: float = 0.0) -> list[CheckReport]:
    if suite != "all" and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected 'all' or one of {SUITES}")
    runners = {
        "lemma1": lambda: lemma1_reports(fault=fault),
        "theorem1": theorem1_reports,
        "unroll": unroll_reports,
        "gradients": gradient_reports,
        "reductions": check_reductions,
    }
    names = SUITES if suite == "all" else (suite,)
    return [r for name in names for r in runners[name]()]
