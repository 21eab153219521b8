import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demon_opt.schedules import (
    Kind,
    PlateauState,
    ScheduleSpec,
    Target,
    cosine_value,
    demon_beta,
    demon_theory_beta,
    exponential_value,
    linear_value,
    onecycle_value,
    plateau_update,
    schedule_eval,
    step_value,
)

beta_inits = st.floats(min_value=0.0, max_value=0.999, allow_nan=False)
horizons = st.integers(min_value=1, max_value=5000)


# --- demon ---------------------------------------------------------------------


def test_demon_endpoints_and_midpoint():
    assert demon_beta(0, 100, 0.9) == 0.9
    assert demon_beta(100, 100, 0.9) == 0.0
    assert demon_beta(50, 100, 0.9) == pytest.approx(0.45 / 0.55, rel=1e-15)


@pytest.mark.parametrize("t", [0, 1, 37, 100])
def test_demon_zero_init_is_sgd(t):
    assert demon_beta(t, 100, 0.0) == 0.0


@pytest.mark.parametrize("args", [(0, 10, 1.0), (0, 10, 1.5), (11, 10, 0.9), (-1, 10, 0.9)])
def test_demon_domain_errors(args):
    with pytest.raises(ValueError):
        demon_beta(*args)


@settings(max_examples=200, deadline=None)
@given(beta_inits, horizons)
def test_demon_monotone_with_exact_endpoints(b, T):
    vals = [demon_beta(t, T, b) for t in range(T + 1)]
    assert vals[0] == b and vals[-1] == 0.0
    assert all(x >= y for x, y in zip(vals, vals[1:]))
    assert all(0.0 <= v <= b for v in vals)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.01, max_value=0.999), horizons, st.data())
def test_demon_balance_identity(b, T, data):
    t = data.draw(st.integers(min_value=0, max_value=T - 1))
    beta = demon_beta(t, T, b)
    lhs = beta / (1 - beta)
    rhs = (1 - t / T) * b / (1 - b)
    assert lhs == pytest.approx(rhs, rel=1e-12)


# --- other families --------------------------------------------------------------


def test_cosine_examples():
    assert cosine_value(0, 10, 0.1, 0.0) == 0.1
    assert cosine_value(10, 10, 0.1, 0.0) == 0.0
    assert cosine_value(5, 10, 0.1, 0.0) == pytest.approx(0.05, rel=1e-15)
    with pytest.raises(ValueError):
        cosine_value(0, 10, 0.1, 0.2)


def test_linear_examples():
    assert linear_value(0, 100, 0.3) == 0.3
    assert linear_value(100, 100, 0.3) == 0.0
    assert linear_value(25, 100, 0.3) == pytest.approx(0.225, rel=1e-15)


def test_step_examples():
    assert step_value(0, 100, 0.1, [0.5, 0.75], 0.1) == 0.1
    assert step_value(50, 100, 0.1, [0.5, 0.75], 0.1) == pytest.approx(0.01, rel=1e-15)
    assert step_value(80, 100, 0.1, [0.5, 0.75], 0.1) == pytest.approx(0.001, rel=1e-15)
    assert step_value(49, 100, 0.1, [0.5, 0.75], 0.1) == 0.1
    with pytest.raises(ValueError):
        step_value(0, 100, 0.1, [0.75, 0.5], 0.1)


def test_step_milestones_round_half_even():
    # 0.5 * 5 = 2.5 rounds to 2
    assert step_value(2, 5, 1.0, [0.5], 0.1) == pytest.approx(0.1)
    assert step_value(1, 5, 1.0, [0.5], 0.1) == 1.0


def test_step_drop_count():
    T = 200
    vals = [step_value(t, T, 1.0, [0.1, 0.25, 0.5, 0.75], 0.1) for t in range(T + 1)]
    drops = sum(1 for a, b in zip(vals, vals[1:]) if b < a)
    assert drops == 4


def test_exponential_examples():
    assert exponential_value(0, 57, 0.1) == 0.1
    assert exponential_value(100, 100, 1.0, -0.05) == pytest.approx(6.7379469990854670966e-3, rel=1e-14)
    assert exponential_value(20, 100, 1.0, -0.05) == pytest.approx(0.3678794411714423216, rel=1e-14)
    # default rate scales with T
    assert exponential_value(200, 200, 1.0) == pytest.approx(math.exp(-5.0), rel=1e-14)


def test_onecycle_examples():
    assert onecycle_value(50, 100, 0.3, 0.03) == 0.3
    assert onecycle_value(0, 100, 0.95, 0.85, Target.MOMENTUM) == 0.95
    assert onecycle_value(50, 100, 0.95, 0.85, Target.MOMENTUM) == 0.85
    assert onecycle_value(100, 100, 0.95, 0.85, Target.MOMENTUM) == 0.95
    assert onecycle_value(25, 100, 1.0, 0.1) == pytest.approx(0.55, rel=1e-15)
    with pytest.raises(ValueError):
        onecycle_value(0, 100, 0.1, 0.2)


def test_onecycle_mirror():
    T = 100
    lr = [onecycle_value(t, T, 1.0, 0.1) for t in range(T + 1)]
    mom = [onecycle_value(t, T, 0.95, 0.85, Target.MOMENTUM) for t in range(T + 1)]
    for t in range(T):
        assert (lr[t + 1] > lr[t]) == (mom[t + 1] < mom[t])
        assert (lr[t + 1] < lr[t]) == (mom[t + 1] > mom[t])


def test_demon_theory_examples():
    assert demon_theory_beta(1) == pytest.approx(2 / 3, rel=1e-15)
    assert demon_theory_beta(2) == pytest.approx(3 / 8, rel=1e-15)
    assert demon_theory_beta(10**6) < 1e-5
    with pytest.raises(ValueError):
        demon_theory_beta(0)


@pytest.mark.parametrize("t", [1, 2, 3, 10, 999, 12345])
def test_demon_theory_product_identity(t):
    assert demon_theory_beta(t) * t * (t + 2) == pytest.approx(t + 1, rel=1e-12)


# --- plateau ---------------------------------------------------------------------------


def test_plateau_improvement_resets():
    s = plateau_update(PlateauState(0.1, 1.0, 0), 0.9, patience=5, factor=0.1)
    assert s == PlateauState(0.1, 0.9, 0)


def test_plateau_decay_after_patience():
    s = plateau_update(PlateauState(0.1, 0.9, 5), 0.95, patience=5, factor=0.1)
    assert s.current_value == pytest.approx(0.01)
    assert s.best_metric == 0.9 and s.epochs_since_improvement == 0


def test_plateau_waits_within_patience():
    s = PlateauState(0.1, 0.5, 0)
    for _ in range(3):
        s = plateau_update(s, 0.6, patience=5, factor=0.1)
    assert s.current_value == 0.1 and s.epochs_since_improvement == 3


def test_plateau_equal_metric_is_not_improvement():
    s = plateau_update(PlateauState(0.1, 0.5, 0), 0.5, patience=5)
    assert s.epochs_since_improvement == 1


def test_plateau_rejects_nonfinite():
    with pytest.raises(ValueError):
        plateau_update(PlateauState(0.1), math.nan)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(min_value=0, max_value=10), min_size=1, max_size=60), st.integers(1, 6))
def test_plateau_value_moves_by_exact_factor(metrics, patience):
    s = PlateauState(0.1)
    for m in metrics:
        prev = s.current_value
        s = plateau_update(s, m, patience=patience, factor=0.1)
        assert s.current_value in (prev, prev * 0.1)


# --- spec and dispatcher ------------------------------------------------------------------


def test_dispatch_examples():
    assert schedule_eval(ScheduleSpec(Kind.CONSTANT, 0.9, target=Target.MOMENTUM), 17, 100) == 0.9
    assert schedule_eval(ScheduleSpec(Kind.DEMON, 0.95, target=Target.MOMENTUM), 0, 100) == 0.95
    assert schedule_eval(ScheduleSpec(Kind.LINEAR, 0.1), 100, 100) == 0.0
    assert schedule_eval(ScheduleSpec(Kind.ONECYCLE, 1.0), 0, 100) == pytest.approx(0.1)
    assert schedule_eval(ScheduleSpec(Kind.DEMON_THEORY, 0.0, target=Target.MOMENTUM), 1, 100) == pytest.approx(2 / 3)


def test_dispatch_plateau_needs_state():
    spec = ScheduleSpec(Kind.PLATEAU, 0.1)
    with pytest.raises(ValueError):
        schedule_eval(spec, 0, 10)
    assert schedule_eval(spec, 0, 10, PlateauState(0.01)) == 0.01
    with pytest.raises(ValueError):
        schedule_eval(ScheduleSpec(Kind.LINEAR, 0.1), 0, 10, PlateauState(0.01))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="demon", init_value=0.9),  # learning-rate target
        dict(kind="demon", init_value=1.0, target="momentum"),
        dict(kind="cosine", init_value=0.1, min_value=0.2),
        dict(kind="step", init_value=0.1, milestones=(0.5, 0.5)),
        dict(kind="step", init_value=0.1, milestones=(0.5, 1.0)),
        dict(kind="plateau", init_value=0.1, patience=0),
        dict(kind="onecycle", init_value=0.95, target="momentum"),
        dict(kind="nope", init_value=0.1),
    ],
)
def test_spec_invariants(kwargs):
    with pytest.raises(ValueError):
        ScheduleSpec(**kwargs)


def test_spec_round_trip_and_unknown_fields():
    spec = ScheduleSpec(Kind.STEP, 0.3, milestones=(0.25, 0.5, 0.75), factor=0.2)
    record = spec.to_dict()
    assert record["kind"] == "step" and record["milestones"] == [0.25, 0.5, 0.75]
    assert ScheduleSpec.from_dict(record) == spec
    with pytest.raises(ValueError, match="gamma"):
        ScheduleSpec.from_dict({**record, "gamma": 1})


def test_cosine_and_linear_share_endpoints():
    for T in (1, 7, 100):
        assert cosine_value(0, T, 0.4) == linear_value(0, T, 0.4)
        assert cosine_value(T, T, 0.4) == linear_value(T, T, 0.4)


def test_cosine_momentum_decays_to_zero_by_default():
    spec = ScheduleSpec(Kind.COSINE, 0.9, target=Target.MOMENTUM)
    assert schedule_eval(spec, 0, 50) == 0.9
    assert schedule_eval(spec, 50, 50) == 0.0


def test_schedules_are_pure():
    spec = ScheduleSpec(Kind.EXPONENTIAL, 0.1)
    a = np.array([schedule_eval(spec, t, 100) for t in range(101)])
    b = np.array([schedule_eval(spec, t, 100) for t in range(101)])
    assert np.array_equal(a, b)
