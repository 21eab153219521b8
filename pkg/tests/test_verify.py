import math

import numpy as np
import pytest

from demon_opt.problems import make_quadratic, make_scale_invariant
from demon_opt.schedules import demon_beta
from demon_opt.verify import (
    CheckReport,
    Trace,
    check_gradient,
    check_lemma1,
    check_reductions,
    check_theorem1,
    check_unroll_equivalence,
    explicit_sgdm_trajectory,
    finite_difference_gradient,
    run_norm_form_sgdm,
    run_suite,
    theorem1_bound,
)


def _norm_trace(T=60, dim=5, eta=0.1, betas=None):
    p = make_scale_invariant(dim, seed=2)
    betas = [0.9] * T if betas is None else betas
    return run_norm_form_sgdm(p, np.random.default_rng(1).standard_normal(dim), eta, betas)


def test_trace_rejects_non_increasing_t():
    tr = Trace()
    tr.append(0, 1.0, 0.9, 0.1, np.ones(2), np.zeros(2), 1.0)
    with pytest.raises(ValueError):
        tr.append(0, 1.0, 0.9, 0.1, np.ones(2), np.zeros(2), 1.0)
    assert tr.rows()[0]["theta_norm_sq"] == 2.0


def test_norm_growth_identity_for_constant_and_decaying_momentum():
    T = 80
    for betas in ([0.9] * T, [demon_beta(t, T, 0.9) for t in range(T)]):
        r = check_lemma1(_norm_trace(T=T, betas=betas), 0.1)
        assert r.passed and r.max_rel_error < 1e-12


def test_norm_never_shrinks_under_scale_invariance():
    tr = _norm_trace()
    assert all(b >= a * (1 - 1e-15) for a, b in zip(tr.theta_norm_sq, tr.theta_norm_sq[1:]))


def test_norm_growth_check_detects_injected_fault():
    r = check_lemma1(_norm_trace(), 0.1, fault=1e-3)
    assert not r.passed and "explicit" in r.witness


def test_norm_growth_check_refuses_non_scale_invariant_trace():
    p = make_quadratic(1.0, 0.5, 3)
    tr = run_norm_form_sgdm(p, np.ones(3), 0.1, [0.9] * 5)
    with pytest.raises(ValueError, match="scale-invariant"):
        check_lemma1(tr, 0.1)


def test_cesaro_bound_formula():
    assert theorem1_bound(2.0, 0.1, 4.0, 10) == pytest.approx(4.0 / 10 * (1.5 + 5.0))


@pytest.mark.parametrize("L,c", [(1.0, 0.1), (2.0, 0.6), (0.5, 0.3)])
def test_cesaro_bound_holds(L, c):
    r = check_theorem1(L, c / L, 300, np.array([2.0, -1.0, 0.5]))
    assert r.passed and r.max_rel_error <= 1.0


def test_cesaro_check_rejects_step_outside_interval():
    with pytest.raises(ValueError):
        check_theorem1(1.0, 2.0 / 3.0, 10, 1.0)
    with pytest.raises(ValueError):
        check_theorem1(1.0, 0.0, 10, 1.0)


def test_cesaro_check_reports_violation():
    # a problem whose optimum value is misreported makes the gap look large
    p = make_quadratic(1.0, 0.1, 2)
    fake = p.__class__(**{**p.__dict__, "optimum_value": -10.0})
    r = check_theorem1(1.0, 0.3, 50, np.ones(2), problem=fake)
    assert not r.passed and r.max_abs_error > 0


def test_explicit_trajectory_small_case():
    grads = np.array([[1.0], [1.0]])
    traj = explicit_sgdm_trajectory(grads, 0.1, [0.9, 0.9], np.zeros(1))
    np.testing.assert_allclose(traj[:, 0], [0.0, -0.1, -0.29])


def test_unroll_equivalence_and_detection():
    grads = np.random.default_rng(0).standard_normal((40, 3))
    betas = [demon_beta(t, 40, 0.9) for t in range(40)]
    assert check_unroll_equivalence(grads, 0.1, betas).passed
    wrong = list(betas)
    wrong[10] += 0.01
    explicit_wrong = explicit_sgdm_trajectory(grads, 0.1, wrong, np.zeros(3))
    explicit_right = explicit_sgdm_trajectory(grads, 0.1, betas, np.zeros(3))
    assert np.max(np.abs(explicit_wrong - explicit_right)) > 1e-6


def test_finite_differences_on_quadratic():
    p = make_quadratic(2.0, 0.5, 4)
    x = np.array([1.0, -3.0, 0.2, 100.0])
    fd, skipped = finite_difference_gradient(p, x)
    assert skipped == []
    np.testing.assert_allclose(fd, p.grad(x), rtol=p.fd_tolerance)


def test_check_gradient_flags_wrong_gradient():
    p = make_quadratic(2.0, 0.5, 3)
    broken = p.__class__(**{**p.__dict__, "grad": lambda x: 1.1 * p.grad(x)})
    assert not check_gradient(broken, [np.ones(3)]).passed


def test_reductions_are_exact():
    reports = check_reductions()
    assert len(reports) == 3
    for r in reports:
        assert r.passed and r.max_abs_error <= 1e-14


def test_report_json_round_trip():
    r = CheckReport("x", True, 1e-3, math.inf, "w", 1e-8)
    assert CheckReport.from_json(r.to_json()) == r


def test_run_suite_unknown_name():
    with pytest.raises(ValueError):
        run_suite("nope")


def test_run_suite_all_passes():
    reports = run_suite("all")
    assert reports and all(r.passed for r in reports), [r for r in reports if not r.passed]
