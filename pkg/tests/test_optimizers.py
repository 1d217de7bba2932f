import numpy as np
import pytest

from underdamp.optimizers import (
    Method,
    MomentumParameter,
    RunConfig,
    momentum_weight,
    run,
)
from underdamp.problems import (
    ConfigError,
    DivergenceError,
    load_problem,
    make_quadratic,
    random_lasso,
    smooth_composite,
)


def test_momentum_parameter_validation_and_gamma():
    assert MomentumParameter(r=2.0).gamma == 1.0
    assert MomentumParameter(r=-1.0).gamma == 0.0
    assert MomentumParameter.from_gamma(0.5).r == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        MomentumParameter(r=-2.0)


def test_momentum_weight_values():
    # the weight is (k-1)/(k+r), zero for k <= 1 by convention (covers the
    # 0/0 at r = -1, k = 1)
    assert momentum_weight(0, 2.0) == 0.0
    assert momentum_weight(1, -1.0) == 0.0
    assert momentum_weight(2, 2.0) == pytest.approx(0.25)
    assert momentum_weight(5, 0.0) == pytest.approx(0.8)
    assert momentum_weight(10, -1.0) == 1.0


def test_nag_first_steps_by_hand():
    # r=2, s=0.1 on the reference quadratic from (1,1):
    #   x1 = y0 - s grad f(y0) = (0.996, 0.999), y1 = x1 (weight 0 at k=1)
    #   x2 = y1 - s grad f(y1) = (0.992016, 0.998001)
    #   y2 = x2 + (1/4)(x2 - x1) = (0.991020, 0.99775125)
    res = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=2, keep_states=True), "nag")
    s1, s2 = res.states[1], res.states[2]
    np.testing.assert_allclose(s1.x_curr, [0.996, 0.999], atol=1e-14)
    np.testing.assert_allclose(s2.x_prev, [0.996, 0.999], atol=1e-14)
    np.testing.assert_allclose(s2.x_curr, [0.992016, 0.998001], atol=1e-12)
    np.testing.assert_allclose(s2.y_prev, [0.996, 0.999], atol=1e-14)  # y1 = x1


def test_fixed_point_at_minimizer():
    problem = load_problem("reference-quadratic")
    x0 = np.zeros(2)
    for method in ("nag", "phase", "fista"):
        res = run(
            RunConfig(momentum=MomentumParameter(r=1.0), step=0.1, max_iter=50, x0=x0),
            method,
        )
        np.testing.assert_allclose(res.final_state.x_curr, x0, atol=1e-15)
        assert res.records[-1].grad_sq == 0.0
        assert res.final_gap == 0.0


def test_phase_space_matches_two_line_form():
    for r in (-1.0, 0.5, 2.0, 4.0):
        a = run(RunConfig(momentum=MomentumParameter(r=r), step=0.1, max_iter=80, keep_states=True), "nag")
        b = run(RunConfig(momentum=MomentumParameter(r=r), step=0.1, max_iter=80, keep_states=True), "phase")
        for sa, sb in zip(a.states, b.states):
            np.testing.assert_allclose(sb.x_curr, sa.x_curr, rtol=1e-11, atol=1e-14)


def test_fista_with_zero_term_matches_nag():
    problem = load_problem("reference-quadratic")
    a = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=100, keep_states=True), "nag")
    b = run(
        RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=100, problem=problem, keep_states=True),
        "fista",
    )
    for sa, sb in zip(a.states, b.states):
        np.testing.assert_allclose(sb.x_curr, sa.x_curr, rtol=1e-13, atol=1e-16)


def test_phase_velocity_consistent_with_differences():
    res = run(RunConfig(momentum=MomentumParameter(r=0.5), step=0.2, max_iter=30, keep_states=True), "phase")
    sqrt_s = np.sqrt(0.2)
    for prev, curr in zip(res.states, res.states[1:]):
        np.testing.assert_allclose(curr.v, (curr.x_curr - prev.x_curr) / sqrt_s, atol=1e-12)


def test_step_size_guard():
    with pytest.raises(ConfigError):
        run(RunConfig(momentum=MomentumParameter(r=2.0), step=30.0, max_iter=5), "nag")
    res = run(
        RunConfig(momentum=MomentumParameter(r=2.0), step=30.0, max_iter=5, allow_large_step=True),
        "nag",
    )
    assert res.large_step_override
    assert res.step_ratio == pytest.approx(30.0 * 0.04)


def test_default_step_is_inverse_lipschitz():
    res = run(RunConfig(momentum=MomentumParameter(r=2.0), max_iter=1), "nag")
    assert res.step == pytest.approx(25.0)


def test_zero_iterations_yields_single_record():
    res = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=0), "nag")
    assert len(res.records) == 1
    assert res.records[0].k_or_t == 0.0


def test_record_cadence_explicit_and_adaptive():
    res = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=100, record_every=7), "nag")
    ks = [int(rec.k_or_t) for rec in res.records]
    assert ks[0] == 0 and ks[-1] == 100
    assert all(k % 7 == 0 or k == 100 for k in ks)

    res = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=5000, record_every=0), "nag")
    ks = [int(rec.k_or_t) for rec in res.records]
    assert ks == sorted(set(ks))
    assert ks[-1] == 5000
    assert set(range(0, 1001)) <= set(ks)  # dense early
    assert len(ks) < 3000  # thinned late


def test_record_ks_forces_rows():
    res = run(
        RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=100, record_every=30, record_ks=frozenset({17})),
        "nag",
    )
    assert 17 in {int(rec.k_or_t) for rec in res.records}


def test_min_grad_sq_is_running_minimum():
    res = run(RunConfig(momentum=MomentumParameter(r=0.0), step=0.1, max_iter=200), "nag")
    grads = np.array([rec.grad_sq for rec in res.records])
    mins = np.array([rec.min_grad_sq for rec in res.records])
    np.testing.assert_allclose(mins, np.minimum.accumulate(grads), rtol=0, atol=0)
    assert np.all(np.diff(mins) <= 0)


def test_divergence_detected_on_oversized_step():
    with pytest.raises(DivergenceError):
        run(
            RunConfig(momentum=MomentumParameter(r=2.0), step=1e9, max_iter=2000, allow_large_step=True),
            "nag",
        )


def test_converges_on_random_quadratics():
    rng = np.random.default_rng(23)
    for seed in range(4):
        n = int(rng.integers(2, 8))
        M = rng.standard_normal((n, n))
        Q = M.T @ M + 0.1 * np.eye(n)
        problem = smooth_composite(make_quadratic(Q))
        res = run(
            RunConfig(momentum=MomentumParameter(r=2.0), problem=problem, max_iter=3000,
                      x0=rng.standard_normal(n)),
            "nag",
        )
        assert res.final_gap < 1e-6 * res.records[0].gap


def test_fista_on_lasso_reaches_composite_optimum():
    problem = random_lasso(n=12, m=20, seed=13)
    s = 0.9 / problem.smooth.lipschitz
    res = run(
        RunConfig(momentum=MomentumParameter(r=2.0), step=s, max_iter=4000, problem=problem),
        "fista",
    )
    assert abs(res.final_gap) < 1e-10
    assert res.final_gap >= -1e-12  # optimum cached by an independent solve; float-level slack


def test_nag_rejects_nonsmooth_problem():
    problem = random_lasso(n=6, m=10, seed=1)
    with pytest.raises(ConfigError):
        run(RunConfig(momentum=MomentumParameter(r=2.0), problem=problem, max_iter=5), "nag")


def test_lyapunov_column_attachment():
    # gamma = 0.5: values defined from k >= 3; earlier rows carry None
    res = run(
        RunConfig(momentum=MomentumParameter.from_gamma(0.5), step=25.0, max_iter=10, lyapunov="auto"),
        "nag",
    )
    for rec in res.records:
        if rec.k_or_t < 3:
            assert rec.lyap is None
        else:
            assert rec.lyap is not None and rec.lyap > 0
    # critical member: defined from k >= 1
    res = run(
        RunConfig(momentum=MomentumParameter(r=-1.0), step=25.0, max_iter=10, lyapunov="auto"),
        "nag",
    )
    assert res.records[0].lyap is None
    assert all(rec.lyap is not None for rec in res.records[1:])


def test_run_accepts_method_enum_and_string():
    a = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=10), Method.NAG)
    b = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=10), "nag")
    assert a.final_gap == b.final_gap


def test_gap_conventions_nag_vs_fista():
    # the gradient family reports f(y_k) - f*, the proximal family Phi(x_k) - Phi*
    problem = load_problem("reference-quadratic")
    nag = run(RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=3, keep_states=True), "nag")
    smooth = problem.smooth
    for rec, st in zip(nag.records, nag.states):
        y_k = st.x_curr + momentum_weight(st.k, 2.0) * (st.x_curr - st.x_prev)
        assert rec.gap == pytest.approx(smooth.gap(y_k), abs=1e-15)
    fista = run(
        RunConfig(momentum=MomentumParameter(r=2.0), step=0.1, max_iter=3, problem=problem, keep_states=True),
        "fista",
    )
    for rec, st in zip(fista.records, fista.states):
        assert rec.gap == pytest.approx(problem.composite_gap(st.x_curr), abs=1e-15)
