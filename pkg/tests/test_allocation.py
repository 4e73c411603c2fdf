"""Allocation module: evaluation, structure checks, saturated limits, relabeling."""

import itertools
import math

import pytest

from coupledq.allocation import (
    AllocationSpec,
    ArrivalRates,
    SaturationContext,
    base_station_pair,
    build_product_allocation,
    check_partially_decreasing,
    check_uniform_limits,
    constant_allocation,
    evaluate,
    exp_interference,
    log_gain,
    lower_partial_limit,
    one_server_power_law,
    relabel,
    three_queue_table,
)
from coupledq.errors import (
    BoundViolation,
    InvalidShape,
    NoUniformLimit,
    SaturationNotConverged,
)


def make_three_queue(a=(3.0, 3.0, 3.0), a_pair_val=2.0, **over):
    a_pair = {(i, j): a_pair_val for i in range(3) for j in range(3) if i != j}
    a_pair.update(over)
    return three_queue_table(a, a_pair)


def strip_analytic(spec):
    """Black-box twin of a spec: same rates, no closed-form limits."""
    return AllocationSpec(spec.n_queues, spec.rate_fn, spec.bound)


# -- evaluation ---------------------------------------------------------------

def test_constant_evaluate():
    spec = constant_allocation((1.0, 2.0))
    assert evaluate(spec, 1, (5, 0)) == 2.0
    assert evaluate(spec, 0, (0, 0)) == 1.0


def test_three_queue_case_table():
    spec = make_three_queue(a=(3.0, 3.0, 3.0), a_pair_val=2.0)
    # queue 3 with queue 1 busy and queue 2 empty serves at the pairwise rate
    assert evaluate(spec, 2, (1, 0, 7)) == 2.0
    # both others busy: unit rate
    assert evaluate(spec, 2, (1, 1, 7)) == 1.0
    # both others empty: solo rate
    assert evaluate(spec, 2, (0, 0, 7)) == 3.0


def test_product_zero_gain_at_empty():
    spec = base_station_pair(0.7)
    for x2 in (0, 3, 50):
        assert evaluate(spec, 0, (0, x2)) == 0.0


def test_bound_violation_is_hard_error():
    bad = AllocationSpec(1, lambda i, x: -0.5, bound=1.0)
    with pytest.raises(BoundViolation):
        evaluate(bad, 0, (0,))
    over = AllocationSpec(1, lambda i, x: 2.0, bound=1.0)
    with pytest.raises(BoundViolation):
        evaluate(over, 0, (3,))
    nan = AllocationSpec(1, lambda i, x: float("nan"), bound=1.0)
    with pytest.raises(BoundViolation):
        evaluate(nan, 0, (3,))


def test_evaluation_is_memoized_and_deterministic():
    calls = []

    def rate(i, x):
        calls.append((i, x))
        return 1.0

    spec = AllocationSpec(2, rate, bound=2.0)
    assert spec.rate(0, (1, 2)) == spec.rate(0, (1, 2))
    assert calls.count((0, (1, 2))) == 1


def test_arrival_rates_strictly_positive():
    with pytest.raises(ValueError):
        ArrivalRates((0.5, 0.0))
    with pytest.raises(ValueError):
        ArrivalRates((-1.0,))


# -- partial monotonicity ------------------------------------------------------

def test_constants_partially_decreasing():
    report = check_partially_decreasing(constant_allocation((1.0, 2.0)), box=8)
    assert report.partially_decreasing is True


def test_three_queue_partially_decreasing():
    report = check_partially_decreasing(make_three_queue(), box=6)
    assert report.partially_decreasing is True


def test_increasing_rate_caught_with_counterexample():
    spec = AllocationSpec(
        2, lambda i, x: min(1.0 + x[1], 5.0) if i == 0 else 1.0, bound=5.0
    )
    report = check_partially_decreasing(spec, box=4)
    assert report.partially_decreasing is False
    x, y, i = report.pd_counterexample
    assert x == (0, 0) and y == (0, 1) and i == 0
    assert all(a <= b for a, b in zip(x, y)) and x[i] == y[i]
    assert spec.rate(i, x) < spec.rate(i, y)


# -- uniform limits -------------------------------------------------------------

def test_constants_uniform_limits_zero_residual():
    report = check_uniform_limits(constant_allocation((1.0, 2.0)))
    assert report.uniform_limits is True
    assert report.worst_residual == 0.0


def test_product_black_box_uniform_limits_exponential_decay():
    # numeric residual decays like exp(-gamma R); no shape hint needed
    spec = strip_analytic(base_station_pair(2.0))
    report = check_uniform_limits(spec, tol=1e-6)
    assert report.uniform_limits is True
    assert report.worst_residual < 1e-6
    assert report.guaranteed_by_shape is False


def test_product_saturation_residual_decays_exponentially():
    # spread of phi over saturation levels {R, R+1, 2R} is governed by the
    # interference tail: |h(R) - h(2R)| ~ (4/36) exp(-gamma R)
    gamma = 0.05
    spec = strip_analytic(base_station_pair(gamma))
    g, _ = log_gain(3.0)

    def spread(r):
        worst = 0.0
        for x1 in range(4):
            vals = [spec.rate(0, (x1, s)) for s in (r, r + 1, 2 * r)]
            worst = max(worst, max(vals) - min(vals))
        return worst

    s64, s128, s256 = spread(64), spread(128), spread(256)
    assert s64 > 0
    bound = lambda r: 3.0 * (4.0 / 36.0) * math.exp(-gamma * r) * 1.2
    assert s64 <= bound(64)
    assert s128 <= bound(128)
    assert s128 <= s64 * math.exp(-gamma * 64) * 1.5
    assert s256 <= s128 * math.exp(-gamma * 128) * 1.5


def test_oscillating_rate_has_no_uniform_limit():
    spec = AllocationSpec(
        2,
        lambda i, x: (1.5 if x[1] % 2 == 0 else 0.5) if i == 0 else 1.0,
        bound=2.0,
    )
    with pytest.raises(NoUniformLimit):
        check_uniform_limits(spec)


def test_uniform_limits_schedule_must_increase():
    with pytest.raises(ValueError):
        check_uniform_limits(constant_allocation((1.0,)), schedule=(64, 64))


# -- saturated limits ------------------------------------------------------------

def case_table_saturated_q2(spec, x1):
    """Independent oracle for queue 2's limit with queue 3 pinned busy:
    read the case table directly at any busy witness state."""
    return spec.rate(1, (x1, 0, 1))


def test_lower_partial_limit_three_queue():
    spec = make_three_queue(a_pair_val=2.0)
    ctx = SaturationContext((0, 1, 2), 1)
    assert lower_partial_limit(spec, ctx, 1, (0,)) == case_table_saturated_q2(spec, 0) == 2.0
    for x1 in (1, 2, 9):
        assert lower_partial_limit(spec, ctx, 1, (x1,)) == case_table_saturated_q2(spec, x1) == 1.0


def test_lower_partial_limit_numeric_matches_analytic():
    spec = make_three_queue()
    blind = strip_analytic(spec)
    for sigma in ((0, 1, 2), (2, 0, 1)):
        for n in (0, 1, 2):
            ctx_a = SaturationContext(sigma, n)
            ctx_b = SaturationContext(sigma, n)
            for i in range(3):
                for prefix in itertools.product(range(3), repeat=n):
                    va = lower_partial_limit(spec, ctx_a, i, prefix)
                    vb = lower_partial_limit(blind, ctx_b, i, prefix)
                    assert va == pytest.approx(vb, abs=1e-9)


def test_lower_partial_limit_product_analytic():
    spec = base_station_pair(2.0)
    ctx = SaturationContext((0, 1), 1)
    h = exp_interference(2.0)[0]
    for x1 in range(6):
        assert lower_partial_limit(spec, ctx, 1, (x1,)) == pytest.approx(3.0 * h(x1), abs=1e-12)
    ctx0 = SaturationContext((0, 1), 0)
    assert lower_partial_limit(spec, ctx0, 0, ()) == pytest.approx(0.5, abs=1e-12)


def test_lower_partial_limit_product_numeric_route():
    blind = strip_analytic(base_station_pair(2.0))
    ctx = SaturationContext((0, 1), 1)
    h = exp_interference(2.0)[0]
    for x1 in (0, 1, 4):
        assert lower_partial_limit(blind, ctx, 1, (x1,)) == pytest.approx(3.0 * h(x1), abs=1e-7)


def test_lower_partial_limit_constant_n0():
    spec = constant_allocation((0.7, 1.3))
    ctx = SaturationContext((0, 1), 0)
    assert lower_partial_limit(spec, ctx, 1, ()) == 1.3


def test_power_law_numeric_limit_is_one():
    spec = one_server_power_law(2.0)
    ctx = SaturationContext((0,), 0)
    assert lower_partial_limit(spec, ctx, 0, ()) == pytest.approx(1.0, abs=1e-7)


def test_saturation_not_converged_for_slow_tail():
    # 1/log decay stabilizes far too slowly for the default tolerance
    spec = AllocationSpec(1, lambda i, x: 1.0 + 1.0 / math.log(x[0] + 2.0), bound=3.0)
    ctx = SaturationContext((0,), 0, max_escalations=12)
    with pytest.raises(SaturationNotConverged):
        lower_partial_limit(spec, ctx, 0, ())


def test_prefix_consistency_inequality():
    # dropping one coordinate from the saturated set can only lower the limit
    spec = make_three_queue()
    tol = 1e-9
    ctx1 = SaturationContext((0, 1, 2), 1)
    ctx2 = SaturationContext((0, 1, 2), 2)
    for i in range(3):
        for x1 in range(4):
            v1 = lower_partial_limit(spec, ctx1, i, (x1,))
            for x2 in (64, 100, 1000):
                v2 = lower_partial_limit(spec, ctx2, i, (x1, x2))
                assert v1 <= v2 + tol


def test_saturated_limits_inherit_partial_monotonicity():
    spec = make_three_queue()
    ctx = SaturationContext((0, 1, 2), 2)
    cap = 6
    for i in range(3):
        for x in itertools.product(range(cap + 1), repeat=2):
            for j in range(2):
                if x[j] >= cap or (i < 2 and j == i):
                    continue
                y = x[:j] + (x[j] + 1,) + x[j + 1:]
                assert lower_partial_limit(spec, ctx, i, x) >= \
                    lower_partial_limit(spec, ctx, i, y) - 1e-12


def test_certify_runs():
    spec = make_three_queue()
    ctx = SaturationContext((0, 1, 2), 1)
    ctx.certify(spec)
    assert ctx.certified


# -- relabeling -------------------------------------------------------------------

def test_relabel_identity():
    spec = make_three_queue()
    rates = ArrivalRates((0.2, 0.7, 0.4))
    spec2, rates2 = relabel(spec, rates, (0, 1, 2))
    assert tuple(rates2) == tuple(rates)
    for x in itertools.product(range(3), repeat=3):
        for i in range(3):
            assert spec2.rate(i, x) == spec.rate(i, x)


def test_relabel_swap_rates():
    spec = constant_allocation((1.0, 2.0))
    _, rates2 = relabel(spec, ArrivalRates((0.2, 0.7)), (1, 0))
    assert tuple(rates2) == (0.7, 0.2)


def test_relabel_three_cycle_definition():
    # sigma = (2,3,1) in 1-based labels: relabeled queue 1 is original queue 2
    spec = make_three_queue(a=(3.0, 2.5, 2.2), a_pair_val=1.5)
    sigma = (1, 2, 0)
    spec2, _ = relabel(spec, ArrivalRates((0.1, 0.2, 0.3)), sigma)
    for x in itertools.product(range(3), repeat=3):
        assert spec2.rate(0, x) == spec.rate(1, (x[2], x[0], x[1]))


def test_relabel_round_trip_pointwise():
    spec = make_three_queue(a=(3.0, 2.5, 2.2), a_pair_val=1.5)
    rates = ArrivalRates((0.1, 0.2, 0.3))
    sigma = (2, 0, 1)
    inv = tuple(sigma.index(k) for k in range(3))
    spec2, rates2 = relabel(*relabel(spec, rates, sigma), inv)
    assert tuple(rates2) == tuple(rates)
    for x in itertools.product(range(3), repeat=3):
        for i in range(3):
            assert spec2.rate(i, x) == spec.rate(i, x)


def test_relabel_transports_analytic_limits():
    spec = make_three_queue()
    sigma = (1, 2, 0)
    spec2, _ = relabel(spec, ArrivalRates((0.1, 0.2, 0.3)), sigma)
    blind2 = strip_analytic(spec2)
    for n in (0, 1, 2):
        ctx_a = SaturationContext((0, 1, 2), n)
        ctx_b = SaturationContext((0, 1, 2), n)
        for i in range(3):
            for prefix in itertools.product(range(2), repeat=n):
                assert lower_partial_limit(spec2, ctx_a, i, prefix) == pytest.approx(
                    lower_partial_limit(blind2, ctx_b, i, prefix), abs=1e-9
                )


# -- product builder ---------------------------------------------------------------

def test_product_constant_degenerate():
    spec = build_product_allocation(
        gains=[(lambda x: 1.0, 1.0)] * 2,
        interference=[{1: (lambda t: 0.7, 0.7)}, {0: (lambda t: 1.3, 1.3)}],
    )
    assert evaluate(spec, 0, (4, 9)) == pytest.approx(0.7)
    assert evaluate(spec, 1, (4, 9)) == pytest.approx(1.3)


def test_product_evaluates_exactly():
    gamma = 0.05
    g, gcap = log_gain(3.0)
    h, _ = exp_interference(gamma)
    spec = base_station_pair(gamma)
    for x in itertools.product(range(8), repeat=2):
        assert evaluate(spec, 0, x) == g(x[0]) * h(x[1])
        assert evaluate(spec, 1, x) == g(x[1]) * h(x[0])


def test_product_structure_gates_pass():
    spec = base_station_pair(0.05)
    assert check_partially_decreasing(spec, box=12).partially_decreasing
    assert check_uniform_limits(spec).uniform_limits


def test_product_corner_value():
    spec = base_station_pair(2.0)
    ctx = SaturationContext((0, 1), 0)
    for i in range(2):
        assert lower_partial_limit(spec, ctx, i, ()) == pytest.approx(0.5, abs=1e-12)


def test_product_rejects_decreasing_gain():
    with pytest.raises(InvalidShape):
        build_product_allocation(
            gains=[(lambda x: 1.0 / (1.0 + x), 1.0)],
            interference=[{}],
        )


def test_product_rejects_increasing_interference():
    with pytest.raises(InvalidShape):
        build_product_allocation(
            gains=[(lambda x: 1.0, 1.0), (lambda x: 1.0, 1.0)],
            interference=[{1: (lambda t: min(1.0 + t, 5.0), 1.0)}, {}],
        )
