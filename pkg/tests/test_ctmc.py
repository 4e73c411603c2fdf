"""Solver module: truncated generators, stationary solves, saturated averages."""

import itertools
import math

import numpy as np
import pytest

from coupledq.allocation import (
    SaturationContext,
    constant_allocation,
    exp_interference,
    log_gain,
    lower_partial_limit,
    three_queue_table,
)
from coupledq.ctmc import (
    adaptive_stationary,
    build_truncated_generator,
    saturated_average_rate,
    solve_stationary,
    stationary_1d_closed_form,
)
from coupledq.errors import BoxTooLarge, DivergentSeries, NoConvergence


def make_three_queue(a23=2.0):
    a_pair = {(i, j): 2.0 for i in range(3) for j in range(3) if i != j}
    a_pair[(1, 2)] = a23
    return three_queue_table((3.0, 3.0, 3.0), a_pair)


def geometric(rho, size):
    pmf = (1 - rho) * rho ** np.arange(size)
    return pmf / pmf.sum()


# -- generator construction -----------------------------------------------------

def test_mm1_generator_rows():
    gen = build_truncated_generator((0.5,), lambda i, x: 1.0, (2,), death_bound=1.0)
    expected = np.array([
        [-0.5, 0.5, 0.0],
        [1.0, -1.5, 0.5],
        [0.0, 1.0, -1.0],
    ])
    assert np.allclose(gen.matrix.toarray(), expected)
    assert gen.uniformization_constant == pytest.approx(1.5)


def test_two_queue_generator_conservative():
    gen = build_truncated_generator(
        (0.3, 0.4), lambda i, x: (1.0, 2.0)[i], (1, 1), death_bound=2.0
    )
    assert gen.n_states == 4
    rowsums = np.asarray(gen.matrix.sum(axis=1)).ravel()
    assert np.abs(rowsums).max() < 1e-13


def test_only_unit_steps_carry_rate():
    gen = build_truncated_generator(
        (0.3, 0.4), lambda i, x: 1.0, (3, 3), death_bound=1.0
    )
    coo = gen.matrix.tocoo()
    shape = gen.shape_box
    for r, c in zip(coo.row, coo.col):
        if r == c:
            continue
        xr = np.unravel_index(r, shape)
        xc = np.unravel_index(c, shape)
        diff = [b - a for a, b in zip(xr, xc)]
        assert sorted(map(abs, diff)) == [0, 1]


def test_saturated_pair_generator_uses_case_table():
    spec = make_three_queue()
    ctx = SaturationContext((0, 1, 2), 2)

    def death(k, u):
        return lower_partial_limit(spec, ctx, k, u)

    gen = build_truncated_generator((0.5, 1.2), death, (40, 40), death_bound=spec.bound)
    grid = gen.death_values.reshape(41, 41, 2)
    # queue 1 death: pairwise rate only while queue 2 is empty (queue 3 busy)
    assert grid[3, 0, 0] == 2.0
    assert grid[3, 5, 0] == 1.0
    assert grid[0, 5, 1] == 2.0
    assert grid[4, 5, 1] == 1.0


def test_box_cap():
    with pytest.raises(BoxTooLarge):
        build_truncated_generator(
            (0.5, 0.5), lambda i, x: 1.0, (10_000, 10_000), death_bound=1.0
        )


# -- stationary solves -------------------------------------------------------------

def test_mm1_stationary_matches_geometric():
    gen = build_truncated_generator((0.5,), lambda i, x: 1.0, (60,), death_bound=1.0)
    dist = solve_stationary(gen, tol=1e-10)
    assert dist.prob((0,)) == pytest.approx(0.5, abs=1e-9)
    assert dist.residual <= 1e-10
    ref = geometric(0.5, 61)
    assert np.abs(dist.masses - ref).sum() < 1e-9


def test_normalization_contract():
    gen = build_truncated_generator(
        (0.4, 0.8), lambda i, x: 1.0 + (x[1 - i] == 0), (20, 20), death_bound=2.0
    )
    dist = solve_stationary(gen)
    assert dist.masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert dist.masses.min() >= 0.0


def test_detailed_balance_on_1d_solves():
    for lam, death in (
        (0.5, lambda x: 1.0),
        (0.9, lambda x: 1.0),
        (0.7, lambda x: 1.0 + 1.0 / (1.0 + x[0] if isinstance(x, tuple) else x)),
    ):
        death_fn = (lambda i, x, _d=death: _d(x[0])) if True else None
        gen = build_truncated_generator((lam,), lambda i, x, _d=death: _d(x[0] if isinstance(x, tuple) else x), (200,), death_bound=2.0)
        dist = solve_stationary(gen, tol=1e-10)
        m = dist.masses
        for x in range(200):
            d_next = gen.death_values[x + 1, 0]
            assert abs(m[x + 1] * d_next - m[x] * lam) < 1e-10


def test_product_form_2d():
    gen = build_truncated_generator(
        (0.5, 0.5), lambda i, x: 1.0, (40, 40), death_bound=1.0
    )
    dist = solve_stationary(gen, tol=1e-10)
    g = geometric(0.5, 41)
    ref = np.outer(g, g)
    tv = 0.5 * np.abs(dist.grid() - ref).sum()
    assert tv < 1e-8


def test_product_form_3d():
    mus = (1.0, 1.25, 2.0)
    lam = (0.5, 0.5, 0.5)
    gen = build_truncated_generator(
        lam, lambda i, x: mus[i], (32, 32, 32), death_bound=2.0
    )
    dist = solve_stationary(gen, tol=1e-10)
    gs = [geometric(lam[i] / mus[i], 33) for i in range(3)]
    ref = np.einsum("i,j,k->ijk", *gs)
    tv = 0.5 * np.abs(dist.grid() - ref).sum()
    assert tv < 1e-8


def test_power_backend_agrees():
    gen = build_truncated_generator((0.5,), lambda i, x: 1.0, (40,), death_bound=1.0)
    direct = solve_stationary(gen, tol=1e-10, method="direct")
    power = solve_stationary(gen, tol=1e-10, method="power")
    assert np.abs(direct.masses - power.masses).max() < 1e-8


# -- adaptive escalation ---------------------------------------------------------

def test_adaptive_certifies_heavier_load_with_larger_box():
    dist5, rep5 = adaptive_stationary(
        (0.5,), lambda i, x: 1.0, death_bound=1.0
    )
    dist9, rep9 = adaptive_stationary(
        (0.9,), lambda i, x: 1.0, death_bound=1.0
    )
    assert rep5.certified and rep9.certified
    assert dist9.prob((0,)) == pytest.approx(0.1, abs=1e-8)
    assert rep9.history[-1].box[0] > rep5.history[-1].box[0]


def test_adaptive_unstable_raises_no_convergence():
    # positive drift: mass accumulates at the moving boundary, never certifies
    with pytest.raises(NoConvergence):
        adaptive_stationary(
            (1.2,), lambda i, x: 1.0, death_bound=1.0, state_cap=1 << 14
        )


def test_adaptive_empty_prefix_convention():
    dist, rep = adaptive_stationary((), lambda i, x: 1.0, death_bound=1.0)
    assert rep.certified
    assert dist.masses.tolist() == [1.0]
    assert dist.prob(()) == 1.0


# -- saturated average rates -------------------------------------------------------

def test_constant_rates_average_is_exact():
    spec = constant_allocation((0.7, 1.3))
    for lam in (0.1, 0.4, 0.65):
        val = saturated_average_rate(spec, (lam, 0.3), (0, 1), 1, 1)
        assert val == pytest.approx(1.3, abs=1e-12)


def test_three_queue_stage2_closed_form():
    # average service for queue 2 with queue 3 saturated: lam1 + a23 (1 - lam1)
    for lam1, a23 in ((0.5, 2.0), (0.3, 1.5)):
        spec = make_three_queue(a23=a23)
        val = saturated_average_rate(spec, (lam1, 1.0, 0.3), (0, 1, 2), 1, 1)
        assert val == pytest.approx(lam1 + a23 * (1 - lam1), abs=1e-6)


def test_unstable_prefix_maps_to_zero():
    spec = constant_allocation((1.0, 1.0))
    val = saturated_average_rate(
        spec, (1.5, 0.3), (0, 1), 1, 1, state_cap=1 << 14
    )
    assert val == 0.0


def test_stage0_is_saturated_limit():
    spec = make_three_queue()
    assert saturated_average_rate(spec, (0.5, 0.5, 0.5), (0, 1, 2), 0, 0) == 1.0


# -- closed-form series -------------------------------------------------------------

def test_closed_form_geometric():
    dist = stationary_1d_closed_form(0.5, lambda x: 1.0)
    assert dist.prob((0,)) == pytest.approx(0.5, abs=1e-12)
    assert dist.prob((3,)) == pytest.approx(0.5 ** 4, abs=1e-12)


def test_closed_form_detailed_balance_exact():
    death = lambda x: (1.0 + 1.0 / x) ** 0.7
    dist = stationary_1d_closed_form(0.6, death)
    m = dist.masses
    for x in range(min(50, len(m) - 1)):
        assert m[x + 1] * death(x + 1) == pytest.approx(m[x] * 0.6, rel=1e-12)


def test_closed_form_divergent():
    with pytest.raises(DivergentSeries):
        stationary_1d_closed_form(1.2, lambda x: 1.0)


def test_closed_form_matches_solver_on_base_station_prefix():
    g, _ = log_gain(3.0)
    death = lambda x: g(x) / 6.0
    lam = 0.3
    oracle = stationary_1d_closed_form(lam, death)
    gen = build_truncated_generator(
        (lam,), lambda i, x: death(x[0]), (max(80, oracle.box[0]),), death_bound=0.5
    )
    dist = solve_stationary(gen, tol=1e-12)
    size = min(len(oracle.masses), len(dist.masses))
    tv = 0.5 * np.abs(oracle.masses[:size] - dist.masses[:size]).sum()
    assert tv < 1e-10


def test_base_station_average_vs_series_oracle():
    spec_alloc = __import__("coupledq.allocation", fromlist=["base_station_pair"])
    spec = spec_alloc.base_station_pair(2.0)
    lam1 = 0.3
    engine_val = saturated_average_rate(spec, (lam1, 0.5), (0, 1), 1, 1)
    g, _ = log_gain(3.0)
    h, _ = exp_interference(2.0)
    oracle_dist = stationary_1d_closed_form(lam1, lambda x: g(x) / 6.0)
    oracle = 3.0 * sum(
        h(x) * oracle_dist.prob((x,)) for x in range(oracle_dist.box[0] + 1)
    )
    assert engine_val == pytest.approx(oracle, abs=1e-6)


# -- comparison properties -----------------------------------------------------------

def test_monotone_rate_perturbation_converges():
    # saturated average under death rates raised by eps decreases to the
    # unperturbed value as eps -> 0
    spec = make_three_queue()
    ctx = SaturationContext((0, 1, 2), 1)
    lam1 = 0.5

    def avg_with_eps(eps):
        def death(k, u):
            return lower_partial_limit(spec, ctx, k, u) + eps

        dist, _ = adaptive_stationary((lam1,), death, death_bound=spec.bound + eps)
        return dist.expect(lambda u: lower_partial_limit(spec, ctx, 1, u))

    base = avg_with_eps(0.0)
    vals = [avg_with_eps(eps) for eps in (0.1, 0.01, 0.001)]
    assert vals[0] >= vals[1] >= vals[2] >= base - 1e-10
    assert vals[2] == pytest.approx(base, abs=1e-2)
    assert abs(vals[2] - base) < abs(vals[0] - base)


def test_pointwise_larger_death_rates_give_smaller_tails():
    lam = (0.6, 0.6)
    gen_lo = build_truncated_generator(
        lam, lambda i, x: 1.0, (30, 30), death_bound=2.0
    )
    gen_hi = build_truncated_generator(
        lam, lambda i, x: 1.0 + 0.5 / (1.0 + x[1 - i]), (30, 30), death_bound=2.0
    )
    d_lo = solve_stationary(gen_lo)
    d_hi = solve_stationary(gen_hi)
    for i in range(2):
        tail_lo = np.cumsum(d_lo.marginal(i)[::-1])[::-1]
        tail_hi = np.cumsum(d_hi.marginal(i)[::-1])[::-1]
        assert (tail_hi <= tail_lo + 1e-9).all()


def test_dump_csv_format(tmp_path):
    gen = build_truncated_generator((0.5,), lambda i, x: 1.0, (3,), death_bound=1.0)
    dist = solve_stationary(gen)
    out = tmp_path / "dist.csv"
    with open(out, "w") as f:
        dist.dump_csv(f)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# residual=")
    assert "boundary_mass=" in lines[0]
    assert lines[1] == "x_0,probability"
    assert len(lines) == 2 + 4
