"""Truncated generators and stationary solves for multiclass birth-death chains.

State spaces are boxes ``{0..T_1} x ... x {0..T_n}``; births are suppressed on
the upper face (reflecting truncation), which keeps the generator conservative
and biases mass inward where the boundary-mass certificate can see it.
Stationary distributions come from a sparse direct solve by default, with a
uniformized power iteration as an alternative backend under the same contract.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .allocation import (
    AllocationSpec,
    ArrivalRates,
    SaturationContext,
    as_rates,
    lower_partial_limit,
)
from .errors import (
    BoundViolation,
    BoxTooLarge,
    DivergentSeries,
    NoConvergence,
    SolveFailure,
)

STATE_CAP = 50_000_000
SWEEP_BUDGET = 1_000_000
DEFAULT_TAIL_TOL = 1e-8
DEFAULT_RESIDUAL_TOL = 1e-10
DEFAULT_START_BOX = 32

DeathFn = Callable[[int, tuple], float]


@dataclass(eq=False)
class TruncatedGenerator:
    """Conservative rate matrix of a truncated multiclass birth-death chain."""

    dim: int
    box: tuple
    birth_rates: tuple
    death_rate_fn: DeathFn
    death_bound: float
    uniformization_constant: float
    matrix: sp.csr_matrix
    death_values: np.ndarray      # (n_states, dim), zero where x_i = 0
    boundary_mask: np.ndarray     # bool, any coordinate at its cap

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def shape_box(self) -> tuple:
        return tuple(t + 1 for t in self.box)


def _box_tuple(box, dim) -> tuple:
    if isinstance(box, int):
        box = (box,) * dim
    box = tuple(int(t) for t in box)
    if len(box) != dim or any(t < 1 for t in box):
        raise ValueError(f"box {box} invalid for dimension {dim}")
    return box


def build_truncated_generator(
    rates,
    death_rate_fn: DeathFn,
    box,
    *,
    death_bound: float,
    state_cap: int = STATE_CAP,
) -> TruncatedGenerator:
    """Generator over ``{0..T}^n`` with births suppressed on the upper face.

    ``death_rate_fn(i, x)`` is consulted only where ``x_i > 0`` and must stay
    within ``[0, death_bound]``.
    """
    rates = as_rates(rates)
    dim = len(rates)
    box = _box_tuple(box, dim)
    shape = tuple(t + 1 for t in box)
    count = math.prod(shape)
    if count > state_cap:
        raise BoxTooLarge(f"box {box} has {count} states, above cap {state_cap}")

    coords = np.stack(np.unravel_index(np.arange(count), shape), axis=1)
    strides = [math.prod(shape[i + 1:]) for i in range(dim)]

    rows_parts, cols_parts, data_parts = [], [], []
    for i in range(dim):
        up = np.nonzero(coords[:, i] < box[i])[0]
        rows_parts.append(up)
        cols_parts.append(up + strides[i])
        data_parts.append(np.full(up.size, rates[i]))

    death_values = np.zeros((count, dim))
    states = list(map(tuple, coords.tolist()))
    drows, dcols, ddata = [], [], []
    slack = death_bound * 1e-12 + 1e-12
    for s, x in enumerate(states):
        for i in range(dim):
            if x[i] > 0:
                d = float(death_rate_fn(i, x))
                if not math.isfinite(d) or d < 0.0 or d > death_bound + slack:
                    raise BoundViolation(
                        f"death rate {d!r} at (i={i}, x={x}) outside [0, {death_bound}]"
                    )
                death_values[s, i] = d
                if d > 0.0:
                    drows.append(s)
                    dcols.append(s - strides[i])
                    ddata.append(d)
    rows_parts.append(np.asarray(drows, dtype=np.int64))
    cols_parts.append(np.asarray(dcols, dtype=np.int64))
    data_parts.append(np.asarray(ddata))

    rows = np.concatenate(rows_parts)
    cols = np.concatenate(cols_parts)
    data = np.concatenate(data_parts)

    out_rate = np.zeros(count)
    np.add.at(out_rate, rows, data)
    rows = np.concatenate([rows, np.arange(count)])
    cols = np.concatenate([cols, np.arange(count)])
    data = np.concatenate([data, -out_rate])

    matrix = sp.coo_matrix((data, (rows, cols)), shape=(count, count)).tocsr()
    boundary_mask = (coords == np.asarray(box)).any(axis=1)
    uniformization = sum(rates) + dim * death_bound
    return TruncatedGenerator(
        dim=dim,
        box=box,
        birth_rates=tuple(rates),
        death_rate_fn=death_rate_fn,
        death_bound=death_bound,
        uniformization_constant=uniformization,
        matrix=matrix,
        death_values=death_values,
        boundary_mask=boundary_mask,
    )


@dataclass(eq=False)
class StationaryDistribution:
    """Probability mass over a truncated box with solve diagnostics."""

    masses: np.ndarray
    box: tuple
    residual: float
    boundary_mass: float

    def __post_init__(self):
        total = float(self.masses.sum())
        if abs(total - 1.0) > 1e-12:
            raise SolveFailure(f"mass sums to {total}, not 1")
        if float(self.masses.min(initial=0.0)) < 0.0:
            raise SolveFailure("negative probability mass")

    @property
    def dim(self) -> int:
        return len(self.box)

    def grid(self) -> np.ndarray:
        return self.masses.reshape(tuple(t + 1 for t in self.box))

    def states(self):
        return itertools.product(*(range(t + 1) for t in self.box))

    def prob(self, state) -> float:
        state = tuple(int(c) for c in state)
        idx = 0
        for c, t in zip(state, self.box):
            if not 0 <= c <= t:
                return 0.0
            idx = idx * (t + 1) + c
        return float(self.masses[idx])

    def expect(self, fn: Callable[[tuple], float]) -> float:
        return float(sum(fn(x) * m for x, m in zip(self.states(), self.masses.tolist())))

    def marginal(self, i: int) -> np.ndarray:
        g = self.grid()
        axes = tuple(a for a in range(self.dim) if a != i)
        return g.sum(axis=axes)

    def dump_csv(self, fileobj) -> None:
        fileobj.write(
            f"# residual={self.residual:.6e} boundary_mass={self.boundary_mass:.6e}\n"
        )
        cols = ",".join(f"x_{k}" for k in range(self.dim))
        fileobj.write(f"{cols},probability\n" if cols else "probability\n")
        for x, m in zip(self.states(), self.masses.tolist()):
            prefix = ",".join(str(c) for c in x)
            fileobj.write(f"{prefix},{m:.17g}\n" if prefix else f"{m:.17g}\n")


@dataclass
class BoxTrial:
    box: tuple
    n_states: int
    residual: float
    boundary_mass: float
    functionals: tuple


@dataclass
class SolveReport:
    history: list = field(default_factory=list)
    certified: bool = False
    method: str = "direct"

    @property
    def boxes_tried(self):
        return [t.box for t in self.history]


def _direct_solve(matrix: sp.csr_matrix, ground: int) -> np.ndarray:
    """Solve pi Q = 0 grounded at one state: fix its mass to 1, solve the
    remaining balance equations, renormalize afterwards.

    Grounding preserves sparsity for the LU solve (no dense normalization
    row); it is well conditioned when the ground state carries substantial
    stationary mass, so callers ground at the origin for stable chains and
    retry at the box corner when mass has drifted outward.
    """
    count = matrix.shape[0]
    coo = matrix.tocoo()
    # transposed entries: row <- col, col <- row
    r, c, d = coo.col, coo.row, coo.data
    keep = (r != ground) & (c != ground)
    rows = r[keep] - (r[keep] > ground)
    cols = c[keep] - (c[keep] > ground)
    a = sp.coo_matrix((d[keep], (rows, cols)), shape=(count - 1, count - 1)).tocsc()
    rhs = np.zeros(count - 1)
    gmask = (r != ground) & (c == ground)
    np.add.at(rhs, r[gmask] - (r[gmask] > ground), -d[gmask])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", spla.MatrixRankWarning)
        x = np.atleast_1d(spla.spsolve(a, rhs))
    return np.concatenate([x[:ground], [1.0], x[ground:]])


def _power_polish(matrix: sp.csr_matrix, pi: np.ndarray, lam: float,
                  tol: float, budget: int) -> tuple:
    """Uniformized power iteration pi <- pi (I + Q/Lambda), vector form."""
    qt = matrix.T.tocsr()
    check_every = 64
    sweeps = 0
    residual = float(np.abs(qt @ pi).max())
    while residual > tol and sweeps < budget:
        for _ in range(check_every):
            pi = pi + (qt @ pi) / lam
        pi = np.maximum(pi, 0.0)
        pi /= pi.sum()
        sweeps += check_every
        residual = float(np.abs(qt @ pi).max())
    return pi, residual, sweeps


def solve_stationary(gen: TruncatedGenerator, tol: float = DEFAULT_RESIDUAL_TOL,
                     method: str = "direct") -> StationaryDistribution:
    """Stationary distribution of the truncated chain, residual-checked.

    With strictly positive birth rates the whole box is reachable from the
    origin and the chain has a unique absorbing communicating class, so the
    solve is well posed; states outside that class receive mass zero
    automatically.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    count = gen.n_states

    def normalize(vec):
        vec = np.maximum(vec, 0.0)
        total = vec.sum()
        if not math.isfinite(total) or total <= 0:
            return None, math.inf
        vec = vec / total
        return vec, float(np.abs(gen.matrix.T @ vec).max())

    pi, residual = None, math.inf
    if method == "direct":
        # ground where the mass is: origin for stable chains, box corner when
        # the load has pushed the distribution outward
        for ground in (0, count - 1):
            with np.errstate(over="ignore", invalid="ignore"):
                raw = _direct_solve(gen.matrix, ground)
            cand, cand_res = normalize(raw)
            if cand is not None and cand_res < residual:
                pi, residual = cand, cand_res
            if residual <= tol:
                break
        if pi is None:
            pi = np.full(count, 1.0 / count)
            residual = math.inf
    elif method == "power":
        pi = np.full(count, 1.0 / count)
        residual = math.inf
    else:
        raise ValueError(f"unknown method {method!r}")

    if residual > tol:
        pi, residual, _ = _power_polish(
            gen.matrix, pi, gen.uniformization_constant, tol, SWEEP_BUDGET
        )
        if residual > tol:
            raise SolveFailure(
                f"residual {residual:.3e} still above {tol:.3e} after polish"
            )
    boundary = float(pi[gen.boundary_mask].sum())
    return StationaryDistribution(pi, gen.box, residual, boundary)


def _functionals(gen: TruncatedGenerator, dist: StationaryDistribution,
                 extra_fns: Sequence[Callable[[tuple], float]]) -> tuple:
    vals = [float(dist.masses @ gen.death_values[:, i]) for i in range(gen.dim)]
    for f in extra_fns:
        vals.append(dist.expect(f))
    return tuple(vals)


def adaptive_stationary(
    rates,
    death_rate_fn: DeathFn,
    *,
    death_bound: float,
    tail_tol: float = DEFAULT_TAIL_TOL,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
    start_box: int = DEFAULT_START_BOX,
    state_cap: int = STATE_CAP,
    extra_functionals: Sequence[Callable[[tuple], float]] = (),
    method: str = "direct",
) -> tuple:
    """Escalate the truncation box (doubling) until the tail is certified.

    Certification requires boundary mass below ``tail_tol`` and the bounded
    test functionals (the death rates, plus any extras) to move by less than
    ``tail_tol`` between consecutive boxes.  Hitting the state cap with
    boundary mass still large raises :class:`NoConvergence` -- the expected
    signal for an unstable chain, mapped by callers to a zero average rate.
    """
    if tail_tol <= 0 or residual_tol <= 0:
        raise ValueError("tolerances must be positive")
    rates = as_rates(rates)
    n = len(rates)
    if n == 0:
        dist = StationaryDistribution(np.ones(1), (), 0.0, 0.0)
        report = SolveReport(
            history=[BoxTrial((), 1, 0.0, 0.0, tuple(f(()) for f in extra_functionals))],
            certified=True,
            method=method,
        )
        return dist, report

    report = SolveReport(history=[], certified=False, method=method)
    prev = None
    dist = None
    t = start_box
    while True:
        count = (t + 1) ** n
        if count > state_cap:
            raise NoConvergence(
                f"state cap {state_cap} reached at box {t} with boundary mass "
                f"{dist.boundary_mass if dist is not None else 'n/a'}",
                distribution=dist,
                report=report,
            )
        gen = build_truncated_generator(
            rates, death_rate_fn, (t,) * n,
            death_bound=death_bound, state_cap=state_cap,
        )
        dist = solve_stationary(gen, tol=residual_tol, method=method)
        funcs = _functionals(gen, dist, extra_functionals)
        report.history.append(
            BoxTrial(gen.box, count, dist.residual, dist.boundary_mass, funcs)
        )
        if (
            prev is not None
            and dist.boundary_mass < tail_tol
            and max(abs(a - b) for a, b in zip(funcs, prev)) < tail_tol
        ):
            report.certified = True
            return dist, report
        if (2 * t + 1) ** n > state_cap:
            if dist.boundary_mass >= tail_tol:
                raise NoConvergence(
                    f"state cap {state_cap} reached at box {t} with boundary mass "
                    f"{dist.boundary_mass:.3e} >= {tail_tol:.1e}",
                    distribution=dist,
                    report=report,
                )
            return dist, report  # flagged: boundary small but functionals unsettled
        prev = funcs
        t *= 2


def saturated_average_rate(
    spec: AllocationSpec,
    rates,
    sigma,
    n: int,
    i: int,
    *,
    sat_level: int = 64,
    growth: float = 2.0,
    limit_tol: float = 1e-9,
    tail_tol: float = DEFAULT_TAIL_TOL,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
    start_box: int = DEFAULT_START_BOX,
    state_cap: int = STATE_CAP,
    method: str = "direct",
    context: Optional[SaturationContext] = None,
) -> float:
    """Average of queue ``sigma[i]``'s saturated rate limit under the
    stationary law of the saturated prefix process.

    The prefix process has birth rates ``lambda[sigma[0..n-1]]`` and death
    rates given by the saturated limits of the first ``n`` relabeled queues.
    Returns 0 exactly when the prefix process fails to certify a stationary
    distribution (the instability convention).
    """
    sigma = tuple(sigma)
    rates = as_rates(rates)
    ctx = context if context is not None else SaturationContext(
        sigma, n, sat_level=sat_level, growth_factor=growth, limit_tol=limit_tol
    )
    if n == 0:
        return lower_partial_limit(spec, ctx, i, ())
    birth = tuple(rates[sigma[k]] for k in range(n))

    def death(k, u):
        return lower_partial_limit(spec, ctx, k, u)

    def target(u):
        return lower_partial_limit(spec, ctx, i, u)

    try:
        dist, _report = adaptive_stationary(
            birth, death,
            death_bound=spec.bound,
            tail_tol=tail_tol,
            residual_tol=residual_tol,
            start_box=start_box,
            state_cap=state_cap,
            extra_functionals=(target,),
            method=method,
        )
    except NoConvergence:
        return 0.0
    return dist.expect(target)


def stationary_1d_closed_form(
    lam: float,
    death_fn: Callable[[int], float],
    cutoff: float = 1e-15,
    max_terms: int = 2_000_000,
    divergence_eps: float = 1e-9,
) -> StationaryDistribution:
    """Single-queue stationary law from the detailed-balance product formula.

    Terms follow ``t(x) = t(x-1) * lam / death_fn(x)``; the series must pass a
    ratio test (ratio below ``1 - divergence_eps`` beyond a probe index) and
    is truncated once the geometric tail bound drops below ``cutoff``.
    Intended as an independent oracle against the generator-based solver.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    terms = [1.0]
    total = 1.0
    bad_streak = 0
    recent_ok = 0
    x = 0
    tail = 1.0
    while True:
        x += 1
        d = float(death_fn(x))
        if d <= 0 or not math.isfinite(d):
            raise ValueError(f"death_fn({x}) = {d!r} must be strictly positive")
        r = lam / d
        t = terms[-1] * r
        terms.append(t)
        total += t
        if x >= 64 and r >= 1.0 - divergence_eps:
            bad_streak += 1
            if bad_streak >= 16:
                raise DivergentSeries(
                    f"term ratio {r:.6g} at x={x} fails the ratio test"
                )
        else:
            bad_streak = 0
        recent_ok = recent_ok + 1 if r < 1.0 else 0
        if x >= 64 and recent_ok >= 8:
            tail = t * r / (1.0 - r)
            if tail < cutoff * total:
                break
        if x >= max_terms:
            raise DivergentSeries(f"series still unsettled after {max_terms} terms")
    masses = np.asarray(terms) / total
    # renormalize exactly after the float division
    masses = masses / masses.sum()
    return StationaryDistribution(
        masses, (len(terms) - 1,), residual=0.0,
        boundary_mass=float(tail / total),
    )
