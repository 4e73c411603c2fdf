"""Service allocations for parallel queues with coupled, state-dependent rates.

An allocation assigns every queue ``i`` a service rate ``phi_i(x)`` that may
depend on the whole occupancy vector ``x``.  This module represents such
allocations, verifies the structural hypotheses the classification engine
relies on (boundedness, partial monotonicity, uniform saturation limits), and
evaluates saturated views where a subset of coordinates is pinned at infinity.

Queue indices are 0-based throughout the library.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .errors import (
    BoundViolation,
    InvalidShape,
    NoUniformLimit,
    SaturationNotConverged,
)

State = tuple  # tuple[int, ...]
RateFn = Callable[[int, State], float]
# analytic saturated-limit evaluator: (sigma, prefix_len, i, prefix) -> value or None
LimitFn = Callable[[tuple, int, int, State], Optional[float]]

DEFAULT_SAT_LEVEL = 64
DEFAULT_GROWTH = 2.0
DEFAULT_LIMIT_TOL = 1e-9
DEFAULT_PROBE_CAP = 32
MAX_ESCALATIONS = 96

_MONO_SLACK = 1e-12  # absorbs float noise in composed rate functions


@dataclass(frozen=True)
class ArrivalRates:
    """Strictly positive Poisson arrival rates, one per queue."""

    rates: tuple

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        for r in self.rates:
            if not (r > 0.0 and math.isfinite(r)):
                raise ValueError(f"arrival rates must be strictly positive, got {r}")

    def __len__(self):
        return len(self.rates)

    def __getitem__(self, i):
        return self.rates[i]

    def __iter__(self):
        return iter(self.rates)


def as_rates(rates) -> ArrivalRates:
    if isinstance(rates, ArrivalRates):
        return rates
    return ArrivalRates(tuple(rates))


@dataclass(eq=False)
class AllocationSpec:
    """A family of bounded service-rate functions on Z_+^N.

    ``rate_fn(i, x)`` must be deterministic and stay in ``[0, bound]``; every
    evaluation is validated and memoized (determinism makes the memo sound).
    Instances are treated as immutable after construction and are safe to
    share across concurrent evaluations under the GIL.

    ``analytic_limits(sigma, n, i, prefix)`` optionally returns the saturated
    limit of queue ``sigma[i]``'s rate when coordinates ``sigma[n:]`` are at
    infinity and the relabeled prefix occupancy is ``prefix``; returning
    ``None`` falls back to numeric escalation.
    """

    n_queues: int
    rate_fn: RateFn
    bound: float
    analytic_limits: Optional[LimitFn] = None
    monotone_by_construction: bool = False
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_queues < 1:
            raise ValueError("n_queues must be positive")
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError("bound must be a positive finite real")

    def rate(self, i: int, x: State) -> float:
        """Validated, memoized rate of queue ``i`` at state ``x``."""
        key = (i, x)
        v = self._memo.get(key)
        if v is None:
            v = self.rate_unmemoized(i, x)
            self._memo[key] = v
        return v

    def rate_unmemoized(self, i: int, x: State) -> float:
        v = float(self.rate_fn(i, x))
        if not math.isfinite(v) or v < 0.0 or v > self.bound:
            raise BoundViolation(
                f"rate_fn({i}, {x}) = {v!r} outside [0, {self.bound}]"
            )
        return v


def evaluate(spec: AllocationSpec, i: int, x) -> float:
    """Service rate of queue ``i`` at state ``x`` (bounds-checked)."""
    x = tuple(int(c) for c in x)
    if not 0 <= i < spec.n_queues:
        raise IndexError(f"queue index {i} out of range")
    if len(x) != spec.n_queues or any(c < 0 for c in x):
        raise ValueError(f"state {x} not in Z_+^{spec.n_queues}")
    return spec.rate(i, x)


@dataclass(eq=False)
class SaturationContext:
    """Evaluator for rate limits with a trailing coordinate block saturated.

    ``sigma`` relabels the queues; coordinates ``sigma[prefix_len:]`` are the
    saturated ones.  Numeric values come from minimizing the rate over the
    grid ``{R, R+1, ceil(R*growth)}`` per saturated coordinate and escalating
    ``R`` until two consecutive levels agree within ``limit_tol``.  The
    ``R+1`` probe catches parity-periodic rate functions that levels ``R``
    and ``2R`` alone would miss.
    """

    sigma: tuple
    prefix_len: int
    sat_level: int = DEFAULT_SAT_LEVEL
    growth_factor: float = DEFAULT_GROWTH
    limit_tol: float = DEFAULT_LIMIT_TOL
    max_escalations: int = MAX_ESCALATIONS
    certified: bool = False
    _memo: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.sigma = tuple(self.sigma)
        n = len(self.sigma)
        if sorted(self.sigma) != list(range(n)):
            raise ValueError(f"sigma {self.sigma} is not a permutation of 0..{n - 1}")
        if not 0 <= self.prefix_len <= n:
            raise ValueError("prefix_len out of range")
        if self.sat_level < 1 or self.growth_factor <= 1.0 or self.limit_tol <= 0:
            raise ValueError("bad saturation parameters")

    def _levels(self, r: int) -> tuple:
        return tuple(sorted({r, r + 1, max(r + 2, math.ceil(r * self.growth_factor))}))

    def _grid_min(self, spec: AllocationSpec, i: int, prefix: State, r: int) -> float:
        n, nq = self.prefix_len, spec.n_queues
        base = [0] * nq
        for k in range(n):
            base[self.sigma[k]] = prefix[k]
        sat_slots = [self.sigma[k] for k in range(n, nq)]
        best = math.inf
        for combo in itertools.product(self._levels(r), repeat=len(sat_slots)):
            for slot, v in zip(sat_slots, combo):
                base[slot] = v
            best = min(best, spec.rate(self.sigma[i], tuple(base)))
        return best

    def value(self, spec: AllocationSpec, i: int, prefix) -> float:
        """Saturated limit of queue ``sigma[i]``'s rate at relabeled prefix state."""
        prefix = tuple(int(c) for c in prefix)
        if len(prefix) != self.prefix_len:
            raise ValueError("prefix length mismatch")
        if self.prefix_len == spec.n_queues:
            # nothing saturated: plain relabeled evaluation
            x = [0] * spec.n_queues
            for k in range(spec.n_queues):
                x[self.sigma[k]] = prefix[k]
            return spec.rate(self.sigma[i], tuple(x))
        key = (i, prefix)
        cached = self._memo.get(key)
        if cached is not None:
            return cached
        r = self.sat_level
        prev = self._grid_min(spec, i, prefix, r)
        for _ in range(self.max_escalations):
            r = max(r + 1, math.ceil(r * self.growth_factor))
            cur = self._grid_min(spec, i, prefix, r)
            if abs(cur - prev) < self.limit_tol:
                self._memo[key] = cur
                return cur
            prev = cur
        raise SaturationNotConverged(
            f"saturated limit for queue {self.sigma[i]} at prefix {prefix} did not "
            f"stabilize within {self.limit_tol} after {self.max_escalations} escalations"
        )

    def certify(self, spec: AllocationSpec, probe_states=None) -> None:
        """Confirm escalation convergence on a probe box of prefix states."""
        if probe_states is None:
            probe_states = _probe_box(self.prefix_len, DEFAULT_PROBE_CAP)
        for u in probe_states:
            for i in range(spec.n_queues):
                self.value(spec, i, u)
        self.certified = True


def _probe_box(dim: int, cap: int, budget: int = 256):
    """Prefix probe states: the box {0..c}^dim with c shrunk to fit the budget."""
    if dim == 0:
        return [()]
    c = min(cap, max(1, int(round(budget ** (1.0 / dim))) - 1))
    return list(itertools.product(range(c + 1), repeat=dim))


def lower_partial_limit(spec: AllocationSpec, ctx: SaturationContext, i: int, prefix) -> float:
    """Worst-case limiting rate of queue ``sigma[i]`` with coordinates
    ``sigma[prefix_len:]`` saturated, evaluated at the relabeled prefix state.

    Uses the allocation's analytic limit when available, otherwise the
    context's certified numeric escalation.
    """
    prefix = tuple(int(c) for c in prefix)
    if spec.analytic_limits is not None:
        v = spec.analytic_limits(ctx.sigma, ctx.prefix_len, i, prefix)
        if v is not None:
            v = float(v)
            if not (0.0 <= v <= spec.bound + _MONO_SLACK):
                raise BoundViolation(f"analytic limit {v} outside [0, {spec.bound}]")
            return min(v, spec.bound)
    return ctx.value(spec, i, prefix)


@dataclass
class StructureReport:
    """Outcome of the sampled structural hypothesis checks.

    The checks are finite-box verifications, gates rather than proofs: the
    hypotheses quantify over the whole lattice and are undecidable for
    black-box rate functions.
    """

    probe_box: tuple = ()
    partially_decreasing: Optional[bool] = None
    pd_counterexample: Optional[tuple] = None  # (x, y, i) with x <= y, x_i = y_i
    uniform_limits: Optional[bool] = None
    worst_residual: Optional[float] = None
    guaranteed_by_shape: bool = False


def default_pd_box(n_queues: int, cap: int = 64) -> int:
    """Per-coordinate cap for the monotonicity sweep, shrunk so the
    exhaustive state count stays near 2**18 for many queues."""
    return min(cap, max(3, int(round((2 ** 18) ** (1.0 / n_queues))) - 1))


def check_partially_decreasing(spec: AllocationSpec, box: Optional[int] = None) -> StructureReport:
    """Exhaustively verify phi_i(x) >= phi_i(y) for x <= y, x_i = y_i on a box.

    Single-coordinate increments suffice by transitivity.  Returns the first
    counterexample when the property fails.
    """
    if box is None:
        box = default_pd_box(spec.n_queues)
    if box < 1:
        raise ValueError("box must be nonempty")
    n = spec.n_queues
    report = StructureReport(probe_box=(box,) * n, partially_decreasing=True)
    for x in itertools.product(range(box + 1), repeat=n):
        for j in range(n):
            if x[j] >= box:
                continue
            y = x[:j] + (x[j] + 1,) + x[j + 1:]
            for i in range(n):
                if i == j:
                    continue
                if spec.rate(i, x) < spec.rate(i, y) - _MONO_SLACK:
                    report.partially_decreasing = False
                    report.pd_counterexample = (x, y, i)
                    return report
    return report


def default_schedule(start: int = DEFAULT_SAT_LEVEL, levels: int = 17) -> tuple:
    return tuple(start * 2 ** k for k in range(levels))


def check_uniform_limits(
    spec: AllocationSpec,
    schedule=None,
    tol: float = 1e-6,
    prefix_cap: int = 8,
) -> StructureReport:
    """Verify that every rate function settles uniformly when any coordinate
    subset is saturated.

    For each saturated subset and each probed prefix state, the residual is
    the spread (max - min) of the rate over the saturation grid
    ``{R, R+1, 2R}`` per saturated coordinate; it must fall below ``tol`` at
    some schedule level.  Raises :class:`NoUniformLimit` when the final level
    still misses ``tol`` and the allocation does not carry a shape guarantee.
    """
    if schedule is None:
        schedule = default_schedule()
    schedule = tuple(int(r) for r in schedule)
    if any(b <= a for a, b in zip(schedule, schedule[1:])) or not schedule:
        raise ValueError("schedule must be strictly increasing and nonempty")
    if tol <= 0:
        raise ValueError("tol must be positive")

    n = spec.n_queues
    worst = 0.0
    for m in range(1, n + 1):  # size of the saturated subset
        for sat in itertools.combinations(range(n), m):
            prefix_slots = [j for j in range(n) if j not in sat]
            probes = _probe_box(len(prefix_slots), prefix_cap)
            residual = math.inf
            for r in schedule:
                levels = sorted({r, r + 1, 2 * r})
                spread = 0.0
                for u in probes:
                    base = [0] * n
                    for slot, v in zip(prefix_slots, u):
                        base[slot] = v
                    for i in range(n):
                        lo, hi = math.inf, -math.inf
                        for combo in itertools.product(levels, repeat=m):
                            for slot, v in zip(sat, combo):
                                base[slot] = v
                            val = spec.rate(i, tuple(base))
                            lo = min(lo, val)
                            hi = max(hi, val)
                        spread = max(spread, hi - lo)
                residual = spread
                if residual < tol:
                    break
            worst = max(worst, residual)
            if residual >= tol and not spec.monotone_by_construction:
                report = StructureReport(
                    probe_box=(prefix_cap,) * n,
                    uniform_limits=False,
                    worst_residual=worst,
                )
                raise NoUniformLimit(
                    f"saturation residual {residual:.3g} for subset {sat} still above "
                    f"{tol} at level {schedule[-1]}",
                    report=report,
                )
    return StructureReport(
        probe_box=(prefix_cap,) * n,
        uniform_limits=True,
        worst_residual=worst,
        guaranteed_by_shape=spec.monotone_by_construction,
    )


def relabel(spec: AllocationSpec, rates: ArrivalRates, sigma) -> tuple:
    """Relabeled system: queue ``i`` of the result is queue ``sigma[i]`` of the
    input, with states permuted to match.

    Round trip with the inverse permutation is the identity pointwise.
    """
    sigma = tuple(sigma)
    n = spec.n_queues
    if sorted(sigma) != list(range(n)):
        raise ValueError(f"sigma {sigma} is not a permutation of 0..{n - 1}")
    rates = as_rates(rates)
    inv = [0] * n
    for k, j in enumerate(sigma):
        inv[j] = k

    def new_rate(i, x, _spec=spec, _sigma=sigma, _inv=tuple(inv)):
        y = tuple(x[_inv[j]] for j in range(len(_inv)))
        return _spec.rate(_sigma[i], y)

    new_limits = None
    if spec.analytic_limits is not None:
        def new_limits(tau, m, i, prefix, _spec=spec, _sigma=sigma):
            composed = tuple(_sigma[t] for t in tau)
            return _spec.analytic_limits(composed, m, i, prefix)

    new_spec = AllocationSpec(
        n_queues=n,
        rate_fn=new_rate,
        bound=spec.bound,
        analytic_limits=new_limits,
        monotone_by_construction=spec.monotone_by_construction,
    )
    new_rates = ArrivalRates(tuple(rates[sigma[i]] for i in range(n)))
    return new_spec, new_rates


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------

def constant_allocation(mus) -> AllocationSpec:
    """phi_i identically mu_i; saturated limits are the constants themselves."""
    mus = tuple(float(m) for m in mus)
    if any(m < 0 or not math.isfinite(m) for m in mus):
        raise ValueError("service rates must be finite and nonnegative")
    bound = max(mus) if max(mus) > 0 else 1.0

    def rate(i, x, _mus=mus):
        return _mus[i]

    def limits(sigma, n, i, prefix, _mus=mus):
        return _mus[sigma[i]]

    return AllocationSpec(
        n_queues=len(mus), rate_fn=rate, bound=bound,
        analytic_limits=limits, monotone_by_construction=True,
    )


def busy_table_allocation(tables: Sequence[Mapping[frozenset, float]],
                          strict: bool = True) -> AllocationSpec:
    """Allocation whose rates depend only on which *other* queues are busy.

    ``tables[i]`` maps a frozenset of busy other-queue indices to queue ``i``'s
    rate.  Saturated limits are exact table lookups (a pinned coordinate is
    simply busy).  With ``strict`` the table must be monotone under subset
    inclusion (more busy neighbors never helps), which is exactly the partial
    monotonicity hypothesis for this family.
    """
    n = len(tables)
    norm = []
    for i, tab in enumerate(tables):
        t = {}
        for subset in map(frozenset, itertools.chain.from_iterable(
                itertools.combinations([j for j in range(n) if j != i], m)
                for m in range(n))):
            if subset not in tab:
                raise ValueError(f"table for queue {i} missing busy set {set(subset)}")
            t[subset] = float(tab[subset])
        norm.append(t)
    if strict:
        for i, t in enumerate(norm):
            for s, v in t.items():
                for s2, v2 in t.items():
                    if s < s2 and v < v2 - _MONO_SLACK:
                        raise InvalidShape(
                            f"queue {i}: rate {v} for busy set {set(s)} below rate "
                            f"{v2} for larger busy set {set(s2)}"
                        )
    bound = max(max(t.values()) for t in norm)

    def rate(i, x, _t=tuple(norm)):
        busy = frozenset(j for j, c in enumerate(x) if c > 0 and j != i)
        return _t[i][busy]

    def limits(sigma, m, i, prefix, _t=tuple(norm), _n=n):
        qi = sigma[i]
        busy = set(sigma[m:])  # saturated coordinates are busy
        busy.discard(qi)
        for k in range(m):
            if prefix[k] > 0 and sigma[k] != qi:
                busy.add(sigma[k])
        return _t[qi][frozenset(busy)]

    return AllocationSpec(
        n_queues=n, rate_fn=rate, bound=bound,
        analytic_limits=limits, monotone_by_construction=True,
    )


def three_queue_table(a: Sequence[float], a_pair: Mapping, strict: bool = True) -> AllocationSpec:
    """Three coupled queues whose rates see only the busy pattern of the others.

    Queue ``i`` serves at ``a[i]`` when both other queues are empty, at
    ``a_pair[(i, j)]`` when only queue ``j`` is busy, and at 1 when both are.
    Monotonicity needs ``a[i] >= a_pair[(i, j)] >= 1``.
    """
    if len(a) != 3:
        raise ValueError("need exactly three solo rates")
    tables = []
    for i in range(3):
        others = [j for j in range(3) if j != i]
        tab = {frozenset(): float(a[i]), frozenset(others): 1.0}
        for j in others:
            tab[frozenset({j})] = float(a_pair[(i, j)])
        tables.append(tab)
    return busy_table_allocation(tables, strict=strict)


def build_product_allocation(gains, interference) -> AllocationSpec:
    """Allocation of the form phi_i(x) = g_i(x_i) * prod_j f_ij(x_j).

    ``gains[i]`` is ``(g_i, g_i_limit)`` with ``g_i`` increasing and bounded by
    its limit; ``interference[i]`` maps other-coordinate ``j`` to
    ``(f_ij, f_ij_limit)`` with ``f_ij`` decreasing to its limit.  Shapes are
    sampled on a probe range and rejected when violated.  Saturated limits are
    assembled in closed form from the factor limits, and the product of an
    increasing bounded gain with decreasing factors settles uniformly, so the
    uniform-limit check passes by construction.
    """
    n = len(gains)
    if len(interference) != n:
        raise ValueError("need one interference map per queue")
    gains = [(g, float(lim)) for g, lim in gains]
    inter = []
    for i, fm in enumerate(interference):
        m = {}
        for j, (f, lim) in dict(fm).items():
            if j == i or not 0 <= j < n:
                raise ValueError(f"interference factor index {j} invalid for queue {i}")
            m[int(j)] = (f, float(lim))
        inter.append(m)

    probe = list(range(0, 33)) + [64, 128, 1024]
    for i, (g, lim) in enumerate(gains):
        vals = [float(g(x)) for x in probe]
        for a, b in zip(vals, vals[1:]):
            if b < a - _MONO_SLACK:
                raise InvalidShape(f"gain for queue {i} decreases on the probe range")
        if any(v > lim + _MONO_SLACK for v in vals):
            raise InvalidShape(f"gain for queue {i} exceeds its declared limit {lim}")
    for i, fm in enumerate(inter):
        for j, (f, lim) in fm.items():
            vals = [float(f(x)) for x in probe]
            for a, b in zip(vals, vals[1:]):
                if b > a + _MONO_SLACK:
                    raise InvalidShape(
                        f"interference factor ({i},{j}) increases on the probe range"
                    )
            if any(v < lim - _MONO_SLACK for v in vals) or any(v < 0 for v in vals):
                raise InvalidShape(
                    f"interference factor ({i},{j}) drops below its declared limit"
                )

    bound = max(
        lim * math.prod(f(0) for f, _ in inter[i].values())
        if inter[i] else lim
        for i, (_, lim) in enumerate(gains)
    )

    def rate(i, x, _g=tuple(gains), _f=tuple(inter)):
        v = _g[i][0](x[i])
        for j, (f, _) in _f[i].items():
            v *= f(x[j])
        return v

    def limits(sigma, m, i, prefix, _g=tuple(gains), _f=tuple(inter)):
        qi = sigma[i]
        sat = set(sigma[m:])
        pos = {sigma[k]: k for k in range(m)}
        if qi in sat:
            v = _g[qi][1]
        else:
            v = _g[qi][0](prefix[pos[qi]])
        for j, (f, lim) in _f[qi].items():
            v *= lim if j in sat else f(prefix[pos[j]])
        return v

    return AllocationSpec(
        n_queues=n, rate_fn=rate, bound=bound,
        analytic_limits=limits, monotone_by_construction=True,
    )


# Built-in gain / interference families ------------------------------------

def log_gain(cap: float = 3.0):
    """Scheduling gain min(cap, log(1+x)): increasing, bounded by cap."""
    return (lambda x: min(cap, math.log1p(x)), cap)


def exp_interference(gamma: float):
    """Interference factor 1 / (6 - 4 exp(-gamma t)): decreasing to 1/6."""
    return (lambda t: 1.0 / (6.0 - 4.0 * math.exp(-gamma * t)), 1.0 / 6.0)


def poly_interference(gamma: float):
    """Interference factor 1 / (6 - 4 (1+t)^-gamma): decreasing to 1/6."""
    return (lambda t: 1.0 / (6.0 - 4.0 * (1.0 + t) ** (-gamma)), 1.0 / 6.0)


INTERFERENCE_FORMS = {
    "exp_interference": exp_interference,
    "poly_interference": poly_interference,
}
GAIN_FORMS = {"log_gain": log_gain}


def base_station_pair(gamma: float, form: str = "exp_interference",
                      cap: float = 3.0) -> AllocationSpec:
    """Two interfering base stations with channel-aware scheduling gain."""
    try:
        factor = INTERFERENCE_FORMS[form]
    except KeyError:
        raise ValueError(f"unknown interference form {form!r}") from None
    g = log_gain(cap)
    return build_product_allocation(
        gains=[g, g],
        interference=[{1: factor(gamma)}, {0: factor(gamma)}],
    )


def one_server_power_law(alpha: float) -> AllocationSpec:
    """Single queue served at (1 + 1/x)^alpha, decreasing to 1.

    Carries no analytic limits on purpose: it exercises the numeric
    saturation escalation.  The value at 0 is irrelevant (no departures
    there) and is pinned to the x=1 value to keep the function bounded.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    bound = 2.0 ** alpha

    def rate(i, x, _a=alpha, _b=bound):
        if x[0] == 0:
            return _b
        return (1.0 + 1.0 / x[0]) ** _a

    return AllocationSpec(n_queues=1, rate_fn=rate, bound=bound)
