"""Evolutionary asset market with short-lived assets and simple strategies.

State is the vector of wealth shares.  Each period every investor splits
wealth over K assets by a fixed proportion vector; asset k pays D_k(s) in
state s and is shared out in proportion to what each investor spent on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .interval_maps import Identity, MarketMap, MonotoneMap
from .orbit_engine import IFSystem, symbol_stream

CLEARING_TOL = 1e-9
SHARE_FLOOR = 10 * np.finfo(float).eps

EXTINCTION = "Extinction"
SURVIVAL = "Survival"
DOMINATION = "Domination"
UNDECIDED = "Undecided"


class MarketConsistencyError(RuntimeError):
    """Clearing or share conservation failed beyond tolerance."""


def relative_payoffs(D) -> np.ndarray:
    """Column-normalise a K x L payoff matrix so each state's payoffs sum to 1.

    The last row absorbs the rounding residue, so each column sums to exactly
    1 when added top to bottom.
    """
    D = np.array(D, dtype=float)
    if D.ndim != 2:
        raise ValueError("payoff matrix must be K x L")
    if np.any(D < 0) or np.any(~np.isfinite(D)):
        raise ValueError("payoffs must be finite and nonnegative")
    tot = D.sum(axis=0)
    if np.any(tot <= 0):
        bad = np.flatnonzero(tot <= 0).tolist()
        raise ValueError(f"states {bad} have zero total payoff")
    R = D / tot
    # s + fl(1 - s) rounds to exactly 1 for 0 <= s <= 1
    R[-1] = np.maximum(1.0 - R[:-1].sum(axis=0), 0.0)
    return R


def _strategy(lam, K: int, name: str = "strategy") -> np.ndarray:
    lam = np.array(lam, dtype=float)
    if lam.shape != (K,):
        raise ValueError(f"{name} needs {K} entries, got shape {lam.shape}")
    if np.any(~(lam > 0)):
        raise ValueError(f"{name} must be completely mixed (all weights > 0)")
    if not math.isclose(lam.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"{name} must sum to 1")
    return lam


@dataclass(frozen=True)
class MarketModel:
    D: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        D = np.array(self.D, dtype=float)
        R = relative_payoffs(D)
        p = np.array(self.p, dtype=float)
        if p.shape != (D.shape[1],):
            raise ValueError(f"p has {p.size} entries for {D.shape[1]} states")
        if np.any(~(p > 0)) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("p must be strictly positive and sum to 1")
        if np.any(D @ p <= 0):
            raise ValueError("every asset needs positive expected payoff")
        for a in (D, R, p):
            a.setflags(write=False)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "R", R)

    @property
    def K(self) -> int:
        return self.D.shape[0]

    @property
    def L(self) -> int:
        return self.D.shape[1]

    @property
    def expected_payoffs(self) -> np.ndarray:
        return self.R @ self.p

    @property
    def redundancy_free(self) -> bool:
        """True when the relative payoff vectors of the assets are linearly
        independent (numerical rank of R equals K)."""
        return int(np.linalg.matrix_rank(self.R)) == self.K


def market_map(R_row, lambda1, lambda2) -> MonotoneMap:
    R_row = np.asarray(R_row, dtype=float)
    l1 = _strategy(lambda1, R_row.size, "lambda1")
    l2 = _strategy(lambda2, R_row.size, "lambda2")
    if np.array_equal(l1, l2):
        return Identity()
    return MarketMap(R_row, l1, l2)


def build_market_ifs(model: MarketModel, lambda1, lambda2) -> IFSystem:
    """One map per state; ``.degenerate`` flags identical strategies."""
    return IFSystem(tuple(market_map(model.R[:, s], lambda1, lambda2) for s in range(model.L)),
                    model.p)


def kelly_rule(model: MarketModel) -> np.ndarray:
    return model.expected_payoffs


def g_function(lambda1, lambda2, v, r):
    """G(r) = sum_k v_k l1_k / (l1_k r + l2_k (1 - r))."""
    l1, l2, v = (np.asarray(a, dtype=float) for a in (lambda1, lambda2, v))
    rr = np.asarray(r, dtype=float)[..., None]
    return np.sum(v * l1 / (l1 * rr + l2 * (1.0 - rr)), axis=-1)


@dataclass(frozen=True)
class KellyCheck:
    termwise_ok: bool
    aggregate_ok: bool
    g_prime_1: float


def generalized_kelly_check(lambda1, lambda2, v, tol: float = 1e-12) -> KellyCheck:
    """Termwise: each l1_k lies between v_k and l2_k.  Aggregate: G'(1) <= 0."""
    l1, l2, v = (np.asarray(a, dtype=float) for a in (lambda1, lambda2, v))
    lo, hi = np.minimum(v, l2), np.maximum(v, l2)
    termwise = bool(np.all((l1 >= lo - tol) & (l1 <= hi + tol)))
    g1 = float(np.sum(v / l1 * (l2 - l1)))
    aggregate = g1 <= tol
    if termwise and not aggregate:
        raise MarketConsistencyError(f"termwise condition holds but G'(1) = {g1}")
    return KellyCheck(termwise, aggregate, g1)


def drift_bridge(model: MarketModel, lambda1, lambda2, r):
    """Terms of the drift chain at r: (phi, ln sum_s p_s beta_s, ln(1 + ln G / ln r)).

    phi <= the second term by Jensen, and G >= 1 makes the third <= 0.  The
    second term is bounded *below* by the third, not above: Jensen gives
    sum p ln tau <= ln sum p tau, and dividing by ln r < 0 flips it.
    """
    r = np.asarray(r, dtype=float)
    ifs = build_market_ifs(model, lambda1, lambda2)
    betas = np.array([m.interior_beta(r) for m in ifs.maps])
    p = model.p[:, None]
    phi = np.sum(p * np.log(betas), axis=0)
    jensen = np.log(np.sum(p * betas, axis=0))
    G = g_function(lambda1, lambda2, model.expected_payoffs, r)
    bound = np.log1p(np.log(G) / np.log(r))
    return phi, jensen, bound


@dataclass(frozen=True)
class MarketRun:
    """Share paths of an ensemble of runs sharing one model and strategy set."""

    shares: np.ndarray | None  # (runs, T + 1, I), or None when not recorded
    symbols: np.ndarray | None  # (runs, T)
    tail_min: np.ndarray  # (runs, I) over t >= burn_in
    tail_max: np.ndarray
    final: np.ndarray  # (runs, I)
    burn_in: int
    seed: int


def _step(R, lam, r, s):
    """Advance shares r (runs, I) by one period in states s (runs,)."""
    spend = lam[None, :, :] * r[:, :, None]  # (runs, I, K)
    price = spend.sum(axis=1, keepdims=True)
    x = spend / price
    if np.any(np.abs(x.sum(axis=1) - 1.0) > CLEARING_TOL):
        raise MarketConsistencyError("market clearing violated")
    nxt = np.einsum("nik,kn->ni", x, R[:, s])
    nxt[nxt < SHARE_FLOOR] = 0.0
    return nxt / nxt.sum(axis=1, keepdims=True)


def simulate_market(model: MarketModel, strategies, w0, T: int, seed: int = 0, *,
                    runs: int = 1, first_index: int = 0, burn_in: int | None = None,
                    record: bool = True, symbols=None) -> MarketRun:
    """Iterate the share dynamics for ``runs`` independent symbol streams.

    Run j uses the stream keyed by (seed, first_index + j), the same streams
    ``sample_orbit`` uses.  Tail extremes are taken over t >= burn_in
    (default T // 2).
    """
    lam = np.array([_strategy(l, model.K, f"strategy {i}") for i, l in enumerate(strategies)])
    w0 = np.asarray(w0, dtype=float)
    if lam.shape[0] < 2:
        raise ValueError("need at least two investors")
    if w0.shape != (lam.shape[0],) or np.any(~(w0 > 0)):
        raise ValueError("w0 needs one positive wealth per investor")
    if T < 1:
        raise ValueError("T must be >= 1")
    burn_in = T // 2 if burn_in is None else int(burn_in)
    if symbols is None:
        symbols = np.stack([symbol_stream(model.p, T, seed, first_index + j) for j in range(runs)])
    else:
        symbols = np.atleast_2d(np.asarray(symbols, dtype=np.int64))
        runs = symbols.shape[0]
    r = np.tile(w0 / w0.sum(), (runs, 1))
    path = np.empty((runs, T + 1, lam.shape[0])) if record else None
    lo = np.full_like(r, np.inf)
    hi = np.full_like(r, -np.inf)

    def note(t, r):
        if record:
            path[:, t] = r
        if t >= burn_in:
            np.minimum(lo, r, out=lo)
            np.maximum(hi, r, out=hi)

    note(0, r)
    for t in range(T):
        r = _step(model.R, lam, r, symbols[:, t])
        if np.any(np.abs(r.sum(axis=1) - 1.0) > 1e-12):
            raise MarketConsistencyError("shares no longer sum to 1")
        note(t + 1, r)
    return MarketRun(path, symbols if record else None, lo, hi, r, burn_in, seed)


def reconstruct_wealth(model: MarketModel, strategies, w0, shares, symbols):
    """Wealths and asset prices of one recorded run.

    Total wealth after period t is the total payoff of that period's state;
    prices are the total spending on each asset.
    """
    lam = np.asarray(strategies, dtype=float)
    w0 = np.asarray(w0, dtype=float)
    totals = np.concatenate([[w0.sum()], model.D[:, symbols].sum(axis=0)])
    wealth = shares * totals[:, None]
    prices = wealth[:-1] @ lam
    return wealth, prices


@dataclass(frozen=True)
class OutcomeGrade:
    grade: str
    tail_min: float
    tail_max: float


def grade_from_tail(tail_min: float, tail_max: float, extinct: float = 1e-6,
                    dominant: float = 1e-6, survive: float = 1e-3) -> OutcomeGrade:
    if tail_max < extinct:
        g = EXTINCTION
    elif tail_min > 1.0 - dominant:
        g = DOMINATION
    elif tail_max > survive:
        g = SURVIVAL
    else:
        g = UNDECIDED
    return OutcomeGrade(g, float(tail_min), float(tail_max))


def grade_outcome(trajectory, burn_in: int | None = None, **thresholds) -> list[OutcomeGrade]:
    """Grade each investor from a (T + 1, I) share path, or a 1-D path of one
    investor.  The tail starts at ``burn_in`` (default half the path)."""
    x = np.asarray(trajectory, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    start = (x.shape[0] - 1) // 2 if burn_in is None else burn_in
    if not 0 <= start < x.shape[0]:
        raise ValueError("burn-in leaves no tail")
    tail = x[start:]
    return [grade_from_tail(lo, hi, **thresholds) for lo, hi in zip(tail.min(axis=0), tail.max(axis=0))]


def grade_run(run: MarketRun, **thresholds) -> list[list[OutcomeGrade]]:
    """Per run, per investor grades from the streamed tail extremes."""
    return [[grade_from_tail(lo, hi, **thresholds) for lo, hi in zip(los, his)]
            for los, his in zip(run.tail_min, run.tail_max)]


def random_model(rng: np.random.Generator, K: int, L: int) -> MarketModel:
    D = rng.uniform(0.0, 1.0, size=(K, L)) + 0.05
    p = rng.dirichlet(np.ones(L))
    p = np.maximum(p, 0.02)
    p /= p.sum()
    p[-1] = 1.0 - p[:-1].sum()
    return MarketModel(D, p)


def random_strategy(rng: np.random.Generator, K: int) -> np.ndarray:
    lam = rng.dirichlet(np.ones(K)) + 0.01
    return lam / lam.sum()


def shares_from_orbit(states: Sequence[float]) -> np.ndarray:
    """Two-investor share path (r, 1 - r) from a one-dimensional orbit."""
    r = np.asarray(states, dtype=float)
    return np.stack([r, 1.0 - r], axis=1)
