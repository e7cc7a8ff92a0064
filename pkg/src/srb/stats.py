"""Martingale diagnostics of the exponent process and arcsine-law checks.

Along an orbit r_t = r_0 ** alpha(t) with alpha(t) the product of the
per-step exponents beta_{s_t}(r_{t-1}).  Its logarithm is a sum whose
conditional mean phi(r) and variance depend only on the current state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .orbit_engine import IFSystem, Orbit, generator, symbol_stream
from .interval_maps import logit, softplus


def _log_neg_log_r(z):
    """ln(-ln r) for r = expit(z), accurate in both tails."""
    x = -np.asarray(z, dtype=float)  # -ln r = softplus(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        direct = np.log(softplus(np.maximum(x, -30.0)))
        # softplus(x) = e^x (1 - e^x / 2 + ...) deep in the left tail
        tail = x + np.log1p(-0.5 * np.exp(np.minimum(x, -30.0)))
    return np.where(x < -30.0, tail, direct)


def _log_betas(ifs: IFSystem, z, images=None):
    """ln beta_s at states with log-odds z; shape (L,) + z.shape."""
    if images is None:
        images = np.stack([m.step_logit(z) for m in ifs.maps])
    return _log_neg_log_r(images) - _log_neg_log_r(z)


@dataclass(frozen=True)
class ExponentSeries:
    symbols: np.ndarray
    log_alpha_steps: np.ndarray  # ln alpha_t, t = 1..n
    phi: np.ndarray  # phi(r_{t-1})
    cond_var: np.ndarray  # var_s ln beta_s(r_{t-1})
    truncated_at: int | None  # first t whose state is exactly 0 or 1

    @property
    def log_alpha(self) -> np.ndarray:
        """ln alpha(t) for t = 0..n."""
        return np.concatenate([[0.0], np.cumsum(self.log_alpha_steps)])

    @property
    def M(self) -> np.ndarray:
        return self.log_alpha_steps - self.phi

    @property
    def truncated(self) -> bool:
        return self.truncated_at is not None


def exponent_series(orbit: Orbit, ifs: IFSystem) -> ExponentSeries:
    """Per-step exponents of an orbit started in (0, 1).

    The series stops before the first state that rounds onto 0 or 1.
    """
    if not 0.0 < orbit.r0 < 1.0:
        raise ValueError("the exponent series needs r0 in (0, 1)")
    z = orbit.log_odds
    bad = np.flatnonzero(~np.isfinite(z))
    cut = int(bad[0]) if bad.size else None
    n = (z.size - 1) if cut is None else cut - 1
    zprev = z[:n]
    sym = orbit.symbols[:n]
    p = ifs.p[:, None]
    # unbounded exponents near an endpoint give an infinite variance
    with np.errstate(invalid="ignore", over="ignore"):
        lb = _log_betas(ifs, zprev)
        phi = np.sum(p * lb, axis=0)
        var = np.maximum(np.sum(p * lb**2, axis=0) - phi**2, 0.0)
    steps = lb[sym, np.arange(n)]
    return ExponentSeries(sym, steps, phi, var, cut)


@dataclass(frozen=True)
class EnsembleMeans:
    """Running Cesaro means (1/t) sum M_i at checkpoints for many paths."""

    checkpoints: np.ndarray
    means: np.ndarray  # (paths, checkpoints), nan after truncation
    max_drift: np.ndarray  # per path, max phi seen
    truncated: np.ndarray  # bool per path


def ensemble_centered_means(ifs: IFSystem, r0: float, T: int, paths: int, seed: int = 0,
                            checkpoints: Sequence[int] | None = None,
                            first_index: int = 0) -> EnsembleMeans:
    """Stream the centred exponent sums of ``paths`` orbits in lock-step.

    Path j uses the symbol stream (seed, first_index + j).  A path whose
    state rounds onto 0 or 1 is frozen and its later checkpoints are nan.
    """
    if not 0.0 < r0 < 1.0:
        raise ValueError("r0 must lie in (0, 1)")
    cps = np.unique(np.asarray(checkpoints if checkpoints is not None else [T], dtype=int))
    if cps[0] < 1 or cps[-1] > T:
        raise ValueError("checkpoints must lie in 1..T")
    sym = np.stack([symbol_stream(ifs.p, T, seed, first_index + j) for j in range(paths)])
    z = np.full(paths, logit(r0))
    alive = np.ones(paths, dtype=bool)
    acc = np.zeros(paths)
    means = np.full((paths, cps.size), np.nan)
    top = np.full(paths, -np.inf)
    p = ifs.p[:, None]
    cols = np.arange(paths)
    k = 0
    for t in range(1, T + 1):
        s = sym[:, t - 1]
        images = np.stack([mp.step_logit(z) for mp in ifs.maps])
        with np.errstate(invalid="ignore"):
            lb = _log_betas(ifs, z, images)
            phi = np.sum(p * lb, axis=0)
            m = lb[s, cols] - phi
        z_next = images[s, cols]
        ok = alive & np.isfinite(z_next) & np.isfinite(m)
        acc[ok] += m[ok]
        np.maximum(top, np.where(ok, phi, -np.inf), out=top)
        alive = ok
        z = np.where(alive, z_next, 0.0)
        if t == cps[k]:
            means[alive, k] = acc[alive] / t
            k += 1
            if k == cps.size:
                break
    return EnsembleMeans(cps, means, top, ~alive)


def slln_check(M, checkpoints: Sequence[int]) -> np.ndarray:
    """Cesaro means (1/t) sum_{i<=t} M_i at each checkpoint, per path."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    cps = np.asarray(checkpoints, dtype=int)
    if np.any(cps < 1) or np.any(cps > M.shape[1]):
        raise ValueError("checkpoints must lie in 1..len(M)")
    return np.cumsum(M, axis=1)[:, cps - 1] / cps


def coin_flip_differences(paths: int, length: int, seed: int = 0, first_index: int = 0) -> np.ndarray:
    """Symmetric +-1 steps; row j comes from stream (seed, first_index + j)."""
    out = np.empty((paths, length), dtype=np.int8)
    for j in range(paths):
        out[j] = 2 * generator(seed, first_index + j).integers(0, 2, size=length, dtype=np.int8) - 1
    return out


@dataclass(frozen=True)
class ArcsineSample:
    n: float
    L: np.ndarray  # L_n per retained path
    pos_fraction: np.ndarray  # share of i <= T_n with S_i > 0
    T_n: np.ndarray
    excluded: int  # paths whose v_m never reached n
    ks: float  # Kolmogorov distance of L to the arcsine law on [0, 1]
    ks_pvalue: float


def arcsine_statistic(X, cond_var, n: float) -> ArcsineSample:
    """L_n = (1/n) sum_{i <= T_n} E(X_i^2 | past) [S_i > 0], T_n = min{m : v_m >= n}.

    ``cond_var`` is a scalar (constant conditional variance) or an array
    shaped like X.
    """
    X = np.atleast_2d(np.asarray(X))
    paths, m = X.shape
    cv = np.broadcast_to(np.asarray(cond_var, dtype=float), X.shape)
    Ls, pos, Tn = [], [], []
    for j in range(paths):
        v = np.cumsum(cv[j])
        k = int(np.searchsorted(v, n, side="left"))
        if k >= m:
            continue
        S = np.cumsum(X[j, :k + 1], dtype=np.int64 if X.dtype.kind in "iu" else float)
        plus = S > 0
        Ls.append(float(np.sum(cv[j, :k + 1][plus])) / n)
        pos.append(float(np.mean(plus)))
        Tn.append(k + 1)
    L = np.array(Ls)
    if L.size:
        res = sps.kstest(L, sps.arcsine.cdf)
        ks, pv = float(res.statistic), float(res.pvalue)
    else:
        ks, pv = math.nan, math.nan
    return ArcsineSample(float(n), L, np.array(pos), np.array(Tn, dtype=int), paths - L.size, ks, pv)


def arcsine_cdf(x):
    """(2/pi) arcsin sqrt(x) on [0, 1], clipped outside."""
    return sps.arcsine.cdf(x)


def positive_fraction_bound(pos_fraction, a: float, d: float = 1.0, D: float = 1.0) -> tuple[float, float]:
    """Empirical Pr(Pos/n <= a) and the lower bound (1/pi) arcsin sqrt(a d / D)."""
    pos_fraction = np.asarray(pos_fraction, dtype=float)
    if not 0 < d <= D:
        raise ValueError("need 0 < d <= D")
    emp = float(np.mean(pos_fraction <= a)) if pos_fraction.size else math.nan
    bound = math.asin(math.sqrt(min(max(a * d / D, 0.0), 1.0))) / math.pi
    return emp, bound
