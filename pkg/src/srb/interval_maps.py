"""Strictly increasing maps of the unit interval.

Every map can be evaluated directly (``m(r)``) and in log-odds coordinates
(``m.step_logit(z)`` with ``z = ln(r / (1 - r))``).  The second form never
rounds an interior state onto 0 or 1, which matters when an orbit spends a
long time at distances like ``1e-300`` from an endpoint and then comes back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import optimize

R_MIN = 1e-12
R_MAX = 1.0 - 1e-12
SCAN_CELLS = 10_000
TANGENT_SCREEN = 1e-10
_SNAP = 1e-12


class MapError(ValueError):
    """Invalid map parameters."""


class DomainError(MapError):
    """Argument outside [0, 1], or a map leaving the open interval."""


class UndefinedLimitError(MapError):
    """The exponent has no finite positive limit at the requested endpoint."""


class DegenerateFixedSetError(MapError):
    """The map fixes a whole subinterval (e.g. the identity)."""


def _horner(x, c):
    # same operation order as npoly.polyval, without its per-call overhead
    acc = c[-1] + x * 0.0
    for a in c[-2::-1]:
        acc = a + acc * x
    return acc


def _check_unit(r):
    a = np.asarray(r, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError(f"argument outside [0, 1]: {r!r}")
    return a


def _log1mexp(x):
    """ln(1 - exp(x)) for x <= 0, accurate over the whole range."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > -math.log(2.0), np.log(-np.expm1(x)), np.log1p(-np.exp(x)))


def softplus(x):
    """ln(1 + e^x) without overflow (np.logaddexp is several times slower)."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def logit_parts(z):
    """Return (ln r, ln(1 - r)) for r = expit(z), stable for |z| up to inf."""
    z = np.asarray(z, dtype=float)
    e = np.log1p(np.exp(-np.abs(z)))
    return -(np.maximum(-z, 0.0) + e), -(np.maximum(z, 0.0) + e)


def logit(r):
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(r) - np.log1p(-r)


class MonotoneMap:
    """Base class; subclasses implement ``__call__`` and ``log_pair``."""

    kind = "abstract"

    def __call__(self, r):
        raise NotImplementedError

    def log_pair(self, lr, l1r):
        """Map (ln r, ln(1-r)) to (ln tau(r), ln(1-tau(r)))."""
        raise NotImplementedError

    def step_logit(self, z):
        with np.errstate(all="ignore"):
            lt, l1t = self.log_pair(*logit_parts(z))
            return lt - l1t

    def beta_limits(self) -> tuple[float, float]:
        """Limits of the exponent at 0+ and 1- (may be 0.0 or inf)."""
        raise NotImplementedError

    def interior_beta(self, r):
        """ln tau(r) / ln r for r strictly inside (0, 1)."""
        r = np.asarray(r, dtype=float)
        with np.errstate(all="ignore"):
            lr = np.log(r)
            lt, _ = self.log_pair(lr, np.log1p(-r))
        if np.any(~np.isfinite(lt)) or np.any(lt >= 0.0):
            raise DomainError(f"{self.kind} map sends an interior point to an endpoint")
        return lt / lr

    @property
    def fixes_endpoints(self) -> bool:
        lo, hi = self(np.array([0.0, 1.0]))
        return lo == 0.0 and hi == 1.0

    def to_dict(self) -> dict:
        raise NotImplementedError


class Identity(MonotoneMap):
    kind = "identity"

    def __call__(self, r):
        return np.array(_check_unit(r), dtype=float)

    def log_pair(self, lr, l1r):
        return np.asarray(lr, dtype=float), np.asarray(l1r, dtype=float)

    def step_logit(self, z):
        return np.array(z, dtype=float)

    def beta_limits(self):
        return 1.0, 1.0

    def interior_beta(self, r):
        return np.ones_like(np.asarray(r, dtype=float))

    def to_dict(self):
        return {"kind": "identity"}

    def __eq__(self, other):
        return isinstance(other, Identity)

    def __hash__(self):
        return hash("identity")

    def __repr__(self):
        return "Identity()"


@dataclass(frozen=True, eq=False)
class PowerMap(MonotoneMap):
    """tau(r) = r ** beta."""

    beta: float
    kind = "power"

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise MapError(f"power exponent must be positive, got {self.beta}")

    def __call__(self, r):
        return _check_unit(r) ** self.beta

    def log_pair(self, lr, l1r):
        lr = np.asarray(lr, dtype=float)
        l1r = np.asarray(l1r, dtype=float)
        b = self.beta
        lt = b * lr
        u = np.exp(l1r)
        # near 1: 1 - (1-u)^b = b*u*(1 - (b-1)u/2 + ...)
        with np.errstate(divide="ignore", invalid="ignore"):
            near = math.log(b) + l1r + np.log1p(-(b - 1.0) * u / 2.0)
        l1t = np.where(l1r < -20.0, near, _log1mexp(lt))
        return lt, l1t

    def beta_limits(self):
        return self.beta, self.beta

    def interior_beta(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.beta)

    def to_dict(self):
        return {"kind": "power", "beta": self.beta}


@dataclass(frozen=True, eq=False)
class MarketMap(MonotoneMap):
    """Wealth-share update of investor 1 against investor 2 in one state.

    tau(r) = sum_k R_k * l1_k r / (l1_k r + l2_k (1 - r))
    """

    R: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    kind = "market"

    def __post_init__(self):
        R, l1, l2 = (np.array(v, dtype=float) for v in (self.R, self.lambda1, self.lambda2))
        if not (R.ndim == l1.ndim == l2.ndim == 1 and R.size == l1.size == l2.size >= 1):
            raise MapError("payoff row and strategies must be vectors of equal length")
        if np.any(R < 0) or not math.isclose(R.sum(), 1.0, abs_tol=1e-9):
            raise MapError("relative payoff row must be nonnegative and sum to 1")
        for name, lam in (("lambda1", l1), ("lambda2", l2)):
            if np.any(~(lam > 0)):
                raise MapError(f"{name} must be strictly positive (completely mixed)")
            if not math.isclose(lam.sum(), 1.0, abs_tol=1e-9):
                raise MapError(f"{name} must sum to 1")
        for name, v in (("R", R), ("lambda1", l1), ("lambda2", l2)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __call__(self, r):
        r = _check_unit(r)
        rr = r[..., None]
        lam = self.lambda1 * rr + self.lambda2 * (1.0 - rr)
        low = np.sum(self.R * self.lambda1 * rr / lam, axis=-1)
        high = 1.0 - np.sum(self.R * self.lambda2 * (1.0 - rr) / lam, axis=-1)
        return np.where(r <= 0.5, low, high)

    def log_pair(self, lr, l1r):
        lr = np.asarray(lr, dtype=float)[..., None]
        l1r = np.asarray(l1r, dtype=float)[..., None]
        with np.errstate(divide="ignore"):
            lR = np.log(self.R)
        ll1 = np.log(self.lambda1)
        ll2 = np.log(self.lambda2)
        lam = np.logaddexp(ll1 + lr, ll2 + l1r)
        lt = np.logaddexp.reduce(lR + ll1 + lr - lam, axis=-1)
        l1t = np.logaddexp.reduce(lR + ll2 + l1r - lam, axis=-1)
        # whichever of tau, 1 - tau is below 1/2 is accurate; derive the other
        half = -math.log(2.0)
        return (np.where(l1t < half, _log1mexp(l1t), lt),
                np.where(lt < half, _log1mexp(lt), l1t))

    def beta_limits(self):
        return 1.0, float(np.sum(self.R * self.lambda2 / self.lambda1))

    def exponent_envelope(self, r):
        """Value the exponent takes at any of its interior critical points.

        Its min/max over a set bound the exponent there from below/above.
        """
        rr = np.asarray(r, dtype=float)[..., None]
        lam = self.lambda1 * rr + self.lambda2 * (1.0 - rr)
        num = np.sum(self.R * self.lambda1 * self.lambda2 / lam**2, axis=-1)
        den = np.sum(self.R * self.lambda1 / lam, axis=-1)
        return num / den

    def to_dict(self):
        return {"kind": "market", "R": self.R.tolist(),
                "lambda1": self.lambda1.tolist(), "lambda2": self.lambda2.tolist()}


def _snap(c):
    c = np.array(c, dtype=float)
    scale = max(1.0, float(np.max(np.abs(c)))) if c.size else 1.0
    c[np.abs(c) <= _SNAP * scale] = 0.0
    return c


def _lowest_order(c) -> int:
    nz = np.flatnonzero(c)
    if nz.size == 0:
        raise MapError("polynomial piece vanishes identically")
    return int(nz[0])


@dataclass(frozen=True, eq=False)
class PiecewisePolynomial(MonotoneMap):
    """Continuous piecewise polynomial; ``coeffs[i]`` are ascending powers of r
    on ``[breaks[i], breaks[i+1]]``."""

    breaks: np.ndarray
    coeffs: tuple
    kind = "piecewise"

    def __post_init__(self):
        breaks = np.array(self.breaks, dtype=float)
        coeffs = tuple(np.array(c, dtype=float) for c in self.coeffs)
        n = len(coeffs)
        if breaks.ndim != 1 or breaks.size != n + 1 or n == 0:
            raise MapError("need len(breaks) == len(coeffs) + 1 >= 2")
        if breaks[0] != 0.0 or breaks[-1] != 1.0 or np.any(np.diff(breaks) <= 0):
            raise MapError("breaks must increase strictly from 0 to 1")
        for c in coeffs:
            if c.ndim != 1 or c.size == 0 or np.any(~np.isfinite(c)):
                raise MapError("each piece needs a finite coefficient vector")
            c.setflags(write=False)
        breaks.setflags(write=False)
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "coeffs", coeffs)
        low = _snap(coeffs[0])
        # 1 - tau on the last piece, in powers of u = 1 - r
        high = _snap(npoly.polysub([1.0], _compose_one_minus(coeffs[-1])))
        object.__setattr__(self, "_low", low)
        object.__setattr__(self, "_high", high)
        self._validate()
        # one row per piece, then the reduced low and high expansions, zero padded
        j0, j1 = _lowest_order(low), _lowest_order(high)
        rows = list(coeffs) + [low[j0:], high[j1:]]
        table = np.zeros((len(rows), max(c.size for c in rows)))
        for i, c in enumerate(rows):
            table[i, :c.size] = c
        object.__setattr__(self, "_orders", (j0, j1))
        object.__setattr__(self, "_columns", tuple(table[:, k].copy() for k in range(table.shape[1])))

    def _validate(self):
        for i in range(1, len(self.coeffs)):
            x = self.breaks[i]
            left = npoly.polyval(x, self.coeffs[i - 1])
            right = npoly.polyval(x, self.coeffs[i])
            if abs(left - right) > 1e-9:
                raise MapError(f"pieces disagree at r={x}: {left} vs {right}")
        grid = np.union1d(np.linspace(0.0, 1.0, SCAN_CELLS + 1), self.breaks)
        vals = self(grid)
        if np.any(vals < -1e-12) or np.any(vals > 1.0 + 1e-12):
            raise MapError("map leaves [0, 1]")
        if np.any(np.diff(vals) <= 0):
            raise MapError("map is not strictly increasing")

    def _piece(self, r):
        return np.searchsorted(self.breaks[1:-1], r, side="left")

    def _regions(self, r):
        idx = self._piece(r)
        last = len(self.coeffs) - 1
        top = (idx == last) & (r > 0.5)
        bottom = (idx == 0) & ~top
        return idx, bottom, top

    def __call__(self, r):
        r = _check_unit(r)
        out = np.empty_like(r)
        idx, bottom, top = self._regions(r)
        for i, c in enumerate(self.coeffs):
            m = (idx == i) & ~bottom & ~top
            if np.any(m):
                out[m] = _horner(r[m], c)
        out[bottom] = _horner(r[bottom], self._low)
        out[top] = 1.0 - _horner(1.0 - r[top], self._high)
        return out

    def log_pair(self, lr, l1r):
        lr = np.asarray(lr, dtype=float)
        l1r = np.asarray(l1r, dtype=float)
        r = np.exp(lr)
        idx, bottom, top = self._regions(r)
        n = len(self.coeffs)
        row = np.where(bottom, n, np.where(top, n + 1, idx))
        x = np.where(top, np.exp(l1r), r)
        cols = self._columns
        acc = cols[-1][row] + x * 0.0
        for c in cols[-2::-1]:
            acc = c[row] + acc * x
        j0, j1 = self._orders
        with np.errstate(divide="ignore", invalid="ignore"):
            la = np.log(acc)
            lb = la + j0 * lr if j0 else la
            lu = la + j1 * l1r if j1 else la
            # top and bottom are disjoint, so one log1mexp pass serves both
            lm = _log1mexp(np.where(top, lu, lb))
            lt = np.where(top, lm, np.where(bottom, lb, la))
            l1t = np.where(top, lu, np.where(bottom, lm, np.log1p(-acc)))
        return lt, l1t

    def beta_limits(self):
        j0 = _lowest_order(self._low)
        lo = float(j0) if j0 > 0 else 0.0
        j1 = _lowest_order(self._high)
        if j1 == 0:
            hi = math.inf
        elif j1 == 1:
            hi = float(self._high[1])
        else:
            hi = 0.0
        return lo, hi

    def to_dict(self):
        return {"kind": "piecewise", "breaks": self.breaks.tolist(),
                "coeffs": [c.tolist() for c in self.coeffs]}


def _compose_one_minus(c):
    """Coefficients of p(1 - u) in ascending powers of u."""
    out = np.zeros(1)
    base = np.array([1.0])
    for ck in c:
        out = npoly.polyadd(out, ck * base)
        base = npoly.polymul(base, [1.0, -1.0])
    return out


@dataclass(frozen=True)
class FixedPointSet:
    """Sorted fixed points; ``signs[i]`` is the sign of tau(r) - r between
    ``points[i]`` and ``points[i+1]``."""

    points: tuple[float, ...]
    tangent: tuple[bool, ...]
    signs: tuple[int, ...]

    def __len__(self):
        return len(self.points)


def fixed_points(m: MonotoneMap, tol: float = 1e-12, cells: int = SCAN_CELLS) -> FixedPointSet:
    """All solutions of tau(r) = r on [0, 1].

    Sign changes of tau(r) - r on a uniform grid are bracketed and solved;
    grid nodes where |tau(r) - r| < 1e-10 without a sign change are refined
    by minimizing |tau(r) - r| locally and reported as tangential.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if isinstance(m, Identity):
        raise DegenerateFixedSetError("identity map: every point is fixed")
    x = np.linspace(0.0, 1.0, cells + 1)
    g = m(x) - x
    mids = 0.5 * (x[:-1] + x[1:])
    gm = m(mids) - mids
    flat = (np.abs(g[:-1]) <= tol) & (np.abs(g[1:]) <= tol) & (np.abs(gm) <= tol)
    if np.any(flat):
        i = int(np.argmax(flat))
        raise DegenerateFixedSetError(
            f"tau(r) = r on the whole cell [{x[i]:.6g}, {x[i + 1]:.6g}]")

    def gap(r):
        return float(m(r)) - r

    found: list[tuple[float, bool]] = []
    for i in np.flatnonzero(g == 0.0):
        left, right = g[i - 1] if i > 0 else 0.0, g[i + 1] if i < cells else 0.0
        found.append((float(x[i]), bool(left * right > 0)))
    for i in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
        root = optimize.brentq(gap, x[i], x[i + 1], xtol=tol, rtol=4 * np.finfo(float).eps)
        found.append((root, False))
    step = x[1] - x[0]
    for i in np.flatnonzero((np.abs(g) < TANGENT_SCREEN) & (g != 0.0)):
        if any(abs(r - x[i]) <= 1.5 * step for r, _ in found):
            continue
        lo, hi = x[max(i - 1, 0)], x[min(i + 1, cells)]
        res = optimize.minimize_scalar(lambda r: abs(gap(r)), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-14})
        if abs(gap(res.x)) <= max(tol, 1e-14):
            found.append((float(res.x), True))
    found.sort()
    points: list[float] = []
    tangent: list[bool] = []
    for r, t in found:
        if points and r - points[-1] <= 1e-9:
            tangent[-1] = tangent[-1] and t
            continue
        points.append(r)
        tangent.append(t)
    signs = []
    for a, b in zip(points[:-1], points[1:]):
        probe = a + (b - a) * np.array([0.5, 0.25, 0.75, 0.1, 0.9])
        s = np.sign(m(probe) - probe)
        signs.append(int(s[np.flatnonzero(s)[0]]) if np.any(s) else 0)
    return FixedPointSet(tuple(points), tuple(tangent), tuple(signs))


def beta(m: MonotoneMap, r):
    """Exponent beta(r) with tau(r) = r ** beta(r).

    Interior arguments are clamped to [1e-12, 1 - 1e-12]; r in {0, 1}
    returns the analytic one-sided limit.
    """
    a = _check_unit(r)
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)
    lo_lim, hi_lim = m.beta_limits()
    for mask, lim, side in ((a == 0.0, lo_lim, "0+"), (a == 1.0, hi_lim, "1-")):
        if np.any(mask):
            if not (0.0 < lim < math.inf):
                raise UndefinedLimitError(f"exponent limit at {side} is {lim}")
            out[mask] = lim
    inner = (a > 0.0) & (a < 1.0)
    if np.any(inner):
        out[inner] = m.interior_beta(np.clip(a[inner], R_MIN, R_MAX))
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class ExponentProfile:
    """Empirical exponent bounds of one map over a closed set U."""

    U: tuple[float, float]
    limits: tuple[float, float]
    b: float
    B: float
    label: str = "empirical bounds"

    @property
    def bounded(self) -> bool:
        return 0.0 < self.b and self.B < math.inf


def beta_bounds(m: MonotoneMap, U: Sequence[float] = (0.0, 1.0),
                grid_size: int = SCAN_CELLS) -> tuple[float, float]:
    """Grid bounds (b, B) of the exponent on U, including endpoint limits."""
    p = exponent_profile(m, U, grid_size)
    return p.b, p.B


def exponent_profile(m: MonotoneMap, U: Sequence[float] = (0.0, 1.0),
                     grid_size: int = SCAN_CELLS) -> ExponentProfile:
    u0, u1 = float(U[0]), float(U[1])
    if not (0.0 <= u0 <= u1 <= 1.0):
        raise DomainError(f"U must be a subinterval of [0, 1], got {U}")
    if grid_size < 2:
        raise ValueError("grid_size must be at least 2")
    grid = np.linspace(u0, u1, grid_size)
    inner = grid[(grid > 0.0) & (grid < 1.0)]
    values = [m.interior_beta(np.clip(inner, R_MIN, R_MAX))] if inner.size else []
    limits = m.beta_limits()
    if u0 == 0.0:
        values.append(np.array([limits[0]]))
    if u1 == 1.0:
        values.append(np.array([limits[1]]))
    if isinstance(m, MarketMap):
        # beta meets this envelope at each interior extremum, and at 0 and 1
        values.append(m.exponent_envelope(grid))
        if inner.size >= 3:
            values.append(_critical_values(m, inner, values[0]))
    allv = np.concatenate(values)
    return ExponentProfile((u0, u1), limits, float(allv.min()), float(allv.max()))


def _critical_values(m: MarketMap, grid, vals):
    """Refine interior local extrema of the exponent and evaluate there."""
    d = np.diff(vals)
    out = []
    for i in np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0)[:20]:
        lo, hi = grid[i], grid[i + 2]
        sign = 1.0 if d[i] < 0 else -1.0
        res = optimize.minimize_scalar(lambda r: sign * float(m.interior_beta(r)),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        out.append(float(m.interior_beta(res.x)))
        out.append(float(m.exponent_envelope(res.x)))
    return np.array(out)


def map_from_dict(spec: dict) -> MonotoneMap:
    """Build a map from its tagged JSON record."""
    kind = spec.get("kind")
    if kind == "power":
        return PowerMap(float(spec["beta"]))
    if kind == "piecewise":
        return PiecewisePolynomial(spec["breaks"], tuple(spec["coeffs"]))
    if kind == "market":
        if np.allclose(spec["lambda1"], spec["lambda2"], rtol=0, atol=0):
            return Identity()
        return MarketMap(spec["R"], spec["lambda1"], spec["lambda2"])
    if kind == "identity":
        return Identity()
    raise MapError(f"unknown map kind {kind!r}")


def random_piecewise_map(rng: np.random.Generator, pieces: int = 4,
                         spread: float = 0.2) -> PiecewisePolynomial:
    """Random strictly increasing piecewise quadratic fixing 0 and 1.

    Knots scatter around the diagonal so that maps cross it a few times.
    """
    while True:
        xs = np.sort(rng.uniform(0.05, 0.95, pieces - 1))
        ys = np.sort(np.clip(xs + rng.normal(0.0, spread, pieces - 1), 0.02, 0.98))
        xk = np.concatenate(([0.0], xs, [1.0]))
        yk = np.concatenate(([0.0], ys, [1.0]))
        if np.min(np.diff(xk)) > 0.02 and np.min(np.diff(yk)) > 0.01:
            break
    coeffs = []
    for i in range(pieces):
        x0, x1, y0, y1 = xk[i], xk[i + 1], yk[i], yk[i + 1]
        c = rng.uniform(-0.9, 0.9)
        # y0 + (y1 - y0) * q(t), q(t) = t + c t (1 - t), t = (r - x0) / (x1 - x0)
        q = np.array([0.0, 1.0 + c, -c])
        t = np.array([-x0, 1.0]) / (x1 - x0)
        poly = np.zeros(1)
        base = np.array([1.0])
        for qk in q:
            poly = npoly.polyadd(poly, qk * base)
            base = npoly.polymul(base, t)
        poly = npoly.polyadd([y0], (y1 - y0) * poly)
        if i == 0:
            poly[0] = 0.0
        coeffs.append(poly)
    return PiecewisePolynomial(xk, tuple(coeffs))
