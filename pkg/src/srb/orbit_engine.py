"""Random orbits of an iterated function system, Cesaro measures, limits and basins.

States are advanced in log-odds coordinates so that interior points stay
interior; ``Orbit.states`` converts back to [0, 1].
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .interval_maps import Identity, MonotoneMap, logit

ENDPOINT_TOL = 1e-9
OSCILLATION_RANGE = 0.1
DEFAULT_BINS = 2048
MAX_ATOMS = 10**6
CHUNK = 2048


@dataclass(frozen=True)
class IFSystem:
    """Maps tau_1..tau_L applied with probabilities p_1..p_L."""

    maps: tuple
    p: np.ndarray

    def __post_init__(self):
        maps = tuple(self.maps)
        p = np.array(self.p, dtype=float)
        if not maps:
            raise ValueError("an IFS needs at least one map")
        if not all(isinstance(m, MonotoneMap) for m in maps):
            raise TypeError("maps must be MonotoneMap instances")
        if p.shape != (len(maps),):
            raise ValueError(f"p has {p.size} entries for {len(maps)} maps")
        if np.any(~(p > 0)):
            raise ValueError("p must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"p must sum to 1, sums to {p.sum():.15g}")
        p.setflags(write=False)
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "p", p)

    @property
    def L(self) -> int:
        return len(self.maps)

    @property
    def fixes_endpoints(self) -> bool:
        return all(m.fixes_endpoints for m in self.maps)

    @property
    def degenerate(self) -> bool:
        return any(isinstance(m, Identity) for m in self.maps)

    def step_logit(self, z: np.ndarray, symbols: np.ndarray) -> np.ndarray:
        out = np.array(z, dtype=float)
        for s, m in enumerate(self.maps):
            mask = symbols == s
            if mask.any():
                out[mask] = m.step_logit(out[mask])
        return out

    def to_dict(self) -> dict:
        return {"maps": [m.to_dict() for m in self.maps], "p": self.p.tolist()}


def generator(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream keyed by (seed, index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def symbol_stream(p: Sequence[float], T: int, seed: int, index: int = 0) -> np.ndarray:
    """i.i.d. symbols 0..L-1 with law p, reproducible from (seed, index)."""
    p = np.asarray(p, dtype=float)
    return generator(seed, index).choice(p.size, size=T, p=p).astype(np.int64)


@dataclass(frozen=True)
class Orbit:
    r0: float
    symbols: np.ndarray
    log_odds: np.ndarray
    seed: int | None

    @property
    def T(self) -> int:
        return int(self.symbols.size)

    @property
    def states(self) -> np.ndarray:
        r = expit(self.log_odds)
        r[0] = self.r0
        return r

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "symbol", "state"])
            states = self.states
            w.writerow([0, "", repr(float(states[0]))])
            for t in range(1, states.size):
                w.writerow([t, int(self.symbols[t - 1]), repr(float(states[t]))])


def _check_r0(r0) -> float:
    r0 = float(r0)
    if not 0.0 <= r0 <= 1.0:
        raise ValueError(f"r0 must lie in [0, 1], got {r0}")
    return r0


def sample_orbit(ifs: IFSystem, r0: float, T: int, seed: int = 0, *,
                 symbols: Sequence[int] | None = None, index: int = 0) -> Orbit:
    """Run one orbit for T steps; ``symbols`` forces the map sequence."""
    r0 = _check_r0(r0)
    if symbols is None:
        if T < 1:
            raise ValueError("T must be at least 1")
        sym = symbol_stream(ifs.p, T, seed, index)
    else:
        sym = np.asarray(symbols, dtype=np.int64)
        if sym.ndim != 1 or np.any(sym < 0) or np.any(sym >= ifs.L):
            raise ValueError("forced symbols must be indices 0..L-1")
        seed = None
    z = np.empty(sym.size + 1)
    z[0] = logit(r0)
    cur = np.array([z[0]])
    maps = ifs.maps
    for t, s in enumerate(sym):
        cur = maps[s].step_logit(cur)
        z[t + 1] = cur[0]
    return Orbit(r0, sym, z, seed)


@dataclass(frozen=True)
class LimitVerdict:
    kind: str  # "converges" | "oscillating" | "undecided"
    x: float | None
    tail_mean: float
    tail_range: float
    occupation: float

    @property
    def converges(self) -> bool:
        return self.kind == "converges"


def _verdict(lo: float, hi: float, last: float, mean: float, eps: float,
             occupation: float = math.nan) -> LimitVerdict:
    rng = hi - lo
    if hi < ENDPOINT_TOL:
        return LimitVerdict("converges", 0.0, mean, rng, 1.0)
    if lo > 1.0 - ENDPOINT_TOL:
        return LimitVerdict("converges", 1.0, mean, rng, 1.0)
    if rng < eps:
        return LimitVerdict("converges", last, mean, rng, 1.0)
    kind = "oscillating" if rng > OSCILLATION_RANGE else "undecided"
    return LimitVerdict(kind, None, mean, rng, occupation)


def tail_length(n_states: int, tail_fraction: float) -> int:
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    return max(1, int(math.ceil(tail_fraction * n_states)))


def detect_limit(orbit: Orbit, tail_fraction: float = 0.01, eps: float = 1e-6) -> LimitVerdict:
    """Classify the tail of an orbit.

    Converges to x when the last ``tail_fraction`` of the states stays in a
    window narrower than ``eps`` (or within 1e-9 of an endpoint), oscillating
    when the tail spans more than 0.1, undecided otherwise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    states = orbit.states
    tail = states[-tail_length(states.size, tail_fraction):]
    last = float(tail[-1])
    occ = float(np.mean(np.abs(tail - last) < eps))
    return _verdict(float(tail.min()), float(tail.max()), last, float(tail.mean()), eps, occ)


@dataclass(frozen=True)
class TailStats:
    """Per-orbit tail summaries of an ensemble."""

    r0: np.ndarray
    last: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray

    def verdicts(self, eps: float = 1e-6) -> list[LimitVerdict]:
        return [_verdict(lo, hi, last, mean, eps)
                for lo, hi, last, mean in zip(self.lo, self.hi, self.last, self.mean)]


def _run_chunk(ifs, r0s, T, seed, first_index, tail):
    n = r0s.size
    sym = np.empty((n, T), dtype=np.int64)
    for j in range(n):
        sym[j] = symbol_stream(ifs.p, T, seed, first_index + j)
    z = logit(r0s)
    lo = np.full(n, np.inf)
    hi = np.full(n, -np.inf)
    acc = np.zeros(n)
    start = T + 1 - tail
    if start <= 0:
        r = r0s.copy()
        lo, hi, acc = np.minimum(lo, r), np.maximum(hi, r), acc + r
    for t in range(T):
        z = ifs.step_logit(z, sym[:, t])
        if t + 1 >= start:
            r = expit(z)
            np.minimum(lo, r, out=lo)
            np.maximum(hi, r, out=hi)
            acc += r
    return expit(z), lo, hi, acc / tail


def ensemble_tails(ifs: IFSystem, r0s: Sequence[float], T: int, seed: int = 0, *,
                   tail_fraction: float = 0.01, first_index: int = 0,
                   workers: int | None = None) -> TailStats:
    """Run orbit i from r0s[i] on stream (seed, first_index + i); keep tail summaries."""
    r0s = np.array([_check_r0(r) for r in np.ravel(r0s)], dtype=float)
    if T < 1:
        raise ValueError("T must be at least 1")
    tail = tail_length(T + 1, tail_fraction)
    chunks = [(i, r0s[i:i + CHUNK]) for i in range(0, r0s.size, CHUNK)]

    def job(c):
        i, part = c
        return _run_chunk(ifs, part, T, seed, first_index + i, tail)

    if workers and workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    last, lo, hi, mean = (np.concatenate(x) if parts else np.empty(0) for x in zip(*parts))
    return TailStats(r0s, last, lo, hi, mean)


# -- empirical measures ------------------------------------------------------


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Either weighted atoms, or bin masses on a uniform partition of [0, 1]
    (mass spread uniformly inside each bin)."""

    atoms: np.ndarray | None = None
    weights: np.ndarray | None = None
    masses: np.ndarray | None = None

    def __post_init__(self):
        if (self.atoms is None) == (self.masses is None):
            raise ValueError("give either atoms+weights or bin masses")
        if self.atoms is not None:
            a = np.asarray(self.atoms, dtype=float)
            w = np.asarray(self.weights, dtype=float)
            if a.shape != w.shape or np.any(a < 0) or np.any(a > 1) or np.any(w < 0):
                raise ValueError("atoms must lie in [0, 1] with nonnegative weights")
            order = np.argsort(a, kind="stable")
            object.__setattr__(self, "atoms", a[order])
            object.__setattr__(self, "weights", w[order])
        else:
            m = np.asarray(self.masses, dtype=float)
            if m.ndim != 1 or m.size == 0 or np.any(m < 0):
                raise ValueError("bin masses must be a nonnegative vector")
            object.__setattr__(self, "masses", m)

    @classmethod
    def from_samples(cls, samples, weights=None) -> "EmpiricalMeasure":
        s = np.asarray(samples, dtype=float).ravel()
        if s.size == 0:
            raise ValueError("need at least one sample")
        w = np.full(s.size, 1.0 / s.size) if weights is None else np.asarray(weights, float)
        if s.size > MAX_ATOMS:
            return cls(masses=_bin(s, w, DEFAULT_BINS))
        return cls(atoms=s, weights=w)

    @classmethod
    def delta(cls, x: float) -> "EmpiricalMeasure":
        return cls(atoms=np.array([float(x)]), weights=np.array([1.0]))

    @classmethod
    def uniform(cls, bins: int = DEFAULT_BINS) -> "EmpiricalMeasure":
        return cls(masses=np.full(bins, 1.0 / bins))

    @property
    def is_histogram(self) -> bool:
        return self.masses is not None

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.masses if self.is_histogram else self.weights))

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.masses.size + 1)

    def histogram(self, bins: int = DEFAULT_BINS) -> np.ndarray:
        if self.is_histogram and self.masses.size == bins:
            return self.masses.copy()
        if self.is_histogram:
            centers = 0.5 * (self.edges[:-1] + self.edges[1:])
            return _bin(centers, self.masses, bins)
        return _bin(self.atoms, self.weights, bins)

    def cdf(self, x, left: bool = False):
        """F(x) = mass of [0, x]; with ``left`` the mass of [0, x)."""
        x = np.asarray(x, dtype=float)
        if self.is_histogram:
            cum = np.concatenate(([0.0], np.cumsum(self.masses)))
            return np.interp(x, self.edges, cum)
        cum = np.concatenate(([0.0], np.cumsum(self.weights)))
        side = "left" if left else "right"
        return cum[np.searchsorted(self.atoms, x, side=side)]

    def breakpoints(self) -> np.ndarray:
        return self.edges if self.is_histogram else self.atoms

    def mass_within(self, x: float, radius: float) -> float:
        lo, hi = max(0.0, x - radius), min(1.0, x + radius)
        return float(self.cdf(hi) - self.cdf(lo, left=True))

    def merged(self) -> "EmpiricalMeasure":
        if self.is_histogram:
            return self
        u, inv = np.unique(self.atoms, return_inverse=True)
        return EmpiricalMeasure(atoms=u, weights=np.bincount(inv, weights=self.weights))


def _bin(x, w, bins):
    idx = np.minimum((np.asarray(x) * bins).astype(np.int64), bins - 1)
    return np.bincount(idx, weights=w, minlength=bins)


def empirical_measure(orbit: Orbit) -> EmpiricalMeasure:
    """Cesaro average of point masses at r_0 .. r_{T-1}."""
    states = orbit.states
    head = states[:-1] if states.size > 1 else states
    return EmpiricalMeasure.from_samples(head)


def mixture(measures: Sequence[EmpiricalMeasure], weights: Sequence[float]) -> EmpiricalMeasure:
    w = np.asarray(weights, dtype=float)
    if any(m.is_histogram for m in measures):
        return EmpiricalMeasure(masses=sum(wi * m.histogram() for wi, m in zip(w, measures)))
    return EmpiricalMeasure(atoms=np.concatenate([m.atoms for m in measures]),
                            weights=np.concatenate([wi * m.weights for wi, m in zip(w, measures)]))


def weak_distance(m1: EmpiricalMeasure, m2: EmpiricalMeasure) -> float:
    """Kolmogorov distance sup_x |F1(x) - F2(x)|."""
    xs = np.unique(np.concatenate(([0.0, 1.0], m1.breakpoints(), m2.breakpoints())))
    right = np.abs(m1.cdf(xs) - m2.cdf(xs))
    left = np.abs(m1.cdf(xs, left=True) - m2.cdf(xs, left=True))
    return float(max(right.max(), left.max()))


def push_forward(ifs: IFSystem, m: EmpiricalMeasure) -> EmpiricalMeasure:
    """One step of the transition operator: (P m)(A) = sum_s p_s m(tau_s^-1 A)."""
    if m.is_histogram:
        n = m.masses.size
        centers = (np.arange(n) + 0.5) / n
        out = np.zeros(n)
        for ps, tau in zip(ifs.p, ifs.maps):
            out += _bin(tau(centers), ps * m.masses, n)
        return EmpiricalMeasure(masses=out)
    atoms = np.concatenate([tau(m.atoms) for tau in ifs.maps])
    weights = np.concatenate([ps * m.weights for ps in ifs.p])
    pushed = EmpiricalMeasure(atoms=atoms, weights=weights).merged()
    if pushed.atoms.size > MAX_ATOMS:
        return EmpiricalMeasure(masses=pushed.histogram())
    return pushed


# -- basins ------------------------------------------------------------------


@dataclass(frozen=True)
class BasinScan:
    target: float
    r0: np.ndarray
    freq: np.ndarray
    threshold: float
    hull: tuple[float, float] | None
    contiguous: bool
    limits: np.ndarray = field(repr=False)

    @property
    def members(self) -> np.ndarray:
        return self.freq >= self.threshold

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["r0", "freq_to_target", "hull_member"])
            for r, f, m in zip(self.r0, self.freq, self.members):
                w.writerow([repr(float(r)), repr(float(f)), int(m)])


def limit_table(ifs: IFSystem, grid: int, seeds_per_point: int, T: int, seed: int = 0, *,
                tail_fraction: float = 0.01, eps: float = 1e-6,
                workers: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Limit points (nan where no convergence) for every grid point and seed."""
    if grid < 3:
        raise ValueError("grid must be at least 3")
    if seeds_per_point < 1:
        raise ValueError("seeds_per_point must be at least 1")
    r0 = np.linspace(0.0, 1.0, grid)
    stats = ensemble_tails(ifs, np.repeat(r0, seeds_per_point), T, seed,
                           tail_fraction=tail_fraction, workers=workers)
    lim = np.array([v.x if v.converges else np.nan for v in stats.verdicts(eps)])
    return r0, lim.reshape(grid, seeds_per_point)


def basin_from_limits(r0: np.ndarray, limits: np.ndarray, target: float, eps: float = 1e-6,
                      threshold: float = 0.99) -> BasinScan:
    with np.errstate(invalid="ignore"):
        freq = np.mean(np.abs(limits - target) < eps, axis=1)
    idx = np.flatnonzero(freq >= threshold)
    hull = (float(r0[idx[0]]), float(r0[idx[-1]])) if idx.size else None
    contiguous = bool(idx.size == 0 or idx[-1] - idx[0] + 1 == idx.size)
    return BasinScan(float(target), r0, freq, threshold, hull, contiguous, limits)


def scan_basin(ifs: IFSystem, target: float, grid: int = 101, seeds_per_point: int = 50,
               T: int = 10_000, seed: int = 0, *, tail_fraction: float = 0.01,
               eps: float = 1e-6, threshold: float = 0.99,
               workers: int | None = None) -> BasinScan:
    """Convergence frequency to ``target`` over a uniform grid of initial points.

    The hull is the smallest interval containing every grid point whose
    frequency reaches ``threshold``.
    """
    r0, lim = limit_table(ifs, grid, seeds_per_point, T, seed,
                          tail_fraction=tail_fraction, eps=eps, workers=workers)
    return basin_from_limits(r0, lim, target, eps, threshold)


def detected_targets(r0: np.ndarray, limits: np.ndarray, eps: float = 1e-6,
                     threshold: float = 0.99) -> list[float]:
    """Distinct limit points that attract some grid point with frequency >= threshold."""
    targets: list[float] = []
    for row in limits:
        vals = row[np.isfinite(row)]
        if vals.size < threshold * row.size:
            continue
        for x in np.unique(vals):
            if np.mean(np.abs(row - x) < eps) >= threshold:
                if not any(abs(x - t) < eps for t in targets):
                    targets.append(float(x))
                break
    return sorted(targets)
