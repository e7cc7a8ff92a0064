"""Which point masses (and separated invariant measures) are SRB for an IFS.

Three kinds of evidence are combined:

* the drift phi(r) = sum_s p_s ln beta_s(r) of the log-exponent process and
  the conditional variance of ln beta;
* the down/up graphs on the intervals between consecutive fixed points of
  each map;
* the set of candidate basin intervals whose endpoints pass the one-sided
  fixed-point tests, whose size bounds the number of SRB measures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .interval_maps import (DegenerateFixedSetError, ExponentProfile, exponent_profile,
                            fixed_points)
from .orbit_engine import IFSystem

SRB = "SRB"
NOT_SRB = "NotSRB"
SEPARATED = "ExistsInvariantSeparated"
UNKNOWN = "Unknown"

DRIFT_TOL = 1e-12
VARIANCE_FLOOR_MIN = 1e-8
POINT_TOL = 1e-9


class ConsistencyError(RuntimeError):
    """Two rules reached opposite verdicts for the same measure."""


@dataclass(frozen=True)
class IntervalVertex:
    map_index: int
    left: float
    right: float
    up: bool

    @property
    def orientation(self) -> str:
        return "up" if self.up else "down"

    def label(self) -> str:
        return f"{'U' if self.up else 'D'}{self.map_index}({self.left:.6g},{self.right:.6g})"


@dataclass(frozen=True)
class VertexGraph:
    vertices: tuple[IntervalVertex, ...]
    edges: frozenset[tuple[int, int]]
    direction: str  # "down" or "up"

    def out_degree(self, i: int) -> int:
        return sum(1 for a, _ in self.edges if a == i)

    def in_degree(self, i: int) -> int:
        return sum(1 for _, b in self.edges if b == i)

    def sources(self) -> list[int]:
        return [i for i in range(len(self.vertices)) if self.in_degree(i) == 0]

    def sinks(self) -> list[int]:
        return [i for i in range(len(self.vertices)) if self.out_degree(i) == 0]

    def edge_list(self) -> str:
        """One ``source target`` pair of vertex labels per line."""
        lines = [f"{self.vertices[a].label()} {self.vertices[b].label()}"
                 for a, b in sorted(self.edges)]
        return "\n".join(lines) + ("\n" if lines else "")

    def to_dict(self) -> dict:
        return {"vertices": [v.label() for v in self.vertices],
                "edges": [[self.vertices[a].label(), self.vertices[b].label()]
                          for a, b in sorted(self.edges)]}


def build_vertices(ifs: IFSystem, tol: float = 1e-12) -> list[IntervalVertex]:
    """One vertex per pair of consecutive fixed points of each map."""
    out = []
    for s, m in enumerate(ifs.maps):
        fp = fixed_points(m, tol)
        for (a, b), sign in zip(zip(fp.points[:-1], fp.points[1:]), fp.signs):
            if sign == 0:
                raise DegenerateFixedSetError(f"map {s} has no sign on ({a}, {b})")
            out.append(IntervalVertex(s, a, b, sign > 0))
    return out


def build_graph(vertices, direction: str) -> VertexGraph:
    """Down graph: D-vertex (a, b) -> any vertex whose right end lies in (a, b).
    Up graph: U-vertex (a, b) -> any vertex whose left end lies in (a, b)."""
    if direction not in ("down", "up"):
        raise ValueError("direction must be 'down' or 'up'")
    vertices = tuple(vertices)
    edges = set()
    for i, v in enumerate(vertices):
        if v.up != (direction == "up"):
            continue
        for j, w in enumerate(vertices):
            end = w.right if direction == "down" else w.left
            if v.left < end < v.right:
                edges.add((i, j))
    g = VertexGraph(vertices, frozenset(edges), direction)
    _check_graph(g)
    return g


def _check_graph(g: VertexGraph) -> None:
    for a, b in g.edges:
        if g.vertices[a].map_index == g.vertices[b].map_index:
            raise ConsistencyError(f"same-map edge {g.vertices[a].label()} -> {g.vertices[b].label()}")
        if g.vertices[a].up != (g.direction == "up"):
            raise ConsistencyError(f"{g.vertices[a].label()} must be a sink in the {g.direction} graph")


@dataclass(frozen=True)
class BSInterval:
    """Candidate basin <a, b>; openness at the ends is left unspecified."""

    a: float
    b: float
    left_witnesses: tuple[int, ...]
    right_witnesses: tuple[int, ...]


def _common_candidates(ifs: IFSystem, tol: float) -> list[float]:
    pts = sorted(p for m in ifs.maps for p in fixed_points(m).points)
    out: list[float] = []
    for p in pts:
        if not out or p - out[-1] > tol:
            out.append(p)
    return out


def enumerate_bs(ifs: IFSystem, candidate_endpoints=None, tol: float = POINT_TOL) -> list[BSInterval]:
    """All a < b with tau_s(a) >= a for every s (equality for one) and
    tau_s(b) <= b for every s (equality for one).  Nested pairs are kept."""
    cands = (_common_candidates(ifs, tol) if candidate_endpoints is None
             else sorted(float(c) for c in candidate_endpoints))
    images = np.array([m(np.array(cands)) for m in ifs.maps]) - np.array(cands)
    left_ok, right_ok = {}, {}
    for k, c in enumerate(cands):
        d = images[:, k]
        eq = tuple(int(s) for s in np.flatnonzero(np.abs(d) <= tol))
        if eq and np.all(d >= -tol):
            left_ok[k] = eq
        if eq and np.all(d <= tol):
            right_ok[k] = eq
    return [BSInterval(cands[i], cands[j], left_ok[i], right_ok[j])
            for i in sorted(left_ok) for j in sorted(right_ok) if cands[i] < cands[j]]


@dataclass(frozen=True)
class DriftProfile:
    r: np.ndarray
    phi: np.ndarray
    inf: float
    sup: float
    variance: np.ndarray
    variance_floor: float
    profiles: tuple[ExponentProfile, ...]
    remark: dict = field(default_factory=dict)

    @property
    def bounded(self) -> bool:
        return all(p.bounded for p in self.profiles)


def drift_profile(ifs: IFSystem, grid: int = 10_000) -> DriftProfile:
    """Tabulate phi(r) = sum_s p_s ln beta_s(r) and var_s ln beta_s(r).

    Extremes include the endpoint limits of the exponents.  ``remark`` holds
    the coarse constant-bound quantities sum p_s ln B_s and sum p_s ln b_s.
    """
    r = np.linspace(1e-6, 1.0 - 1e-6, grid)
    profiles = tuple(exponent_profile(m, (0.0, 1.0), grid) for m in ifs.maps)
    logb = np.array([np.log(m.interior_beta(r)) for m in ifs.maps])
    p = ifs.p[:, None]
    phi = np.sum(p * logb, axis=0)
    var = np.maximum(np.sum(p * logb**2, axis=0) - phi**2, 0.0)
    ext = [phi]
    with np.errstate(divide="ignore"):
        for side in (0, 1):
            lims = np.array([pr.limits[side] for pr in profiles])
            ext.append(np.array([float(np.sum(ifs.p * np.log(lims)))]))
        big_b = np.array([pr.B for pr in profiles])
        small_b = np.array([pr.b for pr in profiles])
        remark = {"sum_p_ln_B": float(np.sum(ifs.p * np.log(big_b))),
                  "sum_p_ln_b": float(np.sum(ifs.p * np.log(small_b)))}
    allv = np.concatenate(ext)
    allv = allv[~np.isnan(allv)]
    return DriftProfile(r, phi, float(allv.min()), float(allv.max()), var,
                        float(var.min()), profiles, remark)


@dataclass
class Candidate:
    measure: str
    point: float | None
    status: str = UNKNOWN
    rule: str | None = None
    basin_hint: str | None = None
    also: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"measure": self.measure, "point": self.point, "status": self.status,
                "rule": self.rule, "basin_hint": self.basin_hint, "also": list(self.also)}


@dataclass
class ClassificationReport:
    candidates: dict[str, Candidate]
    bs: list[BSInterval]
    g_d: VertexGraph
    g_u: VertexGraph
    drift: DriftProfile | None
    facts: list[str] = field(default_factory=list)

    @property
    def bs_bound(self) -> int:
        return len(self.bs)

    def status(self, measure: str) -> str:
        c = self.candidates.get(measure)
        return c.status if c else UNKNOWN

    def srb_measures(self) -> list[str]:
        return [k for k, c in self.candidates.items() if c.status == SRB]

    def to_dict(self) -> dict:
        d = self.drift
        drift = None
        if d is not None:
            drift = {"inf": _num(d.inf), "sup": _num(d.sup), "bounded": d.bounded,
                     "remark45": {k: _num(v) for k, v in d.remark.items()}}
        return {
            "bs_bound": self.bs_bound,
            "bs": [[i.a, i.b] for i in self.bs],
            "candidates": [c.to_dict() for c in self.candidates.values()],
            "graphs": {"g_d": self.g_d.to_dict(), "g_u": self.g_u.to_dict()},
            "drift": drift,
            "variance_floor": None if d is None else _num(d.variance_floor),
            "facts": list(self.facts),
        }


def _num(x: float):
    return x if math.isfinite(x) else str(x)


def _point_name(x: float) -> str:
    if x == 0.0:
        return "delta_0"
    if x == 1.0:
        return "delta_1"
    return f"delta_{x:.12g}"


class _Verdicts:
    def __init__(self):
        self.c: dict[str, Candidate] = {
            "delta_0": Candidate("delta_0", 0.0), "delta_1": Candidate("delta_1", 1.0)}

    def point(self, x: float) -> Candidate:
        if abs(x) <= POINT_TOL:
            x = 0.0
        elif abs(x - 1.0) <= POINT_TOL:
            x = 1.0
        name = _point_name(x)
        return self.c.setdefault(name, Candidate(name, x))

    def set(self, cand: Candidate, status: str, rule: str, basin: str | None = None) -> None:
        if cand.status == UNKNOWN:
            cand.status, cand.rule, cand.basin_hint = status, rule, basin
        elif {cand.status, status} == {SRB, NOT_SRB}:
            raise ConsistencyError(
                f"{cand.measure}: rule {rule} says {status}, rule {cand.rule} says {cand.status}")
        else:
            cand.also.append(rule)
            if cand.basin_hint is None:
                cand.basin_hint = basin


def classify(ifs: IFSystem, grid: int = 10_000) -> ClassificationReport:
    """Apply drift, variance, graph and counting rules in that order."""
    if not ifs.fixes_endpoints:
        raise ValueError("classification needs every map to fix 0 and 1")
    vertices = build_vertices(ifs)
    g_d = build_graph(vertices, "down")
    g_u = build_graph(vertices, "up")
    bs = enumerate_bs(ifs)
    v = _Verdicts()
    facts: list[str] = []

    drift = drift_profile(ifs, grid)
    if drift.bounded:
        _drift_rules(drift, v, facts)
    else:
        facts.append("exponents not bounded away from 0 and infinity: drift rules skipped")
    _graph_rules(ifs, vertices, g_d, g_u, v)

    report = ClassificationReport(v.c, bs, g_d, g_u, drift, facts)
    n_srb = len(report.srb_measures())
    if n_srb > len(bs):
        raise ConsistencyError(f"{n_srb} SRB measures exceed the candidate-basin bound {len(bs)}")
    return report


def _drift_rules(d: DriftProfile, v: _Verdicts, facts: list[str]) -> None:
    zero, one = v.c["delta_0"], v.c["delta_1"]
    if d.sup < -DRIFT_TOL:
        v.set(one, SRB, "drift:negative", "(0, 1]")
        v.set(zero, NOT_SRB, "drift:negative/unique")
    if d.inf > DRIFT_TOL:
        v.set(zero, SRB, "drift:positive", "[0, 1)")
        v.set(one, NOT_SRB, "drift:positive/unique")
    if d.sup <= DRIFT_TOL:
        facts.append("drift <= 0: orbits from (0, 1] do not converge to 0 a.s.")
    if d.inf >= -DRIFT_TOL:
        facts.append("drift >= 0: orbits from [0, 1) do not converge to 1 a.s.")
    if d.variance_floor > VARIANCE_FLOOR_MIN:
        if d.sup <= DRIFT_TOL:
            v.set(zero, NOT_SRB, "drift-variance:nonpositive")
        if d.inf >= -DRIFT_TOL:
            v.set(one, NOT_SRB, "drift-variance:nonnegative")


def _graph_rules(ifs, vertices, g_d, g_u, v: _Verdicts) -> None:
    first = {}
    last = {}
    for i, w in enumerate(vertices):
        if w.left == 0.0:
            first[w.map_index] = i
        if w.right == 1.0:
            last[w.map_index] = i
    maps = range(ifs.L)
    zero, one = v.c["delta_0"], v.c["delta_1"]

    if all(not vertices[first[s]].up for s in maps):
        a = min(vertices[first[s]].right for s in maps)
        v.set(zero, SRB, "graph:all-down-at-0", f"[0, {a:.12g})")
    if all(vertices[last[s]].up for s in maps):
        b = max(vertices[last[s]].left for s in maps)
        v.set(one, SRB, "graph:all-up-at-1", f"({b:.12g}, 1]")

    rights = [vertices[first[s]].right for s in maps]
    if all(vertices[first[s]].up for s in maps) and max(rights) - min(rights) <= POINT_TOL:
        a = rights[0]
        v.set(v.point(a), SRB, "graph:common-attractor-above-0", f"(0, {a:.12g}]")
        v.set(zero, NOT_SRB, "graph:common-attractor-above-0")
    lefts = [vertices[last[s]].left for s in maps]
    if all(not vertices[last[s]].up for s in maps) and max(lefts) - min(lefts) <= POINT_TOL:
        b = lefts[0]
        v.set(v.point(b), SRB, "graph:common-attractor-below-1", f"[{b:.12g}, 1)")
        v.set(one, NOT_SRB, "graph:common-attractor-below-1")

    d_sources = set(g_d.sources())
    u_sources = set(g_u.sources())
    for i, w in enumerate(vertices):
        if w.up and w.left == 0.0 and g_u.out_degree(i) >= 1:
            if any(x.left == 0.0 and x.right < w.right and j in d_sources
                   for j, x in enumerate(vertices)):
                v.set(zero, NOT_SRB, "graph:escape-from-0")
        if not w.up and w.right == 1.0 and g_d.out_degree(i) >= 1:
            if any(x.right == 1.0 and x.left > w.left and j in u_sources
                   for j, x in enumerate(vertices)):
                v.set(one, NOT_SRB, "graph:escape-from-1")

    above = [w.right for j, w in enumerate(vertices) if j in d_sources and w.right != 1.0]
    if above:
        c = max(above)
        cand = v.c.setdefault("separated_from_0", Candidate("separated_from_0", None))
        v.set(cand, SEPARATED, "graph:down-source", f"support in [{c:.12g}, 1]")
    below = [w.left for j, w in enumerate(vertices) if j in u_sources and w.left != 0.0]
    if below:
        c = min(below)
        cand = v.c.setdefault("separated_from_1", Candidate("separated_from_1", None))
        v.set(cand, SEPARATED, "graph:up-source", f"support in [0, {c:.12g}]")
