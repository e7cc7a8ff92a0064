"""Command-line front end: ``srb <command> [--config FILE] [flags]``.

Every command writes JSON (sorted keys) and CSV artifacts into ``--out``.
Each artifact carries the tool version and a hash of the effective
configuration, so identical configurations give byte-identical files.
Exit codes: 0 success, 2 invalid input, 3 internal inconsistency.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import __version__
from .classifier import ConsistencyError, classify
from .interval_maps import DegenerateFixedSetError, MapError, map_from_dict
from .market import (MarketConsistencyError, MarketModel, build_market_ifs, drift_bridge,
                     generalized_kelly_check, grade_run, kelly_rule, simulate_market)
from .orbit_engine import (IFSystem, basin_from_limits, detected_targets, ensemble_tails,
                           limit_table, sample_orbit)
from .presets import square_root_system, two_basin_system
from .stats import arcsine_statistic, coin_flip_differences, positive_fraction_bound


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


# -- config parsing -----------------------------------------------------------


def _ifs_from_config(cfg: dict) -> IFSystem:
    if "maps" not in cfg or "p" not in cfg:
        raise ConfigError("maps" if "maps" not in cfg else "p", "required field missing")
    maps = []
    for i, spec in enumerate(cfg["maps"]):
        try:
            maps.append(map_from_dict(spec))
        except (MapError, KeyError, TypeError) as exc:
            raise ConfigError(f"maps[{i}]", str(exc)) from exc
    p = np.asarray(cfg["p"], dtype=float)
    if p.shape != (len(maps),):
        raise ConfigError("p", f"expected {len(maps)} probabilities, got {p.size}")
    if np.any(~(p > 0)):
        raise ConfigError("p", "probabilities must be strictly positive")
    if abs(p.sum() - 1.0) > 1e-12:
        raise ConfigError("p", f"probabilities must sum to 1, they sum to {p.sum():.15g}")
    return IFSystem(tuple(maps), p)


def _market_from_config(cfg: dict):
    for key in ("D", "p", "strategies"):
        if key not in cfg:
            raise ConfigError(key, "required field missing")
    try:
        model = MarketModel(cfg["D"], cfg["p"])
    except ValueError as exc:
        raise ConfigError("D/p", str(exc)) from exc
    if "K" in cfg and cfg["K"] != model.K:
        raise ConfigError("K", f"D has {model.K} rows")
    if "L" in cfg and cfg["L"] != model.L:
        raise ConfigError("L", f"D has {model.L} columns")
    strategies = [np.asarray(s, dtype=float) for s in cfg["strategies"]]
    w0 = np.asarray(cfg.get("w0", [1.0] * len(strategies)), dtype=float)
    return model, strategies, w0


# -- output helpers -------------------------------------------------------------


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def config_hash(cfg: dict) -> str:
    blob = json.dumps(_clean(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


class Emitter:
    def __init__(self, out: Path, cfg: dict):
        self.out = out
        self.cfg = cfg
        self.hash = config_hash(cfg)
        self.written: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.hash, "version": __version__}

    def json(self, name: str, payload: dict) -> None:
        body = dict(_clean(payload), provenance=self.provenance, config=_clean(self.cfg))
        (self.out / name).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n",
                                     encoding="utf-8")
        self.written.append(name)

    def csv(self, name: str, header, rows) -> None:
        with open(self.out / name, "w", newline="", encoding="utf-8") as fh:
            fh.write(f"# srb {__version__} config_hash={self.hash}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])
        self.written.append(name)

    def text(self, name: str, body: str) -> None:
        (self.out / name).write_text(f"# srb {__version__} config_hash={self.hash}\n" + body,
                                     encoding="utf-8")
        self.written.append(name)


# -- commands -------------------------------------------------------------------


def cmd_simulate(cfg: dict, em: Emitter, workers) -> dict:
    ifs = _ifs_from_config(cfg)
    T, seed, paths = int(cfg["steps"]), int(cfg["seed"]), int(cfg["paths"])
    r0 = float(cfg.get("r0", 0.5))
    orbit = sample_orbit(ifs, r0, T, seed)
    states = orbit.states
    em.csv("orbit.csv", ["t", "symbol", "state"],
           ([t, "" if t == 0 else int(orbit.symbols[t - 1]), states[t]] for t in range(T + 1)))
    tails = ensemble_tails(ifs, [r0] * paths, T, seed,
                           tail_fraction=float(cfg.get("tail_fraction", 0.01)), workers=workers)
    verdicts = tails.verdicts(float(cfg.get("eps", 1e-6)))
    kinds = Counter(v.kind if not v.converges else f"converges:{v.x:.6g}" for v in verdicts)
    summary = {"r0": r0, "T": T, "paths": paths, "first_path_final": states[-1],
               "verdicts": dict(sorted(kinds.items()))}
    em.json("simulate.json", summary)
    return summary


def _classification(ifs: IFSystem, em: Emitter, grid: int) -> dict:
    rep = classify(ifs, grid=grid)
    em.text("g_d.edgelist", rep.g_d.edge_list())
    em.text("g_u.edgelist", rep.g_u.edge_list())
    return rep.to_dict()


def cmd_classify(cfg: dict, em: Emitter, workers) -> dict:
    ifs = _ifs_from_config(cfg)
    body = _classification(ifs, em, int(cfg.get("drift_grid", 10_000)))
    em.json("classify.json", body)
    return body


def _basins(ifs, cfg, em, workers, targets=None) -> dict:
    grid, spp = int(cfg["grid"]), int(cfg.get("seeds_per_point", cfg["paths"]))
    eps, thr = float(cfg.get("eps", 1e-6)), float(cfg.get("threshold", 0.99))
    r0, lim = limit_table(ifs, grid, spp, int(cfg["steps"]), int(cfg["seed"]),
                          tail_fraction=float(cfg.get("tail_fraction", 0.01)), eps=eps,
                          workers=workers)
    found = detected_targets(r0, lim, eps, thr)
    targets = found if targets is None else targets
    out = {"detected_targets": found, "basins": []}
    for x in targets:
        scan = basin_from_limits(r0, lim, x, eps, thr)
        name = f"basin_{x:.6g}.csv"
        em.csv(name, ["r0", "freq_to_target", "hull_member"],
               zip(scan.r0, scan.freq, scan.members.astype(int)))
        out["basins"].append({"target": x, "hull": scan.hull, "contiguous": scan.contiguous,
                              "table": name, "freq": scan.freq})
    return out


def cmd_basin(cfg: dict, em: Emitter, workers) -> dict:
    ifs = _ifs_from_config(cfg)
    targets = cfg.get("targets")
    body = _basins(ifs, cfg, em, workers, None if targets is None else [float(t) for t in targets])
    em.json("basin.json", body)
    return body


def cmd_market(cfg: dict, em: Emitter, workers) -> dict:
    model, strategies, w0 = _market_from_config(cfg)
    T, seed, runs = int(cfg["steps"]), int(cfg["seed"]), int(cfg["paths"])
    first = simulate_market(model, strategies, w0, T, seed, runs=1)
    I = len(strategies)
    em.csv("trajectory.csv", ["t", "s_t"] + [f"r{i + 1}" for i in range(I)],
           ([t, "" if t == 0 else int(first.symbols[0, t - 1]), *first.shares[0, t]]
            for t in range(T + 1)))
    ens = simulate_market(model, strategies, w0, T, seed, runs=runs, record=False)
    grades = grade_run(ens)
    counts = [dict(sorted(Counter(g[i].grade for g in grades).items())) for i in range(I)]
    body = {"runs": runs, "T": T, "burn_in": ens.burn_in, "grades": counts,
            "kelly_rule": kelly_rule(model), "redundancy_free": model.redundancy_free,
            "rule": "tail over t >= T/2: max < 1e-6 Extinction, min > 1-1e-6 Domination, "
                    "max > 1e-3 Survival"}
    if I == 2:
        chk = generalized_kelly_check(strategies[0], strategies[1], model.expected_payoffs)
        body["generalized_kelly"] = {"termwise_ok": chk.termwise_ok,
                                     "aggregate_ok": chk.aggregate_ok, "g_prime_1": chk.g_prime_1}
        body["degenerate"] = build_market_ifs(model, *strategies).degenerate
    em.json("market.json", body)
    return body


def cmd_arcsine(cfg: dict, em: Emitter, workers) -> dict:
    paths, seed = int(cfg["paths"]), int(cfg["seed"])
    levels = [int(n) for n in cfg.get("levels", [100, 1000, 10_000])]
    a = float(cfg.get("a", 0.25))
    X = coin_flip_differences(paths, max(levels), seed)
    rows, summary = [], []
    for n in levels:
        s = arcsine_statistic(X, 1.0, n)
        emp, bound = positive_fraction_bound(s.pos_fraction, a)
        summary.append({"n": n, "ks": s.ks, "ks_pvalue": s.ks_pvalue, "excluded": s.excluded,
                        "pos_fraction_le_a": emp, "arcsine_bound": bound})
        rows.extend((j, n, L, f) for j, (L, f) in enumerate(zip(s.L, s.pos_fraction)))
    em.csv("arcsine.csv", ["path_id", "n", "L_n", "pos_fraction"], rows)
    body = {"paths": paths, "a": a, "levels": summary}
    em.json("arcsine.json", body)
    return body


# -- worked examples ----------------------------------------------------------


def _check(claim: str, holds: bool, observed) -> dict:
    return {"claim": claim, "holds": bool(holds), "observed": observed}


def _ex34(cfg, em, workers) -> dict:
    ifs = two_basin_system()
    rep = _classification(ifs, em, 2000)
    cands = {c["measure"]: c for c in rep["candidates"]}
    cfg = dict(cfg, seeds_per_point=cfg.get("seeds_per_point", cfg["paths"]))
    bas = _basins(ifs, cfg, em, workers, targets=[0.0, 1.0])
    h0, h1 = (b["hull"] for b in bas["basins"])
    cell = 1.0 / (int(cfg["grid"]) - 1)
    r0 = np.linspace(0.0, 1.0, int(cfg["grid"]))
    mid = (r0 > 1 / 3) & (r0 < 2 / 3)
    f0 = np.asarray(bas["basins"][0]["freq"])[mid]
    checks = [
        _check("delta_0 is SRB", cands["delta_0"]["status"] == "SRB", cands["delta_0"]),
        _check("delta_1 is SRB", cands["delta_1"]["status"] == "SRB", cands["delta_1"]),
        _check("basin of delta_0 is [0, 1/3] within one grid cell",
               h0 is not None and abs(h0[0]) <= cell and abs(h0[1] - 1 / 3) <= cell, h0),
        _check("basin of delta_1 is [2/3, 1] within one grid cell",
               h1 is not None and abs(h1[0] - 2 / 3) <= cell and abs(h1[1] - 1) <= cell, h1),
        _check("points strictly between 1/3 and 2/3 reach 0 with frequency in (0.01, 0.99)",
               bool(np.all((f0 > 0.01) & (f0 < 0.99))), f0),
    ]
    return {"classification": rep, "basins": bas, "checks": checks}


def _ex51(cfg, em, workers) -> dict:
    p1 = float(cfg.get("p1", 0.4))
    ifs = square_root_system(p1)
    rep = _classification(ifs, em, 2000)
    cands = {c["measure"]: c for c in rep["candidates"]}
    T, paths, seed = int(cfg["steps"]), int(cfg["paths"]), int(cfg["seed"])
    tails = ensemble_tails(ifs, [0.5] * paths, T, seed, tail_fraction=0.95, workers=workers)
    near1 = float(np.mean(tails.last > 1 - 1e-6))
    near0 = float(np.mean(tails.last < 1e-6))
    kinds = dict(sorted(Counter(v.kind for v in tails.verdicts(1e-6)).items()))
    drift = (2 * p1 - 1) * math.log(2.0)
    if p1 < 0.5:
        checks = [_check("delta_1 is the unique SRB measure",
                         cands["delta_1"]["status"] == "SRB" and cands["delta_0"]["status"] == "NotSRB",
                         [cands["delta_0"], cands["delta_1"]]),
                  _check(">= 99% of orbits end within 1e-6 of 1", near1 >= 0.99, near1)]
    elif p1 > 0.5:
        checks = [_check("delta_0 is the unique SRB measure",
                         cands["delta_0"]["status"] == "SRB" and cands["delta_1"]["status"] == "NotSRB",
                         [cands["delta_0"], cands["delta_1"]]),
                  _check(">= 99% of orbits end within 1e-6 of 0", near0 >= 0.99, near0)]
    else:
        frac = 1.0 - kinds.get("converges", 0) / paths
        checks = [_check("neither delta_0 nor delta_1 is SRB",
                         cands["delta_0"]["status"] == "NotSRB" and cands["delta_1"]["status"] == "NotSRB",
                         [cands["delta_0"], cands["delta_1"]]),
                  _check(">= 90% of orbits oscillating or undecided", frac >= 0.9, frac)]
    return {"p1": p1, "drift": drift, "classification": rep,
            "ensemble": {"near_1": near1, "near_0": near0, "verdicts": kinds,
                         "tail_fraction": 0.95}, "checks": checks}


def _kelly(cfg, em, workers) -> dict:
    model = MarketModel([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5])
    lam2 = np.array([0.3, 0.7])
    T, runs, seed = int(cfg["steps"]), int(cfg["paths"]), int(cfg["seed"])
    out = {}
    checks = []
    for name, lam1 in (("kelly", kelly_rule(model)), ("generalized", np.array([0.4, 0.6]))):
        run = simulate_market(model, [lam1, lam2], [1.0, 1.0], T, seed, runs=runs, record=False)
        g = Counter(x[0].grade for x in grade_run(run))
        chk = generalized_kelly_check(lam1, lam2, model.expected_payoffs)
        out[name] = {"lambda1": lam1, "grades_investor_1": dict(sorted(g.items())),
                     "termwise_ok": chk.termwise_ok, "aggregate_ok": chk.aggregate_ok}
        if name == "kelly":
            checks.append(_check("Kelly investor dominates in >= 99% of runs",
                                 g["Domination"] >= 0.99 * runs, g["Domination"] / runs))
        else:
            checks.append(_check("generalized-Kelly investor goes extinct in <= 1% of runs",
                                 g["Extinction"] <= 0.01 * runs, g["Extinction"] / runs))
    r = np.linspace(1e-4, 1 - 1e-4, 1000)
    phi, jensen, bound = drift_bridge(model, [0.4, 0.6], lam2, r)
    checks.append(_check("drift phi(r) <= 0 for the generalized-Kelly pair",
                         np.all(phi <= 1e-12), float(np.max(phi))))
    checks.append(_check("phi <= ln E beta and ln(1 + ln G / ln r) <= 0",
                         np.all(phi <= jensen + 1e-12) and np.all(bound <= 1e-12),
                         float(np.max(bound))))
    # the middle link of the published chain; it runs the other way (README)
    checks.append(_check("ln E beta <= ln(1 + ln G / ln r)", np.all(jensen <= bound + 1e-12),
                         float(np.max(jensen - bound))))
    out["checks"] = checks
    return out


EXAMPLES = {"ex3.4": _ex34, "ex5.1": _ex51, "kelly-demo": _kelly}
EXAMPLE_DEFAULTS = {
    "ex3.4": {"steps": 10_000, "paths": 50, "grid": 101, "seed": 0},
    "ex5.1": {"steps": 10_000, "paths": 200, "grid": 101, "seed": 0},
    "kelly-demo": {"steps": 100_000, "paths": 200, "grid": 101, "seed": 0},
}


def cmd_example(cfg: dict, em: Emitter, workers) -> dict:
    body = EXAMPLES[cfg["name"]](cfg, em, workers)
    lines = [f"{'ok  ' if c['holds'] else 'FAIL'} {c['claim']}" for c in body["checks"]]
    em.text("summary.txt", "\n".join(lines) + "\n")
    em.json("example.json", body)
    return body


COMMANDS = {"simulate": cmd_simulate, "classify": cmd_classify, "basin": cmd_basin,
            "market": cmd_market, "arcsine": cmd_arcsine, "example": cmd_example}
DEFAULTS = {"steps": 10_000, "paths": 200, "grid": 101, "seed": 0}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="srb", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "example":
            sp.add_argument("name", choices=sorted(EXAMPLES))
            sp.add_argument("--p1", type=float, help="first-map probability for ex5.1")
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--steps", type=int)
        sp.add_argument("--paths", type=int)
        sp.add_argument("--grid", type=int)
        sp.add_argument("--out", type=Path, default=Path("srb-out"))
        sp.add_argument("--threads", type=int)
    return ap


def _effective_config(args) -> dict:
    cfg = {}
    if args.config is not None:
        try:
            cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", str(exc)) from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config", "top level must be a JSON object")
    base = EXAMPLE_DEFAULTS[args.name] if args.command == "example" else DEFAULTS
    merged = {**base, **cfg}
    for key in ("seed", "steps", "paths", "grid"):
        val = getattr(args, key)
        if val is not None:
            merged[key] = val
    if args.command == "example":
        merged["name"] = args.name
        if args.p1 is not None:
            merged["p1"] = args.p1
    for key in ("steps", "paths", "grid"):
        if int(merged[key]) < 1:
            raise ConfigError(key, "must be a positive integer")
    merged["command"] = args.command
    return merged


def _fail(code: int, kind: str, message: str, field: str | None = None) -> int:
    err = {"error": kind, "message": message}
    if field is not None:
        err["field"] = field
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        em = Emitter(args.out, cfg)
        body = COMMANDS[args.command](cfg, em, args.threads)
    except ConfigError as exc:
        return _fail(2, "validation", exc.message, exc.field)
    except DegenerateFixedSetError as exc:
        return _fail(2, "validation", f"degenerate fixed set: {exc}")
    except (ConsistencyError, MarketConsistencyError) as exc:
        return _fail(3, "consistency", str(exc))
    except (ValueError, MapError) as exc:
        return _fail(2, "validation", str(exc))
    summary = {"command": args.command, "artifacts": em.written, **em.provenance}
    if "checks" in body:
        summary["checks_passed"] = sum(c["holds"] for c in body["checks"])
        summary["checks_total"] = len(body["checks"])
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
