"""Experiment drivers: Steps A-C of the favorite-site construction, event
probability estimates, the concentration statistic, and the Monte Carlo
validation campaign for the quenched formulas."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from . import __version__
from . import quenched as Q
from . import valleys as VL
from . import walk as W
from .environment import Environment, EnvironmentLaw
from .errors import BudgetError, DomainError
from .excursions import geometric_check
from .rng import derive_key
from .stats import binomial_se, frequency, kendall_tau


class ExperimentConfig(BaseModel):
    """Flat experiment configuration; every field has an explicit default."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    law: Literal["two-point", "uniform-symmetric"] = "two-point"
    law_param: float = 0.25
    seed: int = 0
    j_grid: list[float] = field(default_factory=lambda: [float(j) for j in range(10, 101)])
    C4: float | None = None
    C5: float = VL.DEFAULT_C5
    env_replicas: int = 200
    walk_replicas: int = 20
    k_values: list[int] = field(default_factory=lambda: [3, 16, 1000])
    step_cap: int = 10 ** 8
    window_budget: int | None = None
    threads: int = 1
    concentration_levels: list[float] = field(default_factory=lambda: [0.5])
    planted_j: float | None = None

    @field_validator("env_replicas", "walk_replicas", "step_cap", "threads")
    @classmethod
    def _positive(cls, v: int) -> int:
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @field_validator("k_values")
    @classmethod
    def _ks(cls, v: list[int]) -> list[int]:
        if not v:
            raise ValueError("need at least one k")
        if min(v) < 2:
            raise ValueError("k must be >= 2 (log k must be positive)")
        return sorted(set(v))

    @field_validator("j_grid")
    @classmethod
    def _grid(cls, v: list[float]) -> list[float]:
        if not v:
            raise ValueError("j grid must be nonempty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("j grid must be strictly increasing")
        if v[0] <= math.e:
            raise ValueError("every j must exceed e")
        return v

    @field_validator("concentration_levels")
    @classmethod
    def _levels(cls, v: list[float]) -> list[float]:
        if any(not 0 <= a < 1 for a in v):
            raise ValueError("concentration levels must lie in [0, 1)")
        return v

    @model_validator(mode="after")
    def _law_ok(self) -> "ExperimentConfig":
        self.env_law()
        return self

    def env_law(self) -> EnvironmentLaw:
        return EnvironmentLaw(self.law, self.law_param)

    def canonical(self) -> str:
        return json.dumps(self.model_dump(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def n_k(tau_minus: int, k: int) -> int:
    """``ceil((1 + (log k)^(-1/4)) * tau_minus)``."""
    if k < 2:
        raise DomainError("k must be >= 2")
    return int(math.ceil((1 + math.log(k) ** -0.25) * tau_minus))


# -- Step A -----------------------------------------------------------------------------

def step_a(env: Environment, config: ExperimentConfig) -> tuple[list[float], list[VL.EventReport]]:
    """Grid points ``j`` where all nine events hold, plus the full per-``j`` reports."""
    reports = VL.scan_events(env, config.j_grid, config.C4, config.C5, config.window_budget)
    return [r.j for r in reports if r.special], reports


# -- Steps B and C ------------------------------------------------------------------------

@dataclass
class KCheck:
    """Everything measured at ``n_k`` for one ``k``."""

    k: int
    n_k: int
    max_X: int | None = None
    xi_b_minus: int | None = None
    favorites: list[int] | None = None
    positivity: float | None = None
    truncated: bool = False
    negativity: bool | None = None
    bottom_occupation: bool | None = None
    positive_occupation: bool | None = None
    favorites_nonpositive: bool | None = None
    favorites_negative: bool | None = None
    demonstration: bool | None = None


@dataclass
class StepBRecord:
    m: float
    b_plus: int
    b_minus: int
    d_plus: int
    tau_plus: int | None = None
    tau_minus: int | None = None
    tau_d_plus: int | None = None
    ordering: bool | None = None
    A_minus: int | None = None
    A_minus_ratio: float | None = None
    A_minus_target: float | None = None
    pos_max_xi: int | None = None
    truncated: bool = False
    truncation: str | None = None
    checks: list[KCheck] = field(default_factory=list)


def step_b(env: Environment, marks: tuple[VL.ValleyMarks, VL.ValleyMarks], ks: Sequence[int],
           state: W.WalkState, cap: int) -> tuple[StepBRecord, W.LocalTimeLedger]:
    """Run one walk to ``tau(b-)`` and then on to every ``n_k``.

    The first stage stops at ``tau(b-)``; the hitting times of ``b+`` and
    ``d+`` seen on the way decide the ordering ``tau+ < tau- < tau(d+)``.
    The stage is capped at ``cap`` steps; ``n_k <= 2 tau-`` keeps the rest
    finite.
    """
    if any(k < 2 for k in ks):
        raise DomainError("k must be >= 2")
    plus, minus = marks
    rec = StepBRecord(plus.j, plus.b, minus.b, plus.d)
    ledger = W.LocalTimeLedger(state.position)
    hits: dict[int, int] = {}
    try:
        while minus.b not in hits:
            targets = {minus.b} | {x for x in (plus.b, plus.d) if x not in hits}
            budget = cap - state.time
            if budget <= 0:
                break
            out, state = W.run_until(state, env, W.StopSpec(frozenset(targets), budget), ledger)
            if not out.hit:
                break
            hits[out.site] = out.time
    except BudgetError as exc:
        rec.truncated, rec.truncation = True, f"tau-: {exc}"
        return rec, ledger
    rec.tau_plus, rec.tau_d_plus = hits.get(plus.b), hits.get(plus.d)
    if minus.b not in hits:
        rec.truncated, rec.truncation = True, "tau-: step cap"
        # the ordering is already decided if b+ was missed or d+ was hit first
        if rec.tau_d_plus is not None:
            rec.ordering = False
        return rec, ledger
    tau = rec.tau_minus = hits[minus.b]
    rec.ordering = rec.tau_plus is not None and rec.tau_d_plus is None
    rec.A_minus = ledger.A_minus
    rec.A_minus_ratio = ledger.A_minus / tau
    rec.A_minus_target = math.exp(-plus.j / 3)
    rec.pos_max_xi = int(ledger.dense(1, plus.d).max()) if plus.d >= 1 else 0
    running_max = state.position
    for n_target, k in sorted((n_k(tau, k), k) for k in ks):
        chk = KCheck(k, n_target)
        rec.checks.append(chk)
        try:
            if n_target > state.time:
                out, state = W.run_until(state, env, W.StopSpec(frozenset(), n_target - state.time),
                                         ledger)
                running_max = max(running_max, out.max_position)
        except BudgetError:
            chk.truncated = True
            continue
        chk.max_X = int(running_max)
        chk.xi_b_minus = ledger.count(minus.b)
        chk.favorites = sorted(ledger.favorites())
        chk.positivity = W.positivity_fraction(ledger)
    rec.checks.sort(key=lambda c: c.k)
    return rec, ledger


def step_c(rec: StepBRecord) -> StepBRecord:
    """Fill the occupation, favorite-site and demonstration flags from measured values."""
    if rec.tau_minus is None:
        return rec
    tau = rec.tau_minus
    for chk in rec.checks:
        if chk.truncated:
            continue
        lk = math.log(chk.k)
        chk.negativity = chk.max_X < 0
        chk.bottom_occupation = chk.xi_b_minus >= tau / lk ** (1 / 3)
        chk.positive_occupation = rec.pos_max_xi <= tau / lk ** 0.5
        chk.favorites_nonpositive = all(x <= 0 for x in chk.favorites)
        chk.favorites_negative = all(x < 0 for x in chk.favorites)
        chk.demonstration = (chk.positivity >= 0.9 and chk.favorites_nonpositive
                             and chk.bottom_occupation and chk.positive_occupation)
    return rec


def recompute_flags(rec: dict) -> dict:
    """Rebuild a serialized Step-B/C record's flags from its stored measurements."""
    r = StepBRecord(**{**rec, "checks": []})
    r.checks = [KCheck(**{**c, "negativity": None, "bottom_occupation": None, "positive_occupation": None,
                          "favorites_nonpositive": None, "favorites_negative": None,
                          "demonstration": None}) for c in rec["checks"]]
    if r.tau_minus is not None:
        r.ordering = r.tau_plus is not None and r.tau_d_plus is None
    return asdict(step_c(r))


# -- replica orchestration ------------------------------------------------------------------

def _environment(config: ExperimentConfig, index: int) -> tuple[Environment, int | None]:
    if config.planted_j is not None:
        return VL.planted_environment(config.planted_j, config.env_law()), None
    env_seed = derive_key(config.seed, "environment-replica", index)
    return Environment(config.env_law(), env_seed), env_seed


def run_replica(config: ExperimentConfig, index: int, plots: dict | None = None) -> dict:
    """One environment replica: Step A, then Steps B-C for each walk replica.

    When ``plots`` is a dict, plot tables for qualified environments are
    added to it (potential profile with marks, final local times of walk 0).
    """
    env, env_seed = _environment(config, index)
    grid = [config.planted_j] if config.planted_j is not None else config.j_grid
    cfg = config if config.planted_j is None else config.model_copy(update={"j_grid": grid})
    ms, reports = step_a(env, cfg)
    record = {
        "index": index,
        "env_seed": env_seed,
        "planted": config.planted_j is not None,
        "step_a": {
            "m_candidates": ms,
            "budget_errors": sum(1 for r in reports if r.errors),
        },
        "qualified": bool(ms),
        "m": None,
        "walks": [],
    }
    if not ms:
        return record
    m = ms[0]
    rep = next(r for r in reports if r.j == m)
    record["m"] = m
    record["marks"] = {"b_plus": rep.plus.b, "d_plus": rep.plus.d,
                       "b_minus": rep.minus.b, "d_minus": rep.minus.d}
    for r in range(config.walk_replicas):
        state = W.WalkState.start(config.seed, "walk", index, r)
        rec, ledger = step_b(env, (rep.plus, rep.minus), config.k_values, state, config.step_cap)
        step_c(rec)
        record["walks"].append({"replica": r, **asdict(rec)})
        if plots is not None and r == 0:
            plots[f"xi_{index}.csv"] = (("x", "xi"), ledger.rows())
    if plots is not None:
        plots[f"profile_{index}.csv"] = (("x", "V", "marks"),
                                         VL.profile_rows(env, rep.minus.d, rep.plus.d, [rep]))
    return record


def _flag_freq(walks: list[dict], getter) -> dict:
    vals = [v for v in (getter(w) for w in walks) if v is not None]
    return frequency(sum(bool(v) for v in vals), len(vals))


def aggregate(records: list[dict], config: ExperimentConfig) -> dict:
    walks = [w for r in records for w in r["walks"]]
    out = {
        "environments": len(records),
        "qualified": frequency(sum(r["qualified"] for r in records), len(records)),
        "walks": len(walks),
        "truncated_walks": sum(w["truncated"] for w in walks),
        "ordering": _flag_freq(walks, lambda w: w["ordering"]),
        "per_k": {},
    }
    demos = []
    for k in config.k_values:
        def at(w, key, k=k):
            return next((c[key] for c in w["checks"] if c["k"] == k), None)
        out["per_k"][str(k)] = {
            name: _flag_freq(walks, lambda w, key=key: at(w, key))
            for name, key in (("negativity", "negativity"), ("bottom_occupation", "bottom_occupation"),
                              ("positive_occupation", "positive_occupation"),
                              ("favorites_nonpositive", "favorites_nonpositive"),
                              ("favorites_negative", "favorites_negative"),
                              ("demonstration", "demonstration"))
        }
        out["per_k"][str(k)]["joint_bottom_positive_favorites"] = _flag_freq(
            walks, lambda w: None if at(w, "bottom_occupation") is None else
            at(w, "bottom_occupation") and at(w, "positive_occupation") and at(w, "favorites_nonpositive"))
        for r in records:
            for w in r["walks"]:
                if at(w, "demonstration"):
                    demos.append({"index": r["index"], "replica": w["replica"], "k": k})
    out["demonstrations"] = demos
    out["demonstration_found"] = bool(demos)
    return out


def run_experiment(config: ExperimentConfig, collect_plots: bool = False):
    """Full pipeline; the returned document serializes deterministically.

    With ``collect_plots`` the result is ``(report, plots)`` where ``plots``
    maps file names to ``(header, rows)``.
    """
    plot_parts = [{} if collect_plots else None for _ in range(config.env_replicas)]
    with ThreadPoolExecutor(max_workers=config.threads) as pool:
        records = list(pool.map(lambda i: run_replica(config, i, plot_parts[i]),
                                range(config.env_replicas)))
    records.sort(key=lambda r: r["index"])
    report = {
        "tool": "sinaiwalk",
        "version": __version__,
        "config_hash": config.digest(),
        "seed": config.seed,
        "config": config.model_dump(),
        "notes": "j grid replaces the super-exponential level schedule; events are exact",
        "records": records,
        "aggregate": aggregate(records, config),
    }
    if not collect_plots:
        return report
    plots = {}
    for part in plot_parts:
        plots.update(part)
    return report, plots


WALK_COLUMNS = ("index", "replica", "m", "k", "tau_plus", "tau_minus", "tau_d_plus", "ordering",
                "n_k", "max_X", "negativity", "xi_b_minus", "pos_max_xi", "bottom_occupation", "positive_occupation",
                "favorites_nonpositive", "favorites_negative", "positivity", "demonstration",
                "A_minus_ratio", "truncated")


def walk_rows(report: dict) -> list[list]:
    """One row per (environment, walk replica, k) for the side table."""
    rows = []
    for r in report["records"]:
        for w in r["walks"]:
            for c in w["checks"] or [{"k": None}]:
                merged = {**w, **c, "index": r["index"], "truncated": w["truncated"] or c.get("truncated")}
                rows.append([merged.get(col) for col in WALK_COLUMNS])
    return rows


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=True) + "\n"


# -- event probability estimates ------------------------------------------------------------

def estimate_event_probs(law: EnvironmentLaw, js: Sequence[float], replicas: int, seed: int = 0,
                         C4: float | None = None, C5: float = VL.DEFAULT_C5,
                         theta: bool = True) -> dict:
    """Frequencies of E-(j), E+(j), each single event and the minus-side geometry.

    Each replica is a fresh environment; a ``j`` whose valley does not fit
    the window budget is left out of that side's denominator.
    """
    if replicas < 100:
        raise DomainError("need at least 100 replicas")
    js = [float(j) for j in js]
    names = list(VL.PLUS_FLAGS + VL.MINUS_FLAGS) + ["E+", "E-"]
    tallies = {j: {n: [0, 0] for n in names + ["theta_F"]} for j in js}
    for i in range(replicas):
        env = Environment(law, derive_key(seed, "event-replica", i))
        for j in js:
            rep = VL.detect_events(env, j, C4, C5)
            t = tallies[j]
            for side, flags, total in ((VL.PLUS, VL.PLUS_FLAGS, "E+"), (VL.MINUS, VL.MINUS_FLAGS, "E-")):
                if side in rep.errors:
                    continue
                for f in flags:
                    t[f][0] += rep.flags[f]
                    t[f][1] += 1
                t[total][0] += all(rep.flags[f] for f in flags)
                t[total][1] += 1
            if theta:
                try:
                    th = VL.theta_minus(env, j, C5)
                except BudgetError:
                    continue
                t["theta_F"][0] += th.all_events
                t["theta_F"][1] += 1
    table = {str(j): {n: frequency(*tallies[j][n]) for n in tallies[j]} for j in js}
    e4 = [table[str(j)]["E4+"]["estimate"] for j in js]
    return {
        "law": law.to_dict(),
        "replicas": replicas,
        "seed": seed,
        "C4": C4,
        "C5": C5,
        "table": table,
        "E4+_kendall_tau": kendall_tau(js, e4) if len(js) > 1 and None not in e4 else None,
        "E-_min_ci_low": min(table[str(j)]["E-"]["ci_low"] or 0.0 for j in js),
    }


# -- concentration statistic ------------------------------------------------------------------

def _max_window(prefix: np.ndarray, width: int) -> int:
    W_ = len(prefix) - 1
    if width >= W_:
        return int(prefix[-1])
    return int((prefix[width:] - prefix[:-width]).max())


def concentration_Yn(ledger: W.LocalTimeLedger | tuple[np.ndarray, int], a: float) -> int:
    """Smallest ``k`` such that some interval ``[x-k, x+k]`` holds at least ``a*n`` visits.

    Accepts a ledger or a pair ``(counts over a contiguous range, n)``.
    """
    if not 0 <= a < 1:
        raise DomainError(f"a must lie in [0, 1), got {a}")
    if isinstance(ledger, W.LocalTimeLedger):
        lo, hi = ledger.occupied_range
        counts, n = ledger.dense(lo, hi), ledger.n
    else:
        counts, n = np.asarray(ledger[0], dtype=np.int64), int(ledger[1])
    if len(counts) == 0:
        raise DomainError("empty ledger")
    need = a * n
    prefix = np.concatenate(([0], np.cumsum(counts)))
    lo_k, hi_k = 0, (len(counts) + 1) // 2
    while lo_k < hi_k:
        mid = (lo_k + hi_k) // 2
        if _max_window(prefix, 2 * mid + 1) >= need:
            hi_k = mid
        else:
            lo_k = mid + 1
    return lo_k


def geometric_checkpoints(n_max: int, ratio: float = 2.0, first: int = 16) -> list[int]:
    pts, n = [], float(first)
    while n <= n_max:
        pts.append(int(n))
        n *= ratio
    if not pts or pts[-1] != n_max:
        pts.append(int(n_max))
    return sorted(set(p for p in pts if p >= 16))


def concentration_trace(env: Environment, state: W.WalkState, checkpoints: Sequence[int],
                        levels: Sequence[float]) -> dict:
    """``Y_n`` and ``Y_n / log log log n`` at each checkpoint ``n >= 16``, with running maxima."""
    pts = sorted(int(n) for n in checkpoints if n >= 16)
    ledger = W.LocalTimeLedger(state.position)
    series = {str(a): [] for a in levels}
    best = {str(a): 0.0 for a in levels}
    for n in pts:
        if n > state.time:
            _, state = W.run_until(state, env, W.StopSpec(frozenset(), n - state.time), ledger)
        lll = math.log(math.log(math.log(n)))
        for a in levels:
            y = concentration_Yn(ledger, a)
            ratio = y / lll
            best[str(a)] = max(best[str(a)], ratio)
            series[str(a)].append({"n": n, "Y": y, "ratio": ratio, "running_max": best[str(a)]})
    return {"checkpoints": pts, "series": series}


# -- validation campaign --------------------------------------------------------------------

@dataclass
class Cell:
    formula: str
    label: str
    exact: float
    empirical: float
    se: float
    n: int
    passed: bool
    kind: str = "agreement"      # "agreement": |emp - exact| <= 3 SE; "bound": emp >= exact - 3 SE


def _agreement(formula, label, exact, hits, n) -> Cell:
    p = hits / n
    se = binomial_se(p, n)
    # an exact 0 or 1 has zero binomial spread; use the model spread instead
    se_test = max(se, binomial_se(exact, n))
    return Cell(formula, label, exact, p, se, n, abs(p - exact) <= 3 * se_test + 1e-12)


def exit_cells(law: EnvironmentLaw, n_envs: int, r: int, s: int, replicas: int, seed: int) -> list[Cell]:
    cells = []
    for e in range(n_envs):
        env = Environment(law, derive_key(seed, "exit-env", e))
        for x in range(r + 1, s):
            hits = W.exit_frequency(env, r, x, s, replicas, derive_key(seed, "exit-walk", e, x))
            cells.append(_agreement("exit-probability", f"env={e} x={x}", Q.exit_prob_left(env, r, x, s), hits, replicas))
    return cells


def excursion_cells(law: EnvironmentLaw, n_envs: int, replicas: int, seed: int,
                    offsets: Sequence[int] = (-3, -1, 1, 2, 4)) -> list[Cell]:
    cells = []
    for e in range(n_envs):
        env = Environment(law, derive_key(seed, "excursion-env", e))
        b = 0
        for dx in offsets:
            x = b + dx
            v = W.visit_counts(env, b, b, x, replicas, derive_key(seed, "excursion-walk", e, x))
            v = v[v >= 0]
            exact = Q.excursion_mean_exact(env, b, x)
            mean, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))
            cells.append(Cell("excursion-mean", f"env={e} b={b} x={x}", exact, mean, se, len(v),
                              abs(mean - exact) <= 3 * se))
    return cells


def geometric_cells(law: EnvironmentLaw, n_envs: int, replicas: int, seed: int,
                    left: int = -6, x: int = 0, start: int = 2) -> list[Cell]:
    cells = []
    for e in range(n_envs):
        env = Environment(law, derive_key(seed, "geometric-env", e))
        pi = Q.escape_prob(env, left, x)
        v = W.visit_counts(env, start, left, x, replicas, derive_key(seed, "geometric-walk", e))
        rep = geometric_check(v, pi)
        ok = bool(rep.passed) if rep.passed is not None else False
        cells.append(Cell("geometric-visits", f"env={e} left={left} x={x} ks={rep.ks_distance:.4g} "
                          f"crit={rep.ks_critical:.4g} q={rep.q_hat:.4g}",
                          1 / pi, rep.mean, rep.mean_se, rep.n_conditioned, ok))
    return cells


def first_passage_frequency(law: EnvironmentLaw, x: float, y: float, z: float, replicas: int,
                            seed: int, upper_first: bool = True) -> int:
    """How many fresh potentials started at ``y`` do the relevant crossing first."""
    hits = 0
    for i in range(replicas):
        env = Environment(law, derive_key(seed, "fp", x, y, z, upper_first, i))
        fp = VL.first_passage_potential(env, y, z, x, lower_strict=not upper_first)
        hits += (fp.kind == "upper-first") == upper_first
    return hits


MARTINGALE_TRIPLES = ((0.0, 1.0, 2.0), (0.0, 1.0, 3.0), (0.0, 2.0, 3.0), (-2.0, 0.0, 2.0),
                      (-5.0, 0.0, 1.0), (-1.0, 0.0, 5.0), (0.0, 3.0, 10.0))


def martingale_cells(law: EnvironmentLaw, replicas: int, seed: int,
                     triples=MARTINGALE_TRIPLES) -> list[Cell]:
    cells = []
    for x, y, z in triples:
        for upper_first, formula in ((True, "upper-first-bound"), (False, "lower-first-bound")):
            bound = VL.martingale_lower_bound(x, y, z, law.M, upper_first)
            hits = first_passage_frequency(law, x, y, z, replicas, seed, upper_first)
            p = hits / replicas
            se = binomial_se(p, replicas)
            cells.append(Cell(formula, f"x={x:g} y={y:g} z={z:g}", bound, p, se, replicas,
                              p >= bound - 3 * se, kind="bound"))
    return cells


MIN_VALIDATE_REPLICAS = 10 ** 4


def validate_formulas(law: EnvironmentLaw, replicas: int = MIN_VALIDATE_REPLICAS, seed: int = 0,
                      n_envs: int = 10) -> dict:
    """Monte Carlo against exact values for every quenched formula.

    A formula passes when at least 95% of its cells do.
    """
    if replicas < MIN_VALIDATE_REPLICAS:
        raise DomainError(f"need at least {MIN_VALIDATE_REPLICAS} replicas per cell")
    cells = (exit_cells(law, n_envs, -10, 10, replicas, seed)
             + excursion_cells(law, n_envs, replicas, seed)
             + geometric_cells(law, n_envs, replicas, seed)
             + martingale_cells(law, replicas, seed))
    summary = {}
    for f in sorted({c.formula for c in cells}):
        mine = [c for c in cells if c.formula == f]
        rate = sum(c.passed for c in mine) / len(mine)
        summary[f] = {"cells": len(mine), "pass_rate": rate, "passed": rate >= 0.95}
    return {"cells": [asdict(c) for c in cells], "summary": summary,
            "passed": all(s["passed"] for s in summary.values())}
