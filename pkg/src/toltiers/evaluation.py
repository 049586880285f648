"""Cross-validated evaluation of the four routing policies.

Each fold randomly re-splits the trace into 90% training and 10% held-out
records, trains a naive point-estimate baseline plus the three
statistically-backed policies on the training side, then measures every
resulting rule table on the held-out side across the full tolerance sweep.
Reported numbers are means over folds; violations (held-out degradation
above the specified tolerance) are tracked per fold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import (
    OBJECTIVE_COST,
    OBJECTIVE_RESPONSE_TIME,
    DomainError,
    EnsembleConfig,
    degradation,
)
from .policysim import config_outcome_arrays, default_thresholds, enumerate_candidates
from .rulegen import TierRuleTable, bootstrap_candidates, generate, naive_table
from .trace import Trace

POLICY_NAIVE = "Naive-OSFA"
POLICY_TT_OSFA = "TT-OSFA"
POLICY_TT_RESP = "TT-Opt-Resp-Time"
POLICY_TT_COST = "TT-Opt-Cost"

# canonical objective each policy is reported under
POLICY_OBJECTIVES = {
    POLICY_NAIVE: (OBJECTIVE_RESPONSE_TIME, OBJECTIVE_COST),
    POLICY_TT_OSFA: (OBJECTIVE_RESPONSE_TIME, OBJECTIVE_COST),
    POLICY_TT_RESP: (OBJECTIVE_RESPONSE_TIME,),
    POLICY_TT_COST: (OBJECTIVE_COST,),
}
TT_POLICIES = (POLICY_TT_OSFA, POLICY_TT_RESP, POLICY_TT_COST)
REPORT_TOLERANCES = (0.01, 0.05, 0.10)


@dataclass(frozen=True)
class EvalCell:
    """Held-out measurement of one rule-table entry in one fold."""

    fold: int
    policy: str
    objective: str
    tolerance: float
    actual_degradation: float
    mean_response_ms: float
    mean_cost_ms: float
    violation: bool
    config: EnsembleConfig


@dataclass(frozen=True)
class EvalReport:
    mode: str
    folds: int
    tolerances: tuple[float, ...]
    confidence: float
    seed: int
    cells: tuple[EvalCell, ...]

    def select(self, policy=None, objective=None, tolerance=None, fold=None):
        out = []
        for c in self.cells:
            if policy is not None and c.policy != policy:
                continue
            if objective is not None and c.objective != objective:
                continue
            if tolerance is not None and c.tolerance != tolerance:
                continue
            if fold is not None and c.fold != fold:
                continue
            out.append(c)
        return out

    def violation_count(self, policy=None) -> int:
        return sum(c.violation for c in self.select(policy=policy))

    def fold_mean(self, policy: str, objective: str, tolerance: float):
        """(degradation, response_ms, cost_ms) averaged over folds."""
        cells = self.select(policy=policy, objective=objective, tolerance=tolerance)
        if not cells:
            raise DomainError(
                f"no cells for {policy}/{objective} at tolerance {tolerance}"
            )
        return (
            float(np.mean([c.actual_degradation for c in cells])),
            float(np.mean([c.mean_response_ms for c in cells])),
            float(np.mean([c.mean_cost_ms for c in cells])),
        )

    def latency_improvement(self, tolerance: float) -> float:
        """1 - latency(TT-Opt-Resp-Time) / latency(TT-OSFA), fold means."""
        opt = self.fold_mean(POLICY_TT_RESP, OBJECTIVE_RESPONSE_TIME, tolerance)[1]
        base = self.fold_mean(POLICY_TT_OSFA, OBJECTIVE_RESPONSE_TIME, tolerance)[1]
        return 1.0 - opt / base

    def cost_improvement(self, tolerance: float) -> float:
        """1 - cost(TT-Opt-Cost) / cost(TT-OSFA), fold means."""
        opt = self.fold_mean(POLICY_TT_COST, OBJECTIVE_COST, tolerance)[2]
        base = self.fold_mean(POLICY_TT_OSFA, OBJECTIVE_COST, tolerance)[2]
        return 1.0 - opt / base


def fold_indices(
    record_count: int, folds: int, seed, disjoint: bool = False
) -> list[tuple[np.ndarray, np.ndarray]]:
    """(train, eval) index pairs per fold, deterministic under the seed.

    Default mode independently re-splits the records for every fold (train
    share 1 - 1/folds); disjoint mode shuffles once and rotates through
    equal eval blocks.
    """
    if folds < 2:
        raise DomainError("folds must be >= 2")
    if record_count < folds:
        raise DomainError("trace smaller than fold count")
    master = np.random.SeedSequence(seed)
    eval_count = record_count // folds
    out = []
    if disjoint:
        perm = np.random.default_rng(master).permutation(record_count)
        for i in range(folds):
            ev = perm[i * eval_count : (i + 1) * eval_count]
            tr = np.concatenate([perm[: i * eval_count], perm[(i + 1) * eval_count :]])
            out.append((tr, ev))
    else:
        for child in master.spawn(folds):
            perm = np.random.default_rng(child).permutation(record_count)
            out.append((perm[eval_count:], perm[:eval_count]))
    return out


def _measure(
    eval_trace: Trace,
    table: TierRuleTable,
    reference: EnsembleConfig,
    cache: dict,
    cancel_delay_ms: float,
    degradation_mode: str,
):
    """Per-tolerance held-out (deg, resp, cost, config) for one table."""
    arrays = eval_trace.arrays()

    def evaluate(config: EnsembleConfig):
        if config not in cache:
            err, resp, cost, _ = config_outcome_arrays(arrays, config, cancel_delay_ms)
            cache[config] = (float(err.mean()), float(resp.mean()), float(cost.mean()))
        return cache[config]

    ref_err = evaluate(reference)[0]
    rows = []
    for entry in table.entries:
        err, resp, cost = evaluate(entry.config)
        deg = degradation(err, ref_err, degradation_mode)
        rows.append((entry.tolerance, deg, resp, cost, entry.config))
    return rows


def run_eval(
    trace: Trace,
    folds: int = 10,
    tolerances: Sequence[float] | None = None,
    confidence: float = 0.999,
    seed: int = 0,
    *,
    thresholds: Sequence[float] | None = None,
    pairs: Sequence[tuple[int, int]] | None = None,
    disjoint_folds: bool = False,
    cancel_delay_ms: float = 0.0,
    degradation_mode: str = "relative",
    min_train_records: int = 1000,
    min_trials: int = 30,
    max_trials: int = 10_000,
) -> EvalReport:
    """Train and evaluate all four policies over cross-validation folds."""
    if tolerances is None:
        tolerances = [i / 1000 for i in range(0, 101)]
    tolerances = list(tolerances)
    if thresholds is None:
        thresholds = default_thresholds()

    splits = fold_indices(len(trace), folds, seed, disjoint_folds)
    for train_idx, _ in splits:
        if len(train_idx) < min_train_records:
            raise DomainError(
                f"training split of {len(train_idx)} records is below the "
                f"required {min_train_records}"
            )

    cells: list[EvalCell] = []
    if tolerances:
        boot_seeds = np.random.SeedSequence((seed, 1)).spawn(folds)
        reference = EnsembleConfig.osfa(trace.version_count)
        kwargs = dict(
            cancel_delay_ms=cancel_delay_ms, degradation_mode=degradation_mode
        )
        for fold, (train_idx, eval_idx) in enumerate(splits):
            train = trace.subset(train_idx)
            held_out = trace.subset(eval_idx)
            candidates = enumerate_candidates(train, thresholds, pairs)
            osfa_candidates = [c for c in candidates if c.kind == "osfa"]
            summaries = bootstrap_candidates(
                train,
                candidates,
                confidence,
                reference,
                boot_seeds[fold],
                min_trials=min_trials,
                max_trials=max_trials,
                **kwargs,
            )
            osfa_summaries = [s for s in summaries if s.config.kind == "osfa"]
            prov = {"fold": fold, "seed": seed}

            tables = {
                (POLICY_NAIVE, OBJECTIVE_RESPONSE_TIME): naive_table(
                    train, osfa_candidates, tolerances,
                    OBJECTIVE_RESPONSE_TIME, reference, prov, **kwargs,
                ),
                (POLICY_NAIVE, OBJECTIVE_COST): naive_table(
                    train, osfa_candidates, tolerances,
                    OBJECTIVE_COST, reference, prov, **kwargs,
                ),
                (POLICY_TT_OSFA, OBJECTIVE_RESPONSE_TIME): generate(
                    osfa_summaries, tolerances, OBJECTIVE_RESPONSE_TIME,
                    reference, confidence, prov,
                ),
                (POLICY_TT_OSFA, OBJECTIVE_COST): generate(
                    osfa_summaries, tolerances, OBJECTIVE_COST,
                    reference, confidence, prov,
                ),
                (POLICY_TT_RESP, OBJECTIVE_RESPONSE_TIME): generate(
                    summaries, tolerances, OBJECTIVE_RESPONSE_TIME,
                    reference, confidence, prov,
                ),
                (POLICY_TT_COST, OBJECTIVE_COST): generate(
                    summaries, tolerances, OBJECTIVE_COST,
                    reference, confidence, prov,
                ),
            }

            cache: dict = {}
            for (policy, objective), table in tables.items():
                rows = _measure(
                    held_out, table, reference, cache,
                    cancel_delay_ms, degradation_mode,
                )
                for tol, deg, resp, cost, config in rows:
                    cells.append(
                        EvalCell(
                            fold=fold,
                            policy=policy,
                            objective=objective,
                            tolerance=tol,
                            actual_degradation=deg,
                            mean_response_ms=resp,
                            mean_cost_ms=cost,
                            violation=deg > tol,
                            config=config,
                        )
                    )

    return EvalReport(
        mode=trace.mode,
        folds=folds,
        tolerances=tuple(sorted(set(float(t) for t in tolerances))),
        confidence=confidence,
        seed=seed,
        cells=tuple(cells),
    )


_LATENCY_COLUMNS = (
    (POLICY_NAIVE, OBJECTIVE_RESPONSE_TIME),
    (POLICY_TT_OSFA, OBJECTIVE_RESPONSE_TIME),
    (POLICY_TT_RESP, OBJECTIVE_RESPONSE_TIME),
    (POLICY_TT_COST, OBJECTIVE_COST),
)
_COST_COLUMNS = (
    (POLICY_NAIVE, OBJECTIVE_COST),
    (POLICY_TT_OSFA, OBJECTIVE_COST),
    (POLICY_TT_RESP, OBJECTIVE_RESPONSE_TIME),
    (POLICY_TT_COST, OBJECTIVE_COST),
)


def _column_name(policy: str) -> str:
    return policy.lower().replace("-", "_")


def report(results: EvalReport, out_dir, plots: bool = True) -> dict[str, Path]:
    """Write violations/latency/cost CSVs, a text summary, and figures."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}

    path = out_dir / "violations.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(
            ["fold", "policy", "objective", "tolerance", "actual_degradation",
             "violation"]
        )
        for c in results.cells:
            w.writerow(
                [c.fold, c.policy, c.objective, f"{c.tolerance:.6g}",
                 f"{c.actual_degradation:.8g}", int(c.violation)]
            )
    written["violations"] = path

    for name, columns, metric_index in (
        ("latency", _LATENCY_COLUMNS, 1),
        ("cost", _COST_COLUMNS, 2),
    ):
        path = out_dir / f"{name}.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["tolerance"] + [_column_name(p) for p, _ in columns])
            for tol in results.tolerances:
                row = [f"{tol:.6g}"]
                for policy, objective in columns:
                    val = results.fold_mean(policy, objective, tol)[metric_index]
                    row.append(f"{val:.6g}")
                w.writerow(row)
        written[name] = path

    path = out_dir / "summary.txt"
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"mode={results.mode} folds={results.folds} "
                 f"confidence={results.confidence} seed={results.seed}\n")
        for policy in (POLICY_NAIVE,) + TT_POLICIES:
            fh.write(f"violations {policy}: {results.violation_count(policy)}\n")
        for tol in REPORT_TOLERANCES:
            if tol not in results.tolerances:
                continue
            lat = results.latency_improvement(tol)
            cost = results.cost_improvement(tol)
            fh.write(
                f"tol={tol:g} {POLICY_TT_RESP} latency "
                f"{-lat * 100:+.1f}% vs {POLICY_TT_OSFA}\n"
            )
            fh.write(
                f"tol={tol:g} {POLICY_TT_COST} cost "
                f"{-cost * 100:+.1f}% vs {POLICY_TT_OSFA}\n"
            )
    written["summary"] = path

    if plots and results.cells:
        from . import plots as plots_mod

        written["violations_png"] = plots_mod.violations_figure(
            results, out_dir / "violations.png"
        )
        written["latency_png"] = plots_mod.tolerance_curve_figure(
            results, _LATENCY_COLUMNS, 1, "mean response time [ms]",
            out_dir / "latency.png",
        )
        written["cost_png"] = plots_mod.tolerance_curve_figure(
            results, _COST_COLUMNS, 2, "mean machine cost [ms]",
            out_dir / "cost.png",
        )
    return written
