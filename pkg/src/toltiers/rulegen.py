"""Statistical routing-rule generation.

For every candidate ensemble config, the generator repeatedly resamples the
training records (bootstrap, samples of one tenth the training size drawn
with replacement), simulates the config on each sample, and keeps sampling
until a spread-based confidence criterion holds for all three observed metric
series. The recorded per-metric maxima are the config's worst-case estimate;
a rule table then maps each tolerance to the best qualifying config for the
chosen objective.

Note on the stopping rule: the criterion rewards observed spread (it stays
false until extreme z-scores appear in the series), so it keeps sampling
until the recorded extremes are genuine outliers of the trial distribution.
A constant series can never produce extreme z-scores and counts as confident
immediately; a trial-count cap guards against non-termination, and summaries
carry their trial counts so convergence can be audited.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .domain import (
    OBJECTIVE_COST,
    OBJECTIVE_RESPONSE_TIME,
    OBJECTIVES,
    DomainError,
    EnsembleConfig,
    degradation,
)
from .policysim import config_outcome_arrays
from .trace import Trace, arrays_from_records, trace_to_bytes

MAX_TOLERANCE = 0.10

# Acklam's rational approximation of the standard normal quantile, refined
# below with one Halley step to full double precision.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF, accurate to ~1e-15."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"quantile probability must be in (0, 1), got {p}")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(
            ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        ) / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0)
    # one Halley refinement step
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def confident(values: Sequence[float], confidence: float) -> bool:
    """Spread criterion over an observed metric series.

    True when the standardized series (population z-scores) shows either
    symmetric extreme outliers or a total range wider than twice the normal
    quantile of `confidence`. A zero-variance series is confident.
    """
    vals = np.asarray(values, dtype=float)
    if vals.size < 2:
        raise DomainError("confident() needs at least 2 values")
    std = float(vals.std())
    if std == 0.0:
        return True
    mean = float(vals.mean())
    zmin = (float(vals.min()) - mean) / std
    zmax = (float(vals.max()) - mean) / std
    s = normal_quantile(confidence)
    return (zmin < -s and zmax > s) or (zmax - zmin > 2.0 * s)


class _Welford:
    """Running mean/variance/extremes; same decision as confident()."""

    __slots__ = ("count", "mean", "m2", "vmin", "vmax")

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0
        self.vmin = math.inf
        self.vmax = -math.inf

    def add(self, x: float):
        self.count += 1
        d = x - self.mean
        self.mean += d / self.count
        self.m2 += d * (x - self.mean)
        if x < self.vmin:
            self.vmin = x
        if x > self.vmax:
            self.vmax = x

    def confident(self, s: float) -> bool:
        if self.count < 2:
            return False
        var = self.m2 / self.count
        if var <= 0.0:
            return True
        std = math.sqrt(var)
        zmin = (self.vmin - self.mean) / std
        zmax = (self.vmax - self.mean) / std
        return (zmin < -s and zmax > s) or (zmax - zmin > 2.0 * s)


@dataclass(frozen=True)
class BootstrapSummary:
    """Worst-case estimate for one config, with its full trial history."""

    config: EnsembleConfig
    trials: tuple[tuple[float, float, float], ...]
    worst_err_deg: float
    worst_response_ms: float
    worst_cost_ms: float
    trial_count: int
    confidence_reached: bool

    @classmethod
    def from_trials(cls, config, trials, confidence_reached):
        trials = tuple(trials)
        return cls(
            config=config,
            trials=trials,
            worst_err_deg=max(t[0] for t in trials),
            worst_response_ms=max(t[1] for t in trials),
            worst_cost_ms=max(t[2] for t in trials),
            trial_count=len(trials),
            confidence_reached=confidence_reached,
        )


def _train_arrays(train):
    if isinstance(train, Trace):
        return train.arrays(), len(train)
    records = tuple(train)
    return arrays_from_records(records), len(records)


def bootstrap(
    config: EnsembleConfig,
    train,
    confidence: float,
    reference: EnsembleConfig,
    rng_seed,
    *,
    min_trials: int = 30,
    max_trials: int = 10_000,
    cancel_delay_ms: float = 0.0,
    degradation_mode: str = "relative",
) -> BootstrapSummary:
    """Estimate a config's worst-case (err_deg, response, cost) on resamples.

    Samples of size len(train) // 10 are drawn with replacement; sampling
    stops once all three metric series satisfy confident() (between
    min_trials and max_trials). Deterministic for a fixed rng_seed. When
    max_trials is hit first, the summary comes back flagged
    confidence_reached=False and the caller decides what to do with it.
    """
    arrays, n = _train_arrays(train)
    if n < 10:
        raise DomainError(f"bootstrap needs at least 10 training records, got {n}")
    if not 0.5 < confidence < 1.0:
        raise DomainError(f"confidence must be in (0.5, 1), got {confidence}")
    if min_trials < 2:
        raise DomainError("min_trials must be >= 2")
    if max_trials < min_trials:
        raise DomainError("max_trials must be >= min_trials")

    cfg_err, cfg_resp, cfg_cost, _ = config_outcome_arrays(
        arrays, config, cancel_delay_ms
    )
    ref_err = config_outcome_arrays(arrays, reference, cancel_delay_ms)[0]

    k = n // 10
    rng = np.random.default_rng(rng_seed)
    s = normal_quantile(confidence)
    trackers = (_Welford(), _Welford(), _Welford())
    trials = []
    reached = False
    while True:
        idx = rng.integers(0, n, size=k)
        deg = degradation(
            float(cfg_err[idx].mean()), float(ref_err[idx].mean()), degradation_mode
        )
        trial = (deg, float(cfg_resp[idx].mean()), float(cfg_cost[idx].mean()))
        trials.append(trial)
        for tracker, value in zip(trackers, trial):
            tracker.add(value)
        if len(trials) >= min_trials and all(t.confident(s) for t in trackers):
            reached = True
            break
        if len(trials) >= max_trials:
            break
    return BootstrapSummary.from_trials(config, trials, reached)


def bootstrap_candidates(
    train,
    candidates: Sequence[EnsembleConfig],
    confidence: float,
    reference: EnsembleConfig,
    seed,
    **kwargs,
) -> list[BootstrapSummary]:
    """Bootstrap every candidate with an independent child RNG stream."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    children = seed.spawn(len(candidates))
    return [
        bootstrap(cfg, train, confidence, reference, child, **kwargs)
        for cfg, child in zip(candidates, children)
    ]


@dataclass(frozen=True)
class RuleEntry:
    tolerance: float
    config: EnsembleConfig
    worst_err_deg: float
    worst_response_ms: float
    worst_cost_ms: float

    def to_dict(self) -> dict:
        return {
            "tolerance": self.tolerance,
            "config": self.config.to_dict(),
            "predicted": {
                "worst_err_deg": self.worst_err_deg,
                "worst_response_ms": self.worst_response_ms,
                "worst_cost_ms": self.worst_cost_ms,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleEntry":
        p = d["predicted"]
        return cls(
            tolerance=float(d["tolerance"]),
            config=EnsembleConfig.from_dict(d["config"]),
            worst_err_deg=float(p["worst_err_deg"]),
            worst_response_ms=float(p["worst_response_ms"]),
            worst_cost_ms=float(p["worst_cost_ms"]),
        )


FORMAT_NAME = "toltiers-rules-v1"


@dataclass(frozen=True)
class TierRuleTable:
    """Tolerance -> config mapping for one optimization objective."""

    objective: str
    entries: tuple[RuleEntry, ...]
    reference_config: EnsembleConfig
    confidence_level: float | None
    provenance: dict

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if self.objective not in OBJECTIVES:
            raise DomainError(f"unknown objective {self.objective!r}")
        if not self.entries:
            raise DomainError("rule table needs at least one entry")
        tols = [e.tolerance for e in self.entries]
        if any(b <= a for a, b in zip(tols, tols[1:])):
            raise DomainError("rule table tolerances must be strictly increasing")
        for e in self.entries:
            if e.worst_err_deg > e.tolerance + 1e-12:
                raise DomainError(
                    f"entry at tolerance {e.tolerance} predicts degradation "
                    f"{e.worst_err_deg} above its own tolerance"
                )

    @property
    def tolerance_range(self) -> tuple[float, float]:
        return self.entries[0].tolerance, self.entries[-1].tolerance

    def lookup(self, tolerance: float) -> RuleEntry:
        """Entry with the largest tolerance not exceeding the requested one."""
        lo, hi = self.tolerance_range
        if tolerance < lo or tolerance > hi:
            raise DomainError(
                f"tolerance {tolerance} outside rule table range [{lo}, {hi}]"
            )
        best = self.entries[0]
        for e in self.entries:
            if e.tolerance <= tolerance:
                best = e
            else:
                break
        return best

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "objective": self.objective,
            "confidence_level": self.confidence_level,
            "reference_config": self.reference_config.to_dict(),
            "provenance": self.provenance,
            "entries": [e.to_dict() for e in self.entries],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TierRuleTable":
        if d.get("format") != FORMAT_NAME:
            raise DomainError(f"unknown rule table format {d.get('format')!r}")
        return cls(
            objective=d["objective"],
            entries=tuple(RuleEntry.from_dict(e) for e in d["entries"]),
            reference_config=EnsembleConfig.from_dict(d["reference_config"]),
            confidence_level=d.get("confidence_level"),
            provenance=dict(d.get("provenance") or {}),
        )


def save_rule_table(table: TierRuleTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(table.to_json())


def load_rule_table(path) -> TierRuleTable:
    with open(path, "r", encoding="utf-8") as fh:
        return TierRuleTable.from_dict(json.load(fh))


def trace_digest(trace: Trace) -> str:
    return hashlib.sha256(trace_to_bytes(trace)).hexdigest()


def candidates_digest(candidates: Sequence[EnsembleConfig]) -> str:
    payload = json.dumps(
        [c.to_dict() for c in candidates], sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _objective_value(summary: BootstrapSummary, objective: str) -> float:
    if objective == OBJECTIVE_RESPONSE_TIME:
        return summary.worst_response_ms
    return summary.worst_cost_ms


def _clean_tolerances(tolerances) -> list[float]:
    tols = sorted(set(float(t) for t in tolerances))
    if not tols:
        raise DomainError("at least one tolerance required")
    for t in tols:
        if not 0.0 <= t <= MAX_TOLERANCE + 1e-9:
            raise DomainError(
                f"tolerance {t} outside supported range [0, {MAX_TOLERANCE}]"
            )
    return tols


def generate(
    summaries: Sequence[BootstrapSummary],
    tolerances: Sequence[float],
    objective: str,
    reference: EnsembleConfig,
    confidence_level: float | None = None,
    provenance: dict | None = None,
) -> TierRuleTable:
    """Map each tolerance to the best qualifying config.

    A summary qualifies at tolerance t when its worst-case degradation is at
    most t and its sampling reached confidence; among qualifiers the one
    minimizing the worst-case objective wins (ties: lower degradation, then
    earlier candidate order). When nothing qualifies, the tier falls back to
    the reference config.
    """
    if objective not in OBJECTIVES:
        raise DomainError(f"unknown objective {objective!r}")
    summaries = list(summaries)
    if not summaries:
        raise DomainError("generate() needs at least one summary")
    ref_summary = next((s for s in summaries if s.config == reference), None)
    if ref_summary is None:
        raise DomainError("reference config summary missing from summaries")

    entries = []
    for tol in _clean_tolerances(tolerances):
        best = None
        best_key = None
        for order, summary in enumerate(summaries):
            if not summary.confidence_reached or summary.worst_err_deg > tol:
                continue
            key = (_objective_value(summary, objective), summary.worst_err_deg, order)
            if best_key is None or key < best_key:
                best, best_key = summary, key
        if best is None:
            best = ref_summary
        entries.append(
            RuleEntry(
                tolerance=tol,
                config=best.config,
                worst_err_deg=best.worst_err_deg,
                worst_response_ms=best.worst_response_ms,
                worst_cost_ms=best.worst_cost_ms,
            )
        )

    counts = sorted(s.trial_count for s in summaries)
    prov = dict(provenance or {})
    prov.setdefault("method", "bootstrap")
    prov["trials_min"] = counts[0]
    prov["trials_median"] = counts[len(counts) // 2]
    prov["trials_max"] = counts[-1]
    return TierRuleTable(
        objective=objective,
        entries=tuple(entries),
        reference_config=reference,
        confidence_level=confidence_level,
        provenance=prov,
    )


def point_estimates(
    train,
    candidates: Sequence[EnsembleConfig],
    reference: EnsembleConfig,
    cancel_delay_ms: float = 0.0,
    degradation_mode: str = "relative",
) -> list[tuple[float, float, float]]:
    """One full-train (err_deg, response, cost) triple per candidate."""
    arrays, n = _train_arrays(train)
    if n == 0:
        raise DomainError("point_estimates: empty training set")
    ref_err = float(config_outcome_arrays(arrays, reference, cancel_delay_ms)[0].mean())
    out = []
    for cfg in candidates:
        err, resp, cost, _ = config_outcome_arrays(arrays, cfg, cancel_delay_ms)
        out.append(
            (
                degradation(float(err.mean()), ref_err, degradation_mode),
                float(resp.mean()),
                float(cost.mean()),
            )
        )
    return out


def naive_select(
    train,
    candidates: Sequence[EnsembleConfig],
    tolerance: float,
    objective: str,
    reference: EnsembleConfig,
    **kwargs,
) -> EnsembleConfig:
    """Point-estimate baseline: no resampling, no worst case.

    Each candidate is simulated once on the entire training set; whatever
    clears the tolerance on that single estimate competes on the objective.
    This is the violation-prone baseline (the customary candidate set is the
    single-version configs only).
    """
    if objective not in OBJECTIVES:
        raise DomainError(f"unknown objective {objective!r}")
    estimates = point_estimates(train, candidates, reference, **kwargs)
    metric = 1 if objective == OBJECTIVE_RESPONSE_TIME else 2
    best = None
    best_key = None
    for order, (cfg, est) in enumerate(zip(candidates, estimates)):
        if est[0] > tolerance:
            continue
        key = (est[metric], est[0], order)
        if best_key is None or key < best_key:
            best, best_key = cfg, key
    return best if best is not None else reference


def naive_table(
    train,
    candidates: Sequence[EnsembleConfig],
    tolerances: Sequence[float],
    objective: str,
    reference: EnsembleConfig,
    provenance: dict | None = None,
    **kwargs,
) -> TierRuleTable:
    """Rule table built from naive point estimates (for comparison runs)."""
    if objective not in OBJECTIVES:
        raise DomainError(f"unknown objective {objective!r}")
    estimates = point_estimates(train, candidates, reference, **kwargs)
    try:
        ref_idx = next(i for i, c in enumerate(candidates) if c == reference)
    except StopIteration:
        raise DomainError("reference config missing from candidates")
    metric = 1 if objective == OBJECTIVE_RESPONSE_TIME else 2
    entries = []
    for tol in _clean_tolerances(tolerances):
        best = None
        best_key = None
        for order, (cfg, est) in enumerate(zip(candidates, estimates)):
            if est[0] > tol:
                continue
            key = (est[metric], est[0], order)
            if best_key is None or key < best_key:
                best, best_key = order, key
        idx = best if best is not None else ref_idx
        est = estimates[idx]
        entries.append(
            RuleEntry(
                tolerance=tol,
                config=candidates[idx],
                worst_err_deg=est[0],
                worst_response_ms=est[1],
                worst_cost_ms=est[2],
            )
        )
    prov = dict(provenance or {})
    prov.setdefault("method", "naive-point-estimate")
    return TierRuleTable(
        objective=objective,
        entries=tuple(entries),
        reference_config=reference,
        confidence_level=None,
        provenance=prov,
    )
