"""Deterministic trace-driven simulation of the routing policies.

Per-request semantics are the single source of truth shared with the live
gateway: a one-version deployment (osfa), sequential fallback gated on the
first result's confidence (seq), and concurrent hedged dispatch with
cancellation of the slower version (conc). Early termination (ET) means one
version's result sufficed; full operation (FO) means both were consulted.

Response time counts one client network round trip plus the server time on
the critical path. Cost counts billed machine time only: every millisecond a
backend actually worked, including the partial work of a canceled version.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    CONC,
    OSFA,
    SEQ,
    DomainError,
    EnsembleConfig,
    RequestRecord,
    SimResult,
    degradation,
)
from .trace import Trace, TraceArrays


@dataclass(frozen=True)
class RequestOutcome:
    """What one policy did with one request."""

    error: float
    response_ms: float
    cost_ms: float
    early_terminated: bool


def simulate_request(
    record: RequestRecord, config: EnsembleConfig, cancel_delay_ms: float = 0.0
) -> RequestOutcome:
    """Replay one request under one config.

    The network component is the anchor version's measured round trip (the
    single version for osfa, the first-dispatched for seq, the fast one for
    a concurrent ET; a concurrent FO completes with the max server time).
    """
    if config.kind == OSFA:
        o = record.outcome(config.version)
        return RequestOutcome(o.error, o.network_ms + o.server_ms, o.server_ms, True)

    if config.kind == SEQ:
        o1 = record.outcome(config.first)
        if o1.confidence >= config.threshold:
            return RequestOutcome(
                o1.error, o1.network_ms + o1.server_ms, o1.server_ms, True
            )
        o2 = record.outcome(config.second)
        if o2.confidence > o1.confidence:
            err = o2.error
        elif o1.confidence > o2.confidence:
            err = o1.error
        else:
            # tie: the nominally more accurate (higher-index) version
            err = o2.error if config.second > config.first else o1.error
        return RequestOutcome(
            err,
            o1.network_ms + o1.server_ms + o2.server_ms,
            o1.server_ms + o2.server_ms,
            False,
        )

    of = record.outcome(config.fast)
    os_ = record.outcome(config.slow)
    if of.confidence >= config.threshold:
        # ET: the slow version is canceled after the fast one finished, so it
        # bills at most fast time plus the cancellation delivery delay.
        cost = of.server_ms + min(os_.server_ms, of.server_ms + cancel_delay_ms)
        return RequestOutcome(of.error, of.network_ms + of.server_ms, cost, True)
    err = of.error if of.confidence > os_.confidence else os_.error
    return RequestOutcome(
        err,
        of.network_ms + max(of.server_ms, os_.server_ms),
        of.server_ms + os_.server_ms,
        False,
    )


def _neumaier_sum(values: Iterable[float]) -> float:
    """Compensated summation; order-independent to ~1e-16 relative."""
    total = 0.0
    comp = 0.0
    for v in values:
        t = total + v
        if abs(total) >= abs(v):
            comp += (total - t) + v
        else:
            comp += (v - t) + total
        total = t
    return total + comp


def simulate(
    sample: Sequence[RequestRecord],
    config: EnsembleConfig,
    reference: EnsembleConfig,
    cancel_delay_ms: float = 0.0,
    degradation_mode: str = "relative",
) -> SimResult:
    """Mean per-request outcomes of config over the sample.

    error_degradation compares against the reference config simulated on the
    same sample. degradation_mode "relative" divides by the reference error
    (absolute fallback at zero); "absolute" always takes the difference.
    """
    if len(sample) == 0:
        raise DomainError("simulate: empty sample")
    outcomes = [simulate_request(rec, config, cancel_delay_ms) for rec in sample]
    n = len(sample)
    mean_error = _neumaier_sum(o.error for o in outcomes) / n
    mean_response = _neumaier_sum(o.response_ms for o in outcomes) / n
    mean_cost = _neumaier_sum(o.cost_ms for o in outcomes) / n
    et_fraction = sum(o.early_terminated for o in outcomes) / n
    ref_error = (
        mean_error
        if config == reference
        else _neumaier_sum(
            simulate_request(rec, reference, cancel_delay_ms).error for rec in sample
        )
        / n
    )
    return SimResult(
        mean_error=mean_error,
        error_degradation=degradation(mean_error, ref_error, degradation_mode),
        mean_response_ms=mean_response,
        mean_cost_ms=mean_cost,
        et_fraction=et_fraction,
    )


def config_outcome_arrays(
    arrays: TraceArrays, config: EnsembleConfig, cancel_delay_ms: float = 0.0
):
    """Vectorized simulate_request over a whole trace.

    Returns (error, response_ms, cost_ms, early_terminated) arrays whose
    elements are bit-identical to the scalar path; only aggregation order
    may differ downstream.
    """
    s, net, err, conf = arrays.server, arrays.network, arrays.error, arrays.confidence
    n_versions = s.shape[1]
    for v in config.versions():
        if not 1 <= v <= n_versions:
            raise DomainError(f"version {v} not in trace (has {n_versions})")

    if config.kind == OSFA:
        v = config.version - 1
        et = np.ones(s.shape[0], dtype=bool)
        return err[:, v].copy(), net[:, v] + s[:, v], s[:, v].copy(), et

    if config.kind == SEQ:
        f, sec = config.first - 1, config.second - 1
        et = conf[:, f] >= config.threshold
        response = np.where(
            et, net[:, f] + s[:, f], net[:, f] + s[:, f] + s[:, sec]
        )
        cost = np.where(et, s[:, f], s[:, f] + s[:, sec])
        if config.second > config.first:
            second_wins = conf[:, sec] >= conf[:, f]
        else:
            second_wins = conf[:, sec] > conf[:, f]
        fo_error = np.where(second_wins, err[:, sec], err[:, f])
        return np.where(et, err[:, f], fo_error), response, cost, et

    f, sl = config.fast - 1, config.slow - 1
    et = conf[:, f] >= config.threshold
    response = np.where(
        et, net[:, f] + s[:, f], net[:, f] + np.maximum(s[:, f], s[:, sl])
    )
    cost = np.where(
        et,
        s[:, f] + np.minimum(s[:, sl], s[:, f] + cancel_delay_ms),
        s[:, f] + s[:, sl],
    )
    fo_error = np.where(conf[:, f] > conf[:, sl], err[:, f], err[:, sl])
    return np.where(et, err[:, f], fo_error), response, cost, et


def simulate_trace(
    trace: Trace,
    config: EnsembleConfig,
    reference: EnsembleConfig,
    cancel_delay_ms: float = 0.0,
    degradation_mode: str = "relative",
) -> SimResult:
    """Vectorized simulate() over all records of a trace."""
    if len(trace) == 0:
        raise DomainError("simulate: empty sample")
    arrays = trace.arrays()
    err, resp, cost, et = config_outcome_arrays(arrays, config, cancel_delay_ms)
    mean_error = float(err.mean())
    if config == reference:
        ref_error = mean_error
    else:
        ref_error = float(config_outcome_arrays(arrays, reference)[0].mean())
    return SimResult(
        mean_error=mean_error,
        error_degradation=degradation(mean_error, ref_error, degradation_mode),
        mean_response_ms=float(resp.mean()),
        mean_cost_ms=float(cost.mean()),
        et_fraction=float(et.mean()),
    )


def enumerate_candidates(
    trace: Trace,
    thresholds: Sequence[float],
    pairs: Sequence[tuple[int, int]] | None = None,
) -> list[EnsembleConfig]:
    """Candidate configs: every single version, plus two-version ensembles
    over the selected pairs crossed with the thresholds.

    Each pair yields both sequential dispatch orders and one concurrent
    config whose fast side is the version with the lower mean server time on
    this trace. The default pair is the extreme (fastest, most accurate)
    combination.
    """
    n = trace.version_count
    thresholds = list(thresholds)
    for t in thresholds:
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"threshold out of range [0, 1]: {t}")
    if pairs is None:
        pairs = [(1, n)]
    seen = set()
    norm_pairs = []
    for a, b in pairs:
        if a == b:
            raise DomainError(f"pair versions must differ: ({a}, {b})")
        for v in (a, b):
            if not 1 <= v <= n:
                raise DomainError(f"pair version {v} not in trace (has {n})")
        key = (min(a, b), max(a, b))
        if key not in seen:
            seen.add(key)
            norm_pairs.append((a, b))

    mean_server = trace.arrays().server.mean(axis=0) if len(trace) else None
    configs = [EnsembleConfig.osfa(v) for v in range(1, n + 1)]
    for a, b in norm_pairs:
        configs.extend(EnsembleConfig.seq(a, b, t) for t in thresholds)
        configs.extend(EnsembleConfig.seq(b, a, t) for t in thresholds)
        if mean_server is not None and mean_server[a - 1] > mean_server[b - 1]:
            fast, slow = b, a
        else:
            fast, slow = a, b
        configs.extend(EnsembleConfig.conc(fast, slow, t) for t in thresholds)
    return configs


def default_thresholds(step: float = 0.1) -> list[float]:
    """Evenly spaced confidence thresholds covering [0, 1]."""
    count = round(1.0 / step)
    return [i / count for i in range(count + 1)]
