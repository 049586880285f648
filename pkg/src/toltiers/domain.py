"""Core domain types and accuracy metrics shared by every other module.

Version indices are 1-based everywhere a user sees them: version 1 is the
fastest / least accurate deployment, version n the slowest / most accurate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence


class DomainError(ValueError):
    """Raised when a domain value violates one of its invariants."""


OSFA = "osfa"
SEQ = "seq"
CONC = "conc"

OBJECTIVE_RESPONSE_TIME = "response-time"
OBJECTIVE_COST = "cost"
OBJECTIVES = (OBJECTIVE_RESPONSE_TIME, OBJECTIVE_COST)


@dataclass(frozen=True)
class VersionOutcome:
    """Measured outcome of one service version on one request.

    server_ms and network_ms are nonnegative milliseconds; error and
    confidence live in [0, 1].
    """

    server_ms: float
    network_ms: float
    error: float
    confidence: float

    def __post_init__(self):
        if self.server_ms < 0:
            raise DomainError(f"server_ms must be >= 0, got {self.server_ms}")
        if self.network_ms < 0:
            raise DomainError(f"network_ms must be >= 0, got {self.network_ms}")
        if not 0.0 <= self.error <= 1.0:
            raise DomainError(f"error out of range [0, 1]: {self.error}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DomainError(f"confidence out of range [0, 1]: {self.confidence}")


@dataclass(frozen=True)
class RequestRecord:
    """One service input with per-version measured outcomes.

    outcomes are ordered by version index: outcomes[0] is version 1.
    """

    id: str
    outcomes: tuple[VersionOutcome, ...]

    def __post_init__(self):
        if not self.outcomes:
            raise DomainError(f"record {self.id!r} has no outcomes")
        object.__setattr__(self, "outcomes", tuple(self.outcomes))

    @property
    def version_count(self) -> int:
        return len(self.outcomes)

    def outcome(self, version: int) -> VersionOutcome:
        """Outcome of a 1-based version index."""
        if not 1 <= version <= len(self.outcomes):
            raise DomainError(
                f"version {version} not in record {self.id!r} "
                f"(has {len(self.outcomes)} versions)"
            )
        return self.outcomes[version - 1]

    def errors(self) -> tuple[float, ...]:
        return tuple(o.error for o in self.outcomes)


@dataclass(frozen=True)
class EnsembleConfig:
    """A candidate deployment: a single version or a two-version ensemble.

    kind "osfa" uses `version` alone. kind "seq" dispatches `first` and
    consults `second` only when the first confidence falls below
    `threshold`. kind "conc" dispatches `fast` and `slow` together and
    cancels `slow` when the fast confidence reaches `threshold`.
    """

    kind: str
    version: int | None = None
    first: int | None = None
    second: int | None = None
    fast: int | None = None
    slow: int | None = None
    threshold: float | None = None

    def __post_init__(self):
        if self.kind == OSFA:
            if self.version is None or self.version < 1:
                raise DomainError("osfa config needs a version index >= 1")
        elif self.kind == SEQ:
            if self.first is None or self.second is None:
                raise DomainError("seq config needs first and second versions")
            if self.first == self.second:
                raise DomainError("seq versions must differ")
            self._check_threshold()
        elif self.kind == CONC:
            if self.fast is None or self.slow is None:
                raise DomainError("conc config needs fast and slow versions")
            if self.fast == self.slow:
                raise DomainError("conc versions must differ")
            self._check_threshold()
        else:
            raise DomainError(f"unknown ensemble kind {self.kind!r}")

    def _check_threshold(self):
        if self.threshold is None or not 0.0 <= self.threshold <= 1.0:
            raise DomainError(f"threshold out of range [0, 1]: {self.threshold}")

    def versions(self) -> tuple[int, ...]:
        """All version indices this config may consult."""
        if self.kind == OSFA:
            return (self.version,)
        if self.kind == SEQ:
            return (self.first, self.second)
        return (self.fast, self.slow)

    def label(self) -> str:
        if self.kind == OSFA:
            return f"OSFA(v{self.version})"
        if self.kind == SEQ:
            return f"Seq(v{self.first}->v{self.second}, t={self.threshold:g})"
        return f"Conc(v{self.fast}||v{self.slow}, t={self.threshold:g})"

    def to_dict(self) -> dict:
        if self.kind == OSFA:
            return {"kind": OSFA, "version": self.version}
        if self.kind == SEQ:
            return {
                "kind": SEQ,
                "first": self.first,
                "second": self.second,
                "threshold": self.threshold,
            }
        return {
            "kind": CONC,
            "fast": self.fast,
            "slow": self.slow,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleConfig":
        try:
            kind = d["kind"]
        except (KeyError, TypeError):
            raise DomainError(f"config object needs a 'kind' field: {d!r}")
        known = {"kind", "version", "first", "second", "fast", "slow", "threshold"}
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown config fields: {sorted(extra)}")
        return cls(kind=kind, **{k: v for k, v in d.items() if k != "kind"})

    @classmethod
    def osfa(cls, version: int) -> "EnsembleConfig":
        return cls(kind=OSFA, version=version)

    @classmethod
    def seq(cls, first: int, second: int, threshold: float) -> "EnsembleConfig":
        return cls(kind=SEQ, first=first, second=second, threshold=threshold)

    @classmethod
    def conc(cls, fast: int, slow: int, threshold: float) -> "EnsembleConfig":
        return cls(kind=CONC, fast=fast, slow=slow, threshold=threshold)


@dataclass(frozen=True)
class SimResult:
    """Aggregate simulation outcome of one config over a request sample."""

    mean_error: float
    error_degradation: float
    mean_response_ms: float
    mean_cost_ms: float
    et_fraction: float

    def to_dict(self) -> dict:
        return {
            "mean_error": self.mean_error,
            "error_degradation": self.error_degradation,
            "mean_response_ms": self.mean_response_ms,
            "mean_cost_ms": self.mean_cost_ms,
            "et_fraction": self.et_fraction,
        }


def tokenize(text: str) -> list[str]:
    """Split on whitespace runs, case-folded. No punctuation handling."""
    return text.casefold().split()


def word_edit_distance(reference: Sequence[str], hypothesis: Sequence[str]) -> int:
    """Word-level Levenshtein distance (insertions, deletions, substitutions)."""
    n, m = len(reference), len(hypothesis)
    if n == 0:
        return m
    if m == 0:
        return n
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        ref_word = reference[i - 1]
        for j in range(1, m + 1):
            sub = prev[j - 1] + (ref_word != hypothesis[j - 1])
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[m]


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Word error rate: word-level edit distance over reference length.

    Can exceed 1.0 when the hypothesis inserts more words than the
    reference holds; callers storing it as a VersionOutcome error clamp
    to 1.0.
    """
    if len(reference) == 0:
        raise DomainError("undefined WER denominator: empty reference")
    return word_edit_distance(reference, hypothesis) / len(reference)


def top1_error(predicted_class, actual_class) -> float:
    """0.0 when the argmax class matches the label, else 1.0."""
    return 0.0 if predicted_class == actual_class else 1.0


def degradation(
    candidate_mean_error: float,
    reference_mean_error: float,
    mode: str = "relative",
) -> float:
    """Error increase of a candidate over the reference config.

    The default "relative" mode is the ratio (candidate - reference) /
    reference, falling back to the absolute difference when the reference
    error is exactly zero. mode="absolute" always takes the difference.
    May be negative when the candidate beats the reference.
    """
    if mode not in ("relative", "absolute"):
        raise DomainError(f"unknown degradation mode {mode!r}")
    if mode == "absolute" or reference_mean_error == 0.0:
        return candidate_mean_error - reference_mean_error
    return (candidate_mean_error - reference_mean_error) / reference_mean_error
