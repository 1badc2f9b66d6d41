"""Conditional categorical tables, inverse-CDF samplers and seeded streams.

Random numbers come from a counter-based generator: the ``n``-th uniform of
the stream ``(seed, label, key)`` is a pure function of those four values, so
per-person draws do not depend on processing order or worker count.
"""
from __future__ import annotations

import bisect
import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (CapacityExhaustedError, ContractViolation, DuplicateIdError,
                     MissingDistributionError, SchemaError)

log = logging.getLogger(__name__)

WILDCARD = "*"
ROW_TOLERANCE = 1e-9
RENORMALIZE_TOLERANCE = 1e-3

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TO_UNIT = 2.0 ** -53


def _mix(x: int) -> int:
    # splitmix64 finaliser
    x = (x + _GOLDEN) & _MASK
    x = ((x ^ (x >> 30)) * _M1) & _MASK
    x = ((x ^ (x >> 27)) * _M2) & _MASK
    return x ^ (x >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_M1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_M2)
    return x ^ (x >> np.uint64(31))


def key_of(name) -> int:
    """Stable 64-bit key for an identifier (person id, household id, label)."""
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def keys_of(names) -> np.ndarray:
    return np.fromiter((key_of(n) for n in names), dtype=np.uint64)


class RandomStream:
    """Counter-based uniform stream keyed by ``(seed, label, key)``.

    ``split(name)`` derives an independent child stream; the usual pattern is
    one root stream per pipeline stage, split once per person.
    """

    def __init__(self, seed: int, label: str, key: int = 0):
        self.seed = int(seed) & _MASK
        self.label = label
        self.key = int(key) & _MASK
        self.counter = 0
        self._base = _mix(_mix(self.seed ^ key_of(label)) ^ self.key)

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, label={self.label!r}, key={self.key:#x}, counter={self.counter})"

    def split(self, name) -> "RandomStream":
        return RandomStream(self.seed, self.label, _mix(self.key) ^ key_of(name))

    def value(self, n: int) -> float:
        """The ``n``-th uniform in [0, 1), independent of the counter."""
        return (_mix((self._base + n) & _MASK) >> 11) * _TO_UNIT

    def random(self) -> float:
        u = self.value(self.counter)
        self.counter += 1
        return u

    def child_uniforms(self, names, draw: int = 0) -> np.ndarray:
        """``split(name).value(draw)`` for every name, vectorised."""
        keys = keys_of(names) if not isinstance(names, np.ndarray) else names
        child = np.uint64(_mix(self.key)) ^ keys
        root = np.uint64(_mix(self.seed ^ key_of(self.label)))
        base = _mix_array(root ^ child)
        x = _mix_array(base + np.uint64(draw))
        return (x >> np.uint64(11)).astype(np.float64) * _TO_UNIT


def check_distribution(vector, tol: float = ROW_TOLERANCE) -> np.ndarray:
    p = np.asarray(vector, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ContractViolation("probability vector must be one-dimensional and non-empty")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ContractViolation(f"probability vector has negative or non-finite entries: {p}")
    total = math.fsum(p)
    if abs(total - 1.0) > tol:
        raise ContractViolation(f"probability vector sums to {total!r}, not 1")
    return p


def inverse_cdf(p: Sequence[float], u: float) -> int:
    """Index ``i`` with ``cdf[i-1] <= u < cdf[i]``; zero-mass entries are never chosen."""
    acc = 0.0
    last = -1
    for i, pi in enumerate(p):
        if pi > 0:
            acc += pi
            last = i
            if u < acc:
                return i
    if last < 0:
        raise ContractViolation("probability vector has no positive entry")
    return last


def inverse_cdf_many(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorised :func:`inverse_cdf`; identical results for identical inputs."""
    p = np.asarray(p, dtype=float)
    positive = np.flatnonzero(p > 0)
    if positive.size == 0:
        raise ContractViolation("probability vector has no positive entry")
    cdf = np.cumsum(p[positive])
    pos = np.searchsorted(cdf, u, side="right")
    return positive[np.minimum(pos, positive.size - 1)]


class CategoricalSampler:
    """Inverse-CDF sampler over labelled outcomes with the CDF built once.

    ``draw(u)`` returns the same outcome as ``inverse_cdf`` on the same
    probabilities; use it inside hot per-person loops.
    """

    __slots__ = ("outcomes", "probabilities", "_labels", "_cdf")

    def __init__(self, outcomes, probabilities):
        p = np.asarray(probabilities, dtype=float)
        self.outcomes = tuple(outcomes)
        self.probabilities = p
        labels, cdf, acc = [], [], 0.0
        for o, pi in zip(self.outcomes, p):
            if pi > 0:
                acc += pi
                labels.append(o)
                cdf.append(acc)
        if not labels:
            raise ContractViolation("probability vector has no positive entry")
        self._labels = labels
        self._cdf = cdf

    def draw(self, u: float):
        return self._labels[min(bisect.bisect_right(self._cdf, u), len(self._labels) - 1)]

    def as_dict(self) -> dict:
        return dict(zip(self.outcomes, self.probabilities))


def sample_categorical(vector, stream: RandomStream) -> int:
    p = check_distribution(vector)
    return inverse_cdf(p, stream.random())


def masked_distribution(vector, capacities) -> np.ndarray:
    """``vector`` restricted to bins with remaining capacity, renormalised.

    Raises :class:`CapacityExhaustedError` when no bin has capacity or the
    available bins carry no probability mass.
    """
    p = np.asarray(vector, dtype=float)
    cap = np.asarray(capacities)
    if p.shape != cap.shape:
        raise ContractViolation("vector and capacities differ in length")
    if np.any(cap < 0):
        raise ContractViolation("capacities must be non-negative")
    if cap.sum() < 1:
        raise CapacityExhaustedError("every bin is at zero capacity")
    masked = np.where(cap > 0, p, 0.0)
    total = masked.sum()
    if total <= 0:
        raise CapacityExhaustedError("no probability mass left on bins with capacity")
    return masked / total


def sample_capacity_constrained(vector, capacities, stream: RandomStream) -> int:
    """Draw a bin with remaining capacity and decrement it in place."""
    p = masked_distribution(vector, capacities)
    i = inverse_cdf(p, stream.random())
    capacities[i] -= 1
    return i


@dataclass
class ConditionalTable:
    """P(outcome | key attributes) stored as one probability vector per key tuple.

    Keys may contain ``"*"`` to cover every value of an attribute.  Lookups
    that miss fall back first to wildcard rows, then (if ``backoff`` is not
    empty) to rows averaged over the attributes named in ``backoff``, dropped
    one at a time in that order.  The default backoff drops attributes from
    the last one backwards but never the first.
    """

    name: str
    key_attributes: tuple[str, ...]
    outcomes: tuple[str, ...]
    rows: dict[tuple, np.ndarray]
    backoff: tuple[str, ...] | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.key_attributes = tuple(self.key_attributes)
        self.outcomes = tuple(self.outcomes)
        if self.backoff is None:
            self.backoff = tuple(reversed(self.key_attributes[1:]))
        unknown = set(self.backoff) - set(self.key_attributes)
        if unknown:
            raise ContractViolation(f"backoff attributes {sorted(unknown)} not in table {self.name!r}")
        for key, row in self.rows.items():
            if len(key) != len(self.key_attributes):
                raise ContractViolation(f"row key {key} has wrong arity for table {self.name!r}")
            self.rows[key] = check_distribution(row)

    @classmethod
    def from_mapping(cls, name, key_attributes, rows: Mapping[tuple, Mapping[str, float]],
                     backoff=None) -> "ConditionalTable":
        outcomes: list[str] = []
        for dist in rows.values():
            for o in dist:
                if o not in outcomes:
                    outcomes.append(o)
        vectors = {tuple(k): np.array([float(d.get(o, 0.0)) for o in outcomes]) for k, d in rows.items()}
        return cls(name, tuple(key_attributes), tuple(outcomes), vectors, backoff)

    def index(self, outcome: str) -> int:
        return self.outcomes.index(outcome)

    def as_dict(self, key) -> dict[str, float]:
        return dict(zip(self.outcomes, lookup(self, key)))


def _matches(pattern: tuple, key: tuple) -> bool:
    return all(p == WILDCARD or p == k for p, k in zip(pattern, key))


def lookup(table: ConditionalTable, key, backoff: bool = True) -> np.ndarray:
    """Probability vector for ``key``; see :class:`ConditionalTable` for the fallbacks.

    With ``backoff=False`` only exact and wildcard rows are accepted.
    """
    key = tuple(str(k) for k in key)
    if len(key) != len(table.key_attributes):
        raise ContractViolation(f"key {key} has arity {len(key)}, table {table.name!r} "
                                f"expects {len(table.key_attributes)} ({', '.join(table.key_attributes)})")
    row = table.rows.get(key)
    if row is not None:
        return row
    if (key, backoff) in table._cache:
        return table._cache[(key, backoff)]
    row = _fallback(table, key, backoff)
    table._cache[(key, backoff)] = row
    return row


def _fallback(table: ConditionalTable, key: tuple, backoff: bool) -> np.ndarray:
    wild = [k for k in table.rows if WILDCARD in k and _matches(k, key)]
    if wild:
        best = min(wild, key=lambda k: (k.count(WILDCARD), k))
        return table.rows[best]
    dropped: set[int] = set()
    for attr in (table.backoff if backoff else ()):
        dropped.add(table.key_attributes.index(attr))
        hits = [row for k, row in table.rows.items()
                if all(i in dropped or k[i] == key[i] for i in range(len(key)))]
        if hits:
            log.debug("table %s: key %s backed off over %s (%d rows)", table.name, key,
                      [table.key_attributes[i] for i in sorted(dropped)], len(hits))
            mean = np.mean(hits, axis=0)
            return mean / mean.sum()
    raise MissingDistributionError(
        f"table {table.name!r} has no row for {dict(zip(table.key_attributes, key))}")


def load_table(path, backoff=None) -> ConditionalTable:
    """Read a long-format table ``key1,...,keyN,outcome,probability``.

    Rows whose probabilities sum within 1e-3 of one are renormalised with a
    warning; larger deviations are a :class:`SchemaError`.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError("empty table file", path) from None
        if len(header) < 3 or header[-2:] != ["outcome", "probability"]:
            raise SchemaError("header must be key columns followed by 'outcome,probability'", path, 1)
        keys = tuple(header[:-2])
        grouped: dict[tuple, dict[str, float]] = {}
        outcomes: list[str] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(rec)}", path, lineno)
            *kvals, outcome, prob = (c.strip() for c in rec)
            try:
                p = float(prob)
            except ValueError:
                raise SchemaError(f"probability {prob!r} is not a number", path, lineno, "probability") from None
            if not math.isfinite(p) or p < 0:
                raise SchemaError(f"probability {p} must be finite and >= 0", path, lineno, "probability")
            row = grouped.setdefault(tuple(kvals), {})
            if outcome in row:
                raise DuplicateIdError(f"duplicate outcome {outcome!r} for key {tuple(kvals)}",
                                       path, lineno, "outcome")
            row[outcome] = p
            if outcome not in outcomes:
                outcomes.append(outcome)
    vectors = {}
    for key, dist in grouped.items():
        vec = np.array([dist.get(o, 0.0) for o in outcomes])
        total = math.fsum(vec)
        if abs(total - 1.0) > RENORMALIZE_TOLERANCE:
            raise SchemaError(f"row {key} sums to {total:.6f}", path)
        if abs(total - 1.0) > ROW_TOLERANCE:
            log.warning("%s: row %s sums to %.6f; renormalising", path.name, key, total)
            vec = vec / total
        vectors[key] = vec
    return ConditionalTable(path.stem, keys, tuple(outcomes), vectors, backoff)
