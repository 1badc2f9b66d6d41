"""Disaggregation of residents from districts to grid cells.

Expected residents per cell follow the normalised residence weights of the
district.  Integer counts come from largest-remainder rounding (ties go to
the smaller cell id); when household sizes are supplied, households are
placed whole, largest first, into the cell with the largest remaining
deficit, which reduces to largest-remainder rounding for single-person
households.
"""
from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict
from fractions import Fraction
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .core import District, Grid, Person, WeightConfig, raw_cell_weights
from .distributions import RandomStream
from .errors import AssignmentError

log = logging.getLogger(__name__)

MAX_SEARCH_STEPS = 2_000_000


def largest_remainder(expected, total: int, tie_keys=None) -> list[int]:
    """Integers summing to ``total`` with each entry the floor or ceiling of ``expected``.

    Units left after flooring go to the largest fractional parts; equal
    fractions are resolved by ``tie_keys`` (default: position).  Pass
    :class:`~fractions.Fraction` values when ties must be detected exactly.
    """
    expected = list(expected)
    if total < 0 or any(e < 0 for e in expected):
        raise ValueError("largest_remainder needs non-negative inputs")
    if not expected:
        if total:
            raise ValueError("cannot apportion a positive total over zero bins")
        return []
    tie_keys = list(range(len(expected))) if tie_keys is None else list(tie_keys)
    floors = [math.floor(e) for e in expected]
    left = total - sum(floors)
    order = sorted(range(len(expected)), key=lambda i: (-(expected[i] - floors[i]), tie_keys[i]))
    if left >= 0:
        for k in range(left):
            floors[order[k % len(order)]] += 1
    else:
        # only reachable when expected does not sum to total: trim smallest remainders first
        while left < 0:
            for i in reversed(order):
                if left == 0:
                    break
                if floors[i] > 0:
                    floors[i] -= 1
                    left += 1
    return floors


def residence_weights(district: District, grid: Grid, landuse, mode: str = "floor_area",
                      class_weights: WeightConfig | None = None, category: str = "residential"):
    """Per-cell residence weights: residential floor area, or class constants."""
    if mode == "class":
        return class_weights
    return {c: landuse.get(c, {}).get(category, 0.0) for c in district.cell_ids}


def apportion(weights, total: int, tie_keys=None) -> list[int]:
    """Largest-remainder split of ``total`` in proportion to ``weights``, computed exactly."""
    exact = [Fraction(w) for w in weights]
    wsum = sum(exact)
    if total == 0:
        return [0] * len(exact)
    if wsum <= 0:
        raise ValueError("cannot apportion a positive total over zero weights")
    return largest_remainder([w * total / wsum for w in exact], total, tie_keys)


def exact_expected(district: District, weights, grid: Grid, total: int) -> dict[str, Fraction]:
    """Expected residents per cell as exact fractions; uniform when every weight is zero."""
    raw = [Fraction(w) for w in raw_cell_weights(district, weights, grid)]
    wsum = sum(raw)
    if wsum <= 0:
        log.warning("district %s has only zero-weight cells; using uniform cell probabilities", district.id)
        raw = [Fraction(1)] * len(raw)
        wsum = Fraction(len(raw))
    return {c: w * total / wsum for c, w in zip(district.cell_ids, raw)}


def allocate_resident_counts(district: District, weights, grid: Grid, total: int,
                             household_sizes=None) -> dict[str, int]:
    """Integer residents per cell summing exactly to ``total``.

    Without ``household_sizes`` this is largest-remainder rounding of the
    expected counts.  With them, whole households are packed so the counts
    are realisable without splitting a household.
    """
    cells = sorted(district.cell_ids)
    exact = exact_expected(district, weights, grid, total)
    expected = [exact[c] for c in cells]
    if household_sizes is None:
        return dict(zip(cells, largest_remainder(expected, total, cells)))
    sizes = sorted(household_sizes, reverse=True)
    if sum(sizes) != total:
        raise AssignmentError(f"household sizes sum to {sum(sizes)}, district {district.id!r} has {total}")
    counts = [0] * len(cells)
    # max-heap on remaining deficit, cell position breaks ties
    heap = [(-e, i) for i, e in enumerate(expected)]
    heapq.heapify(heap)
    for size in sizes:
        neg_deficit, i = heapq.heappop(heap)
        counts[i] += size
        heapq.heappush(heap, (neg_deficit + size, i))
    return dict(zip(cells, counts))


def _households(persons):
    groups: dict[str, list[Person]] = defaultdict(list)
    for p in persons:
        groups[p.household_id].append(p)
    return groups


def _exact_pack(sizes: list[int], capacity: list[int]):
    """Depth-first exact packing of ``sizes`` (descending) into ``capacity``; None if impossible."""
    n = len(sizes)
    remaining = list(capacity)
    choice = [-1] * n
    candidates: list[list[int] | None] = [None] * n
    pos = [0] * n
    k = 0
    steps = 0
    while 0 <= k < n:
        steps += 1
        if steps > MAX_SEARCH_STEPS:
            raise AssignmentError("household packing search exceeded its step budget")
        if candidates[k] is None:
            seen = set()
            cand = []
            # best fit first; identical remaining capacities are interchangeable
            for j in sorted(range(len(remaining)), key=lambda j: (remaining[j], j)):
                if remaining[j] >= sizes[k] and remaining[j] not in seen:
                    seen.add(remaining[j])
                    cand.append(j)
            candidates[k] = cand
            pos[k] = 0
        if choice[k] >= 0:
            remaining[choice[k]] += sizes[k]
            choice[k] = -1
        if pos[k] < len(candidates[k]):
            j = candidates[k][pos[k]]
            pos[k] += 1
            remaining[j] -= sizes[k]
            choice[k] = j
            k += 1
        else:
            candidates[k] = None
            k -= 1
    return choice if k == n else None


def assign_residence_cells(persons, counts: dict[str, int], stream: RandomStream) -> None:
    """Give every person a residence cell so that per-cell totals equal ``counts``.

    ``persons`` must all live in the district that ``counts`` covers.
    Households stay together.  Households of equal size are visited in an
    order drawn from ``stream`` and each picks a fitting cell with
    probability proportional to its remaining room; if that greedy pass
    dead-ends, an exhaustive search finds a valid packing.
    """
    groups = _households(persons)
    if sum(counts.values()) != len(persons):
        raise AssignmentError(f"cell counts sum to {sum(counts.values())} but {len(persons)} persons given")
    if any(n < 0 for n in counts.values()):
        raise AssignmentError("negative cell count")
    cells = sorted(counts)
    hids = sorted(groups, key=lambda h: (-len(groups[h]), stream.split(h).value(0), h))
    sizes = [len(groups[h]) for h in hids]
    remaining = np.array([counts[c] for c in cells], dtype=np.int64)
    placement = []
    for h, size in zip(hids, sizes):
        room = np.where(remaining >= size, remaining, 0)
        cum = np.cumsum(room)
        if cum[-1] == 0:
            placement = None
            break
        x = stream.split(h).value(1) * float(cum[-1])
        pick = min(int(np.searchsorted(cum, x, side="right")), len(cells) - 1)
        remaining[pick] -= size
        placement.append(pick)
    if placement is None:
        placement = _exact_pack(sizes, [counts[c] for c in cells])
        if placement is None:
            raise AssignmentError("cell counts cannot be met without splitting a household")
    for h, j in zip(hids, placement):
        for p in groups[h]:
            p.residence_cell = cells[j]


def assign_residences(persons, grid: Grid, landuse, stream: RandomStream, mode: str = "floor_area",
                      class_weights: WeightConfig | None = None, category: str = "residential",
                      threads: int = 1) -> dict[str, dict[str, int]]:
    """Run allocation and assignment for every district; returns the counts used."""
    by_district: dict[str, list[Person]] = defaultdict(list)
    for p in persons:
        by_district[p.residence_district].append(p)
    for hid, members in _households(persons).items():
        if len({m.residence_district for m in members}) > 1:
            raise AssignmentError(f"household {hid!r} spans several residence districts")

    def work(did):
        district = grid.districts[did]
        people = by_district.get(did, [])
        sizes = [len(m) for m in _households(people).values()]
        w = residence_weights(district, grid, landuse, mode, class_weights, category)
        counts = allocate_resident_counts(district, w, grid, len(people), sizes)
        assign_residence_cells(people, counts, stream.split(did))
        return did, counts

    ids = sorted(grid.districts)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return dict(pool.map(work, ids))
    return dict(map(work, ids))
