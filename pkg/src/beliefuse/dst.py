"""Mass functions on the binary detection frame and Dempster's combination rule.

The frame of discernment is {target, non-target}; the only compound
hypothesis is the intermediate state I = {target, non-target}, whose mass
quantifies decision ambiguity. The general M-ary power set is deliberately
not modeled.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from functools import reduce

_SUM_TOL = 1e-9
_CONFLICT_TOL = 1e-12


class TotalConflict(ValueError):
    """Raised when two sources are certain of contradictory hypotheses.

    Dempster's rule is undefined when the normalizer is zero; callers choose
    a recovery policy (see the fusion pipeline).
    """


class Hypothesis(Enum):
    TARGET = "T"
    NON_TARGET = "~T"
    INTERMEDIATE = "I"


@dataclass(frozen=True)
class Bpa:
    """Basic probability assignment over {T, ~T, I}; empty-set mass is zero.

    Masses are normalized on construction; tiny negative float noise
    (>= -1e-9) is clamped to zero, anything more negative is an error.
    """

    m_target: float
    m_nontarget: float
    m_intermediate: float

    def __post_init__(self):
        masses = [self.m_target, self.m_nontarget, self.m_intermediate]
        if not all(math.isfinite(m) for m in masses):
            raise ValueError(f"masses must be finite: {masses}")
        if any(m < -_SUM_TOL for m in masses):
            raise ValueError(f"negative mass beyond tolerance: {masses}")
        masses = [max(m, 0.0) for m in masses]
        total = sum(masses)
        if total <= 0:
            raise ValueError("masses must not all be zero")
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"masses must sum to 1, got {total}")
        if total != 1.0:
            masses = [m / total for m in masses]
        object.__setattr__(self, "m_target", masses[0])
        object.__setattr__(self, "m_nontarget", masses[1])
        object.__setattr__(self, "m_intermediate", masses[2])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.m_target, self.m_nontarget, self.m_intermediate)

    def is_vacuous(self) -> bool:
        return self.m_intermediate == 1.0


VACUOUS = Bpa(0.0, 0.0, 1.0)


def vacuous() -> Bpa:
    """Total ignorance: all mass on the intermediate state, identity of combine."""
    return VACUOUS


def belief(b: Bpa, hypothesis: Hypothesis) -> float:
    """Sum of masses of all subsets of the hypothesis set."""
    if hypothesis is Hypothesis.TARGET:
        return b.m_target
    if hypothesis is Hypothesis.NON_TARGET:
        return b.m_nontarget
    return b.m_target + b.m_nontarget + b.m_intermediate


def combine(a: Bpa, b: Bpa) -> Bpa:
    """Dempster's rule for two sources on the binary frame.

    Raises TotalConflict when the conflict normalizer is zero.
    """
    conflict = a.m_target * b.m_nontarget + a.m_nontarget * b.m_target
    n = 1.0 - conflict
    if n <= _CONFLICT_TOL:
        raise TotalConflict(f"combination normalizer {n} is not positive")
    # Cross terms grouped so the sum is exactly symmetric in (a, b).
    m_t = a.m_target * b.m_target + (
        a.m_target * b.m_intermediate + a.m_intermediate * b.m_target
    )
    m_nt = a.m_nontarget * b.m_nontarget + (
        a.m_nontarget * b.m_intermediate + a.m_intermediate * b.m_nontarget
    )
    m_i = a.m_intermediate * b.m_intermediate
    return Bpa(m_t / n, m_nt / n, m_i / n)


def combine_all(bpas: list[Bpa]) -> Bpa:
    """Left-fold of pairwise combination over a nonempty list of sources."""
    if not bpas:
        raise ValueError("combine_all requires at least one Bpa")
    return reduce(combine, bpas)


# Intersection table on the binary frame: T^I = T, ~T^I = ~T, T^~T = empty.
_SETS = {"T": frozenset({"T"}), "~T": frozenset({"~T"}), "I": frozenset({"T", "~T"})}


def combine_all_enumerated(bpas: list[Bpa]) -> Bpa:
    """Direct K-way product-sum form of Dempster's rule.

    Enumerates all 3^K focal-element assignments; exponential, intended as
    the independent oracle for combine_all.
    """
    if not bpas:
        raise ValueError("combine_all_enumerated requires at least one Bpa")
    acc = {"T": 0.0, "~T": 0.0, "I": 0.0}
    n = 0.0
    labels = ("T", "~T", "I")
    masses = [dict(zip(labels, b.as_tuple())) for b in bpas]
    for assignment in itertools.product(labels, repeat=len(bpas)):
        product = 1.0
        for m, lab in zip(masses, assignment):
            product *= m[lab]
        inter = reduce(frozenset.intersection, (_SETS[lab] for lab in assignment))
        if not inter:
            continue
        n += product
        if inter == _SETS["I"]:
            acc["I"] += product
        elif inter == _SETS["T"]:
            acc["T"] += product
        else:
            acc["~T"] += product
    if n <= _CONFLICT_TOL:
        raise TotalConflict(f"combination normalizer {n} is not positive")
    return Bpa(acc["T"] / n, acc["~T"] / n, acc["I"] / n)


@dataclass(frozen=True)
class FusedVerdict:
    """Joint mass function plus its scalar fused score bel(T) - bel(~T)."""

    joint: Bpa

    @property
    def score(self) -> float:
        return self.joint.m_target - self.joint.m_nontarget
