"""Value predicates used by injection rules and group definitions.

A predicate tests one cell value. Categorical cells are compared as strings,
numerical cells as floats. Supported forms: membership in a value set, its
complement, a (half-open or closed) interval, and a union of predicates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigurationError

IN = "in"
NOT_IN = "not_in"
RANGE = "range"
ANY_OF = "any_of"


def _as_float(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"cannot compare {value!r} numerically")


@dataclass(frozen=True)
class ValuePredicate:
    kind: str
    values: tuple = ()
    lo: float = -math.inf
    hi: float = math.inf
    lo_closed: bool = True
    hi_closed: bool = True
    parts: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in (IN, NOT_IN, RANGE, ANY_OF):
            raise ConfigurationError(f"unknown predicate kind {self.kind!r}")
        if self.kind == ANY_OF and not self.parts:
            raise ConfigurationError("any_of predicate needs at least one part")

    def matches(self, value) -> bool:
        if self.kind == IN:
            return self._member(value)
        if self.kind == NOT_IN:
            return not self._member(value)
        if self.kind == RANGE:
            x = _as_float(value)
            above = x >= self.lo if self.lo_closed else x > self.lo
            below = x <= self.hi if self.hi_closed else x < self.hi
            return above and below
        return any(p.matches(value) for p in self.parts)

    def _member(self, value) -> bool:
        if isinstance(value, float):
            for v in self.values:
                try:
                    if float(v) == value:
                        return True
                except (TypeError, ValueError):
                    continue
            return False
        return str(value) in {str(v) for v in self.values}

    def to_config(self):
        if self.kind == IN:
            return {"in": list(self.values)}
        if self.kind == NOT_IN:
            return {"not_in": list(self.values)}
        if self.kind == ANY_OF:
            return {"any_of": [p.to_config() for p in self.parts]}
        out = {}
        if self.lo > -math.inf:
            out["ge" if self.lo_closed else "gt"] = self.lo
        if self.hi < math.inf:
            out["le" if self.hi_closed else "lt"] = self.hi
        return out


def in_set(*values) -> ValuePredicate:
    return ValuePredicate(IN, values=tuple(str(v) for v in values))


def not_in_set(*values) -> ValuePredicate:
    return ValuePredicate(NOT_IN, values=tuple(str(v) for v in values))


def interval(lo=-math.inf, hi=math.inf, lo_closed=True, hi_closed=True) -> ValuePredicate:
    return ValuePredicate(RANGE, lo=float(lo), hi=float(hi),
                          lo_closed=lo_closed, hi_closed=hi_closed)


def any_of(*parts: ValuePredicate) -> ValuePredicate:
    return ValuePredicate(ANY_OF, parts=tuple(parts))


def predicate_from_config(obj) -> ValuePredicate:
    """Parse the config form of a predicate.

    A bare list means set membership. Mappings support the keys
    in / not_in / any_of and the bound keys lt, le, gt, ge (combinable
    into one interval).
    """
    if isinstance(obj, (list, tuple)):
        return in_set(*obj)
    if not isinstance(obj, dict):
        return in_set(obj)
    if "any_of" in obj:
        return any_of(*(predicate_from_config(p) for p in obj["any_of"]))
    if "in" in obj:
        return in_set(*obj["in"])
    if "not_in" in obj:
        return not_in_set(*obj["not_in"])
    bounds = set(obj) & {"lt", "le", "gt", "ge"}
    if not bounds:
        raise ConfigurationError(f"unrecognized predicate config: {obj!r}")
    if {"lt", "le"} <= bounds or {"gt", "ge"} <= bounds:
        raise ConfigurationError(f"conflicting bounds in predicate config: {obj!r}")
    lo, lo_closed = -math.inf, True
    hi, hi_closed = math.inf, True
    if "ge" in obj:
        lo = float(obj["ge"])
    if "gt" in obj:
        lo, lo_closed = float(obj["gt"]), False
    if "le" in obj:
        hi = float(obj["le"])
    if "lt" in obj:
        hi, hi_closed = float(obj["lt"]), False
    return ValuePredicate(RANGE, lo=lo, hi=hi, lo_closed=lo_closed, hi_closed=hi_closed)
