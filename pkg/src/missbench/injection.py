"""Seeded MCAR/MAR/MNAR missingness simulation from declarative rule tables.

Each rule masks cells of its missing columns independently per row and column
with probability p_dis or p_priv, decided by a value predicate on the rule's
conditional column (evaluated on the true, pre-masking values). Draws come
from a counter-based stream keyed by (seed, spec index, rule index), indexed
by (row, column), so results are order- and schedule-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset, GroupSpec, NUMERICAL, dis_mask
from .errors import ConfigurationError, InjectionError
from .predicates import ValuePredicate, predicate_from_config

MCAR = "MCAR"
MAR = "MAR"
MNAR = "MNAR"
MECHANISMS = (MCAR, MAR, MNAR)

SCENARIO_IDS = tuple(f"S{i}" for i in range(1, 11))

# Train/test mechanism pairing; S10 mixes all three on both sides.
SCENARIO_TABLE = {
    "S1": (MCAR, MCAR),
    "S2": (MAR, MAR),
    "S3": (MNAR, MNAR),
    "S4": (MCAR, MAR),
    "S5": (MCAR, MNAR),
    "S6": (MAR, MCAR),
    "S7": (MAR, MNAR),
    "S8": (MNAR, MCAR),
    "S9": (MNAR, MAR),
}


@dataclass(frozen=True)
class InjectionRule:
    mechanism: str
    missing_columns: tuple[str, ...]
    conditional_column: str | None = None
    dis_predicate: ValuePredicate | None = None
    p_dis: float = 0.0
    p_priv: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "missing_columns", tuple(self.missing_columns))
        if self.mechanism not in MECHANISMS:
            raise ConfigurationError(f"unknown mechanism {self.mechanism!r}")
        if not self.missing_columns:
            raise ConfigurationError("rule needs at least one missing column")
        for p in (self.p_dis, self.p_priv):
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"probability {p} outside [0,1]")
        if self.mechanism == MCAR:
            if self.conditional_column is not None:
                raise ConfigurationError("MCAR rules take no conditional column")
            if self.p_dis != self.p_priv:
                raise ConfigurationError("MCAR rules need p_dis == p_priv")
        else:
            if self.conditional_column is None or self.dis_predicate is None:
                raise ConfigurationError(
                    f"{self.mechanism} rules need a conditional column and dis predicate")
            if self.mechanism == MAR and self.conditional_column in self.missing_columns:
                raise ConfigurationError("MAR conditional column must be outside missing columns")
            if self.mechanism == MNAR:
                if len(self.missing_columns) != 1:
                    raise ConfigurationError("each MNAR rule targets exactly one column")
                if self.conditional_column != self.missing_columns[0]:
                    raise ConfigurationError("MNAR rules condition on the masked column itself")


@dataclass(frozen=True)
class MissingnessSpec:
    rules: tuple[InjectionRule, ...]
    base_rate: float

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not 0.0 < self.base_rate <= 1.0:
            raise ConfigurationError(f"base_rate must be in (0,1], got {self.base_rate}")
        by_mech: dict[str, set] = {}
        for r in self.rules:
            seen = by_mech.setdefault(r.mechanism, set())
            dup = seen & set(r.missing_columns)
            if dup:
                raise ConfigurationError(
                    f"{r.mechanism} rules target column(s) {sorted(dup)} more than once")
            seen |= set(r.missing_columns)

    @property
    def mechanisms(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(r.mechanism for r in self.rules))


@dataclass(frozen=True)
class Scenario:
    id: str
    train_specs: tuple[MissingnessSpec, ...]
    test_specs: tuple[MissingnessSpec, ...]

    def __post_init__(self):
        if self.id not in SCENARIO_IDS:
            raise ConfigurationError(f"unknown scenario id {self.id!r}")
        object.__setattr__(self, "train_specs", tuple(self.train_specs))
        object.__setattr__(self, "test_specs", tuple(self.test_specs))


# -- core operations -----------------------------------------------------------


def _row_probabilities(d: Dataset, rule: InjectionRule) -> np.ndarray:
    if rule.mechanism == MCAR:
        return np.full(d.n, rule.p_priv)
    col = d.column_schema(rule.conditional_column)
    arr = d.columns[rule.conditional_column]
    p = np.empty(d.n)
    for i, v in enumerate(arr):
        if v is None or (col.kind == NUMERICAL and np.isnan(v)):
            raise InjectionError(
                f"conditional column {rule.conditional_column!r} is null at row {i}")
        p[i] = rule.p_dis if rule.dis_predicate.matches(v) else rule.p_priv
    return p


def inject_specs(d: Dataset, specs, seed: int) -> tuple[Dataset, np.ndarray]:
    """Apply one or more missingness specs; predicates see d's original values.

    Returns the masked dataset and the mask of exactly the newly nulled cells.
    Already-null cells stay null and are never re-counted as injected.
    """
    specs = tuple(specs)
    entropy = int(seed) & 0xFFFFFFFFFFFFFFFF
    mask = d.null_mask.copy()
    for si, spec in enumerate(specs):
        for ri, rule in enumerate(spec.rules):
            rng = np.random.default_rng(np.random.SeedSequence([entropy, si, ri]))
            u = rng.random((d.n, len(rule.missing_columns)))
            p = _row_probabilities(d, rule)
            for j, name in enumerate(rule.missing_columns):
                fj = d.feature_index(name)
                mask[:, fj] |= u[:, j] < p
    injected = mask & ~d.null_mask
    return d.with_null_mask(mask), injected


def inject(d: Dataset, spec: MissingnessSpec, seed: int) -> tuple[Dataset, np.ndarray]:
    return inject_specs(d, [spec], seed)


def scale_rates(spec: MissingnessSpec, target_rate: float) -> MissingnessSpec:
    """Rescale every rule probability by target_rate / base_rate, clamped to [0,1]."""
    if not 0.0 < target_rate <= 1.0:
        raise ConfigurationError(f"target rate must be in (0,1], got {target_rate}")
    factor = target_rate / spec.base_rate
    rules = tuple(
        replace(r, p_dis=min(1.0, r.p_dis * factor), p_priv=min(1.0, r.p_priv * factor))
        for r in spec.rules
    )
    return MissingnessSpec(rules=rules, base_rate=target_rate)


def build_scenario(scenario_id: str, per_mechanism_specs: dict,
                   mixed_component_rate: float = 0.1) -> Scenario:
    """Assemble a Scenario from single-mechanism specs.

    S1-S9 place the specs per the train/test pairing table at their authored
    base rates; S10 places all three mechanisms on both sides, each scaled to
    mixed_component_rate.
    """
    if scenario_id not in SCENARIO_IDS:
        raise ConfigurationError(f"unknown scenario id {scenario_id!r}")

    def need(mech):
        if mech not in per_mechanism_specs:
            raise ConfigurationError(f"scenario {scenario_id} requires a {mech} spec")
        return per_mechanism_specs[mech]

    if scenario_id == "S10":
        mixed = tuple(scale_rates(need(m), mixed_component_rate) for m in MECHANISMS)
        return Scenario("S10", mixed, mixed)
    train_mech, test_mech = SCENARIO_TABLE[scenario_id]
    return Scenario(scenario_id, (need(train_mech),), (need(test_mech),))


def scale_scenario_specs(specs, rate: float) -> tuple[MissingnessSpec, ...]:
    """Scale one side of a scenario so its component base rates sum to `rate`.

    Single-mechanism sides scale to `rate`; mixed sides keep their component
    proportions (e.g. S10 at 0.3 keeps 0.1 per mechanism).
    """
    specs = tuple(specs)
    total = sum(s.base_rate for s in specs)
    return tuple(scale_rates(s, rate * s.base_rate / total) for s in specs)


def observed_rates(injected_mask: np.ndarray, d: Dataset,
                   g: GroupSpec | None = None) -> dict:
    """Exact per-column null fractions of a mask, overall and per group."""
    injected_mask = np.asarray(injected_mask, dtype=bool)
    if injected_mask.shape != d.null_mask.shape:
        raise ConfigurationError(
            f"mask shape {injected_mask.shape} != {d.null_mask.shape}")
    groups = {"overall": np.ones(d.n, dtype=bool)}
    if g is not None:
        dm = dis_mask(d, g)
        groups["priv"] = ~dm
        groups["dis"] = dm
    out = {}
    for key, sel in groups.items():
        size = int(sel.sum())
        out[key] = {
            name: (float(injected_mask[sel, j].mean()) if size else None)
            for j, name in enumerate(d.feature_names)
        }
    return out


# -- rule-table config serialization --------------------------------------------


def rule_from_config(obj: dict) -> InjectionRule:
    mech = str(obj["mechanism"]).upper()
    pred = obj.get("dis")
    if "p" in obj:
        p_dis = p_priv = float(obj["p"])
    else:
        p_dis, p_priv = float(obj["p_dis"]), float(obj["p_priv"])
    return InjectionRule(
        mechanism=mech,
        missing_columns=tuple(obj["columns"]),
        conditional_column=obj.get("conditional"),
        dis_predicate=predicate_from_config(pred) if pred is not None else None,
        p_dis=p_dis,
        p_priv=p_priv,
    )


def rule_to_config(rule: InjectionRule) -> dict:
    out = {
        "mechanism": rule.mechanism,
        "columns": list(rule.missing_columns),
        "p_dis": rule.p_dis,
        "p_priv": rule.p_priv,
    }
    if rule.conditional_column is not None:
        out["conditional"] = rule.conditional_column
        out["dis"] = rule.dis_predicate.to_config()
    return out


def spec_from_config(obj: dict) -> MissingnessSpec:
    return MissingnessSpec(
        rules=tuple(rule_from_config(r) for r in obj["rules"]),
        base_rate=float(obj.get("base_rate", 0.3)),
    )


def spec_to_config(spec: MissingnessSpec) -> dict:
    return {"base_rate": spec.base_rate, "rules": [rule_to_config(r) for r in spec.rules]}
