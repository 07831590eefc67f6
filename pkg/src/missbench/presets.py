"""Built-in injection rule tables and group definitions for seven datasets.

Rules mirror the published 30% tables for: diabetes, german, folk-income,
law-school, bank, heart, folk-employment. Column names and category values
follow the canonical public CSVs of each dataset (Folktables columns use the
raw census codes, noted inline). Data files are user-supplied, except german,
which ships with a schema-compatible synthetic fixture; align your columns
with these names or pass a custom rule-table config instead.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dataset import CATEGORICAL, ColumnSchema, GroupSpec, NUMERICAL, SENSITIVE, TARGET
from .errors import ConfigurationError
from .injection import InjectionRule, MCAR, MAR, MNAR, MissingnessSpec
from .predicates import any_of, in_set, interval, not_in_set


def _mcar(columns, p=0.3):
    return InjectionRule(MCAR, tuple(columns), p_dis=p, p_priv=p)


def _mar(columns, conditional, dis, p_dis, p_priv):
    return InjectionRule(MAR, tuple(columns), conditional, dis, p_dis, p_priv)


def _mnar(column, dis, p_dis, p_priv):
    return InjectionRule(MNAR, (column,), column, dis, p_dis, p_priv)


def _specs(mcar_rules, mar_rules, mnar_rules, base_rate=0.3):
    return {
        MCAR: MissingnessSpec(tuple(mcar_rules), base_rate),
        MAR: MissingnessSpec(tuple(mar_rules), base_rate),
        MNAR: MissingnessSpec(tuple(mnar_rules), base_rate),
    }


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    specs: dict
    group: GroupSpec
    schema: tuple[ColumnSchema, ...] | None = None
    null_tokens: tuple[str, ...] = ("",)
    fixture: str | None = None
    notes: str = ""


_PRESETS = {}


def _register(preset: DatasetPreset):
    _PRESETS[preset.name] = preset


# -- diabetes: sex is the sensitive attribute, female dis ----------------------

_register(DatasetPreset(
    name="diabetes",
    specs=_specs(
        [_mcar(["SoundSleep", "Family_Diabetes", "PhysicallyActive", "RegularMedicine"])],
        [
            _mar(["Family_Diabetes", "RegularMedicine"], "Sex", in_set("female"), 0.2, 0.1),
            _mar(["PhysicallyActive", "SoundSleep"], "Age", interval(lo=40), 0.2, 0.1),
        ],
        [
            _mnar("Family_Diabetes", in_set("yes"), 0.25, 0.05),
            _mnar("RegularMedicine", in_set("yes"), 0.2, 0.1),
            _mnar("PhysicallyActive", in_set("none", "less than half an hr"), 0.25, 0.05),
            _mnar("SoundSleep", interval(hi=5, hi_closed=False), 0.2, 0.1),
        ],
    ),
    group=GroupSpec(("Sex",), (in_set("female"),)),
))


# -- german: sex and age, doubly-disadvantaged = young women -------------------

GERMAN_SCHEMA = (
    ColumnSchema("checking-account", CATEGORICAL),
    ColumnSchema("duration", NUMERICAL),
    ColumnSchema("credit-history", CATEGORICAL),
    ColumnSchema("purpose", CATEGORICAL),
    ColumnSchema("credit-amount", NUMERICAL),
    ColumnSchema("savings-account", CATEGORICAL),
    ColumnSchema("employment-since", CATEGORICAL),
    ColumnSchema("installment-rate", NUMERICAL),
    ColumnSchema("sex", CATEGORICAL, role=SENSITIVE),
    ColumnSchema("other-debtors", CATEGORICAL),
    ColumnSchema("residence-since", NUMERICAL),
    ColumnSchema("property", CATEGORICAL),
    ColumnSchema("age", NUMERICAL, role=SENSITIVE),
    ColumnSchema("other-installment-plans", CATEGORICAL),
    ColumnSchema("housing", CATEGORICAL),
    ColumnSchema("existing-credits", NUMERICAL),
    ColumnSchema("job", CATEGORICAL),
    ColumnSchema("num-dependents", NUMERICAL),
    ColumnSchema("telephone", CATEGORICAL),
    ColumnSchema("foreign-worker", CATEGORICAL),
    ColumnSchema("personal-status", CATEGORICAL),
    ColumnSchema("risk", CATEGORICAL, role=TARGET, categories=("bad", "good")),
)

_register(DatasetPreset(
    name="german",
    specs=_specs(
        [_mcar(["duration", "credit-amount", "checking-account",
                "savings-account", "employment-since"])],
        [
            _mar(["savings-account", "checking-account", "credit-amount"],
                 "age", interval(hi=25), 0.18, 0.12),
            _mar(["employment-since", "duration"], "sex", in_set("female"), 0.2, 0.1),
        ],
        [
            _mnar("checking-account", in_set("no account"), 0.25, 0.05),
            _mnar("duration", interval(hi=20), 0.25, 0.05),
            _mnar("savings-account", not_in_set("no savings account"), 0.2, 0.1),
            _mnar("employment-since", in_set("<1 year", "unemployed"), 0.2, 0.1),
            _mnar("credit-amount", interval(lo=5000, lo_closed=False), 0.25, 0.05),
        ],
    ),
    group=GroupSpec(("sex", "age"), (in_set("female"), interval(hi=25))),
    schema=GERMAN_SCHEMA,
    fixture="german_fixture.csv",
))


# -- folk-income (ACSIncome): SEX 2 = female, RAC1P 1 = white ------------------

_register(DatasetPreset(
    name="folk-income",
    specs=_specs(
        [_mcar(["WKHP", "AGEP", "SCHL", "MAR"])],
        [
            _mar(["WKHP", "SCHL"], "SEX", in_set("2"), 0.2, 0.1),
            _mar(["MAR", "AGEP"], "RAC1P", not_in_set("1"), 0.2, 0.1),
        ],
        [
            _mnar("MAR", not_in_set("1"), 0.25, 0.05),          # 1 = married
            _mnar("WKHP", interval(hi=40, hi_closed=False), 0.25, 0.05),
            _mnar("AGEP", interval(lo=50, lo_closed=False), 0.25, 0.05),
            _mnar("SCHL", interval(hi=21, hi_closed=False), 0.25, 0.05),
        ],
    ),
    group=GroupSpec(("SEX", "RAC1P"), (in_set("2"), not_in_set("1"))),
))


# -- law-school: male 0 = female, non-White dis --------------------------------

_register(DatasetPreset(
    name="law-school",
    specs=_specs(
        [_mcar(["zfygpa", "ugpa", "fam_inc", "tier"])],
        [
            _mar(["ugpa", "zfygpa"], "male", in_set("0"), 0.2, 0.1),
            _mar(["fam_inc", "tier"], "race", not_in_set("white"), 0.15, 0.15),
        ],
        [
            _mnar("ugpa", interval(hi=3.0, hi_closed=False), 0.2, 0.1),
            _mnar("zfygpa", interval(hi=0), 0.2, 0.1),
            _mnar("fam_inc", interval(hi=4, hi_closed=False), 0.2, 0.1),
            _mnar("tier", interval(hi=4, hi_closed=False), 0.2, 0.1),
        ],
    ),
    group=GroupSpec(("male", "race"), (in_set("0"), not_in_set("white"))),
))


# -- bank: age extremes are the dis group --------------------------------------

_register(DatasetPreset(
    name="bank",
    specs=_specs(
        [_mcar(["balance", "campaign", "education", "job"])],
        [
            _mar(["education", "job"], "age", interval(lo=30), 0.18, 0.12),
            _mar(["balance", "campaign"], "marital", in_set("single"), 0.2, 0.1),
        ],
        [
            _mnar("education", in_set("tertiary"), 0.2, 0.1),
            _mnar("job", not_in_set("management", "blue-collar"), 0.2, 0.1),
            _mnar("balance", interval(hi=1000), 0.2, 0.1),
            _mnar("campaign", interval(hi=1), 0.2, 0.1),
        ],
    ),
    group=GroupSpec(("age",), (any_of(interval(hi=25, hi_closed=False),
                                      interval(lo=60, lo_closed=False)),)),
))


# -- heart (cardio): gender 1 = female ------------------------------------------

_register(DatasetPreset(
    name="heart",
    specs=_specs(
        [_mcar(["weight", "height", "cholesterol", "gluc"])],
        [
            _mar(["weight", "height"], "gender", in_set("1"), 0.2, 0.1),
            _mar(["cholesterol", "gluc"], "age", interval(lo=50), 0.2, 0.1),
        ],
        [
            _mnar("weight", interval(lo=75), 0.25, 0.05),
            _mnar("height", interval(hi=160, hi_closed=False), 0.2, 0.1),
            _mnar("cholesterol", not_in_set("1"), 0.16, 0.14),  # 1 = normal
            _mnar("gluc", not_in_set("1"), 0.12, 0.18),         # dis rate below priv, per table
        ],
    ),
    group=GroupSpec(("gender",), (in_set("1"),)),
))


# -- folk-employment (ACSEmployment) --------------------------------------------

_register(DatasetPreset(
    name="folk-employment",
    specs=_specs(
        [_mcar(["DIS", "MIL", "AGEP", "SCHL"])],
        [
            _mar(["MIL", "AGEP"], "SEX", in_set("2"), 0.2, 0.1),
            _mar(["DIS", "SCHL"], "RAC1P", not_in_set("1"), 0.2, 0.1),
        ],
        [
            _mnar("DIS", in_set("1"), 0.25, 0.05),              # 1 = with a disability
            _mnar("MIL", in_set("2", "3"), 0.05, 0.25),         # past duty / training; dis rate below priv
            _mnar("AGEP", interval(lo=50, lo_closed=False), 0.25, 0.05),
            _mnar("SCHL", interval(hi=21, hi_closed=False), 0.25, 0.05),
        ],
    ),
    group=GroupSpec(("SEX", "RAC1P"), (in_set("2"), not_in_set("1"))),
))


PRESET_NAMES = tuple(sorted(_PRESETS))


def get_preset(name: str) -> DatasetPreset:
    try:
        return _PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown dataset preset {name!r}; available: {', '.join(PRESET_NAMES)}")
