"""Synthetic german-credit-schema fixture.

1,000 rows with the published demographic margins: sex 690/310, age<=25 in
190 rows, 105 young women, overall base rate 0.700, per-group base rates
0.723 (male) / 0.648 (female) / 0.579 (young) / 0.552 (young women). Feature
distributions are synthetic but label-correlated, so models trained on the
fixture have real signal. Generation is fully deterministic.
"""

from __future__ import annotations

import csv
from importlib import resources
from pathlib import Path

import numpy as np

FIXTURE_SEED = 8675309

# (sex, young, rows, positives) — margins derived from the published table.
_CELLS = (
    ("male", False, 605, 447),
    ("male", True, 85, 52),
    ("female", False, 205, 143),
    ("female", True, 105, 58),
)

HEADER = [
    "checking-account", "duration", "credit-history", "purpose", "credit-amount",
    "savings-account", "employment-since", "installment-rate", "sex", "other-debtors",
    "residence-since", "property", "age", "other-installment-plans", "housing",
    "existing-credits", "job", "num-dependents", "telephone", "foreign-worker",
    "personal-status", "risk",
]


def _choice(rng, values, p_good, p_bad, y):
    p = p_good if y else p_bad
    return values[rng.choice(len(values), p=np.asarray(p) / np.sum(p))]


def _make_row(rng, sex, young, y):
    age = int(rng.integers(19, 26)) if young else int(rng.integers(26, 76))
    duration = int(np.clip(rng.normal(16 if y else 30, 9), 4, 72))
    credit_amount = int(np.clip(rng.lognormal(7.6 if y else 8.3, 0.55), 250, 18000))

    checking = _choice(
        rng,
        ["no account", "<0", "0<=x<200", ">=200"],
        [0.42, 0.13, 0.22, 0.23], [0.15, 0.47, 0.26, 0.12], y)
    savings = _choice(
        rng,
        ["no savings account", "<100", "100<=x<500", "500<=x<1000", ">=1000"],
        [0.22, 0.42, 0.12, 0.09, 0.15], [0.10, 0.68, 0.12, 0.05, 0.05], y)
    employment = _choice(
        rng,
        ["unemployed", "<1 year", "1<=x<4", "4<=x<7", ">=7"],
        [0.04, 0.12, 0.33, 0.20, 0.31], [0.10, 0.28, 0.34, 0.14, 0.14], y)
    history = _choice(
        rng,
        ["critical", "delay", "existing paid", "all paid", "no credits"],
        [0.34, 0.08, 0.50, 0.04, 0.04], [0.17, 0.10, 0.55, 0.10, 0.08], y)
    purpose = _choice(
        rng,
        ["car", "furniture", "radio/tv", "education", "business", "repairs"],
        [0.32, 0.18, 0.30, 0.06, 0.10, 0.04], [0.36, 0.20, 0.20, 0.10, 0.09, 0.05], y)
    prop = _choice(
        rng,
        ["real estate", "savings", "car", "unknown"],
        [0.32, 0.24, 0.30, 0.14], [0.18, 0.22, 0.34, 0.26], y)

    debtors = _choice(rng, ["none", "guarantor", "co-applicant"],
                      [0.90, 0.06, 0.04], [0.88, 0.05, 0.07], y)
    plans = _choice(rng, ["none", "bank", "stores"],
                    [0.84, 0.12, 0.04], [0.72, 0.21, 0.07], y)
    housing = _choice(rng, ["own", "rent", "free"],
                      [0.74, 0.16, 0.10], [0.62, 0.26, 0.12], y)
    job = _choice(rng, ["skilled", "unskilled", "management", "unemployed"],
                  [0.63, 0.20, 0.15, 0.02], [0.62, 0.19, 0.15, 0.04], y)
    telephone = _choice(rng, ["none", "yes"], [0.58, 0.42], [0.62, 0.38], y)
    foreign = _choice(rng, ["yes", "no"], [0.96, 0.04], [0.98, 0.02], y)
    if sex == "female":
        status = _choice(rng, ["single", "married", "divorced", "widowed"],
                         [0.30, 0.50, 0.15, 0.05], [0.32, 0.48, 0.15, 0.05], y)
    else:
        status = _choice(rng, ["single", "married", "divorced", "widowed"],
                         [0.55, 0.35, 0.08, 0.02], [0.57, 0.33, 0.08, 0.02], y)

    return [
        checking, duration, history, purpose, credit_amount,
        savings, employment, int(rng.integers(1, 5)), sex, debtors,
        int(rng.integers(1, 5)), prop, age, plans, housing,
        int(rng.integers(1, 4)), job, int(rng.integers(1, 3)), telephone, foreign,
        status, "good" if y else "bad",
    ]


def generate_german_fixture(path) -> Path:
    """Write the fixture CSV to `path` and return it."""
    rng = np.random.default_rng(FIXTURE_SEED)
    rows = []
    for sex, young, count, positives in _CELLS:
        for i in range(count):
            rows.append(_make_row(rng, sex, young, y=i < positives))
    order = rng.permutation(len(rows))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for i in order:
            writer.writerow(rows[i])
    return path


def german_fixture_path() -> Path:
    """Path of the packaged fixture CSV."""
    return Path(resources.files("missbench").joinpath("data/german_fixture.csv"))
