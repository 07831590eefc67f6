import numpy as np
import pytest

from missbench.dataset import (CATEGORICAL, ColumnSchema, Dataset, GroupSpec,
                               NUMERICAL, SENSITIVE, TARGET, load_csv)
from missbench.fixtures import german_fixture_path
from missbench.predicates import in_set
from missbench.presets import get_preset


def toy_schema():
    return (
        ColumnSchema("x", NUMERICAL),
        ColumnSchema("color", CATEGORICAL),
        ColumnSchema("sex", CATEGORICAL, role=SENSITIVE),
        ColumnSchema("label", CATEGORICAL, role=TARGET, categories=("no", "yes")),
    )


def toy_dataset(n=8, seed=0, null_x=(), null_color=()):
    """Small mixed dataset; null_x / null_color list row indices to mask."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n)
    color = np.array([["red", "green", "blue"][i % 3] for i in range(n)], dtype=object)
    sex = np.array([["male", "female"][i % 2] for i in range(n)], dtype=object)
    label = np.array([["no", "yes"][int(v > 0)] for v in x], dtype=object)
    mask = np.zeros((n, 3), dtype=bool)
    for i in null_x:
        x[i] = np.nan
        mask[i, 0] = True
    for i in null_color:
        color[i] = None
        mask[i, 1] = True
    return Dataset(toy_schema(), {"x": x, "color": color, "sex": sex, "label": label}, mask)


def sex_group():
    return GroupSpec(("sex",), (in_set("female"),))


@pytest.fixture(scope="session")
def german():
    preset = get_preset("german")
    return load_csv(german_fixture_path(), preset.schema, {""})


@pytest.fixture(scope="session")
def german_preset():
    return get_preset("german")
