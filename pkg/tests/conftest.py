import numpy as np
import pytest
from hypothesis import settings

from itl_lime.tabular import CATEGORICAL, NUMERIC, Dataset, FeatureSchema, FeatureSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def mixed_schema():
    return FeatureSchema((FeatureSpec("age", NUMERIC), FeatureSpec("bmi", NUMERIC),
                          FeatureSpec("smoker", CATEGORICAL, ("no", "yes", "former"))), "label")


@pytest.fixture
def mixed_dataset(mixed_schema):
    rng = np.random.default_rng(7)
    n = 60
    rows = np.empty((n, 3), dtype=object)
    rows[:, 0] = [float(v) for v in rng.normal(50, 10, n)]
    rows[:, 1] = [float(v) for v in rng.normal(25, 4, n)]
    rows[:, 2] = list(rng.choice(["no", "yes", "former"], n))
    labels = (rng.random(n) < 0.5).astype(int)
    return Dataset(mixed_schema, rows, labels)


TINY = {
    "synth": {"n_source": 300, "n_target": 60, "n_numeric": 3, "n_categorical": 1,
              "n_components": 4},
    "blackbox": {"hidden": [8], "epochs": 10, "n_centers": 5},
    "encoder": {"hidden": 16, "epochs": 3, "batch_size": 32},
    "K": 4,
    "xi": "1:0.5",
    "n_explained": 3,
    "lime_samples": 200,
    "stability_runs": 2,
    "lle_trials": 2,
    "kmedoids_restarts": 2,
}


@pytest.fixture
def tiny_config(tmp_path):
    import json
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY), encoding="utf-8")
    return path


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
