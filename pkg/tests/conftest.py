import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frailty_sc.data import Cohort, Schema, Variable, age_class_labels

settings.register_profile(
    "default", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def make_cohort(values: dict, outcomes: dict, age_class=None, sex=None, flags=None,
                exclusions=None, kinds=None, levels=None):
    """Small in-memory cohort: ``values`` maps determinant name -> column."""
    n = len(next(iter(outcomes.values())))
    kinds = kinds or {}
    levels = levels or {}
    labels = age_class_labels((65, 70, 75, 80, 85, 90))
    age_class = np.zeros(n, dtype=int) if age_class is None else np.asarray(age_class)
    sex = np.zeros(n, dtype=int) if sex is None else np.asarray(sex)
    variables = [Variable(nm, kinds.get(nm, "binary"), *levels.get(nm, ())) for nm in values]
    schema = Schema(variables=variables, outcomes=list(outcomes),
                    flags=list(flags or {}), exclusions=dict(exclusions or {}))
    dets = schema.determinants()
    cols = []
    for v in dets:
        if v.name == "age":
            cols.append(age_class.astype(float))
        elif v.name == schema.sex_column:
            cols.append(sex.astype(float))
        else:
            cols.append(np.asarray(values[v.name], dtype=float))
    return Cohort(
        ids=np.array([f"P{i:05d}" for i in range(n)], dtype=object),
        variables=tuple(dets),
        values=np.column_stack(cols),
        outcome_names=tuple(outcomes),
        outcomes=np.column_stack([np.asarray(v, dtype=np.int8) for v in outcomes.values()]),
        age_labels=labels,
        age_class=age_class,
        sex=sex.astype(np.int8),
        flags={k: np.asarray(v, dtype=bool) for k, v in (flags or {}).items()},
        exclusions=dict(exclusions or {}),
        schema=schema,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


DATA = __import__("pathlib").Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def small_spec_path():
    return DATA / "small.toml"


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
