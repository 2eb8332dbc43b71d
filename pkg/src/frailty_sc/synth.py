"""Seeded synthetic cohorts with a planted latent frailty signal.

Draw order (one ``numpy`` Generator, seeded once, consumed strictly in this
order so the output is a pure function of the spec):

1. age class per subject, 2. sex per subject, 3. latent normal per subject,
4. signal determinants column by column, 5. aggregate-preset columns,
6. noise prevalences (one per column), 7. noise columns, 8. flag columns,
9. outcomes in declaration order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .data import DEFAULT_AGE_BOUNDS, Cohort, Schema, Variable, age_class_labels
from .stats import sigmoid

DEFAULT_AGE_PROBS = (0.30, 0.25, 0.20, 0.13, 0.08, 0.04)


class SpecError(ValueError):
    pass


@dataclass
class OutcomeSpec:
    name: str
    intercept: float
    # list over encoded columns, or {column name: coefficient} with 0 elsewhere
    coefficients: Sequence[float] | Mapping[str, float] = field(default_factory=dict)


@dataclass
class GeneratorSpec:
    n_subjects: int
    n_binary_determinants: int
    n_noise_determinants: int
    outcome_specs: list[OutcomeSpec]
    latent_strength: float = 1.0
    seed: int = 0
    signal_base_logit: float = -1.5
    signal_loading: float = 1.0
    age_probs: Sequence[float] = DEFAULT_AGE_PROBS
    age_effect: float = 0.3  # latent shift per age class step
    female_prob: float = 0.55
    sex_effect: float = 0.0  # latent shift for females
    noise_prevalence: tuple[float, float] = (0.005, 0.5)
    aggregate_preset: bool = False
    flags: Mapping[str, float] = field(default_factory=dict)
    exclusions: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_subjects < 1:
            raise SpecError("n_subjects must be positive")
        if self.n_binary_determinants < 0 or self.n_noise_determinants < 0:
            raise SpecError("determinant counts must be nonnegative")
        if self.latent_strength < 0:
            raise SpecError("latent_strength must be >= 0")
        if len(self.age_probs) != len(DEFAULT_AGE_BOUNDS):
            raise SpecError("age_probs needs one entry per age class")
        if abs(sum(self.age_probs) - 1.0) > 1e-9 or min(self.age_probs) < 0:
            raise SpecError("age_probs must be a probability vector")
        lo, hi = self.noise_prevalence
        if not 0 < lo < hi < 1:
            raise SpecError("noise_prevalence must satisfy 0 < lo < hi < 1")
        cols = design_columns(self)
        width = len(cols)
        for o in self.outcome_specs:
            if isinstance(o.coefficients, Mapping):
                unknown = set(o.coefficients) - set(cols)
                if unknown:
                    raise SpecError(f"outcome {o.name!r}: unknown columns {sorted(unknown)}")
            elif len(o.coefficients) != width:
                raise SpecError(
                    f"outcome {o.name!r}: {len(o.coefficients)} coefficients for {width} columns"
                )
        for out, flag in self.exclusions.items():
            if flag not in self.flags:
                raise SpecError(f"exclusion {out!r} refers to undeclared flag {flag!r}")

    # names ------------------------------------------------------------------
    def signal_names(self) -> list[str]:
        return [f"s{j + 1:02d}" for j in range(self.n_binary_determinants)]

    def aggregate_names(self) -> list[str]:
        # observed sub-condition and the aggregate "any of" indicator
        return ["sub_a", "aggregate"] if self.aggregate_preset else []

    def noise_names(self) -> list[str]:
        return [f"n{j + 1:02d}" for j in range(self.n_noise_determinants)]

    def schema(self) -> Schema:
        names = self.signal_names() + self.aggregate_names() + self.noise_names()
        return Schema(
            variables=[Variable(nm, "binary") for nm in names],
            outcomes=[o.name for o in self.outcome_specs],
            flags=list(self.flags),
            exclusions=dict(self.exclusions),
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "GeneratorSpec":
        d = dict(d)
        outs = [
            OutcomeSpec(o["name"], float(o.get("intercept", 0.0)), o.get("coefficients", {}))
            for o in d.pop("outcomes", d.pop("outcome_specs", []))
        ]
        if "noise_prevalence" in d:
            d["noise_prevalence"] = tuple(d["noise_prevalence"])
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise SpecError(f"unknown generator keys: {sorted(extra)}")
        return cls(outcome_specs=outs, **d)


def load_spec(path) -> GeneratorSpec:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    return GeneratorSpec.from_dict(data.get("generator", data))


def generate(spec: GeneratorSpec, seed: int | None = None) -> Cohort:
    """Draw a cohort from ``spec``; ``seed`` overrides ``spec.seed``."""
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n = spec.n_subjects
    schema = spec.schema()
    labels = age_class_labels(DEFAULT_AGE_BOUNDS)

    age_class = rng.choice(len(labels), size=n, p=np.asarray(spec.age_probs))
    female = (rng.random(n) < spec.female_prob).astype(float)
    latent = (
        spec.latent_strength * rng.standard_normal(n)
        + spec.age_effect * age_class
        + spec.sex_effect * female
    )

    cols: dict[str, np.ndarray] = {}
    for nm in spec.signal_names():
        p = sigmoid(spec.signal_base_logit + spec.signal_loading * latent)
        cols[nm] = (rng.random(n) < p).astype(float)
    if spec.aggregate_preset:
        p = sigmoid(spec.signal_base_logit + spec.signal_loading * latent)
        sub_a = (rng.random(n) < p).astype(float)
        # hidden sub-condition: never emitted as its own column
        sub_b = (rng.random(n) < 0.12).astype(float)
        cols["sub_a"] = sub_a
        cols["aggregate"] = np.maximum(sub_a, sub_b)
    prev = rng.uniform(*spec.noise_prevalence, size=spec.n_noise_determinants)
    for nm, p in zip(spec.noise_names(), prev):
        cols[nm] = (rng.random(n) < p).astype(float)
    flags = {f: rng.random(n) < float(p) for f, p in spec.flags.items()}

    dets = schema.determinants()
    values = np.empty((n, len(dets)))
    for j, v in enumerate(dets):
        if v.name == "age":
            values[:, j] = age_class
        elif v.name == schema.sex_column:
            values[:, j] = female
        else:
            values[:, j] = cols[v.name]

    proto = Cohort(
        ids=np.array([f"S{i:06d}" for i in range(n)], dtype=object),
        variables=tuple(dets),
        values=values,
        outcome_names=tuple(schema.outcomes),
        outcomes=np.ones((n, len(schema.outcomes)), dtype=np.int8),
        age_labels=labels,
        age_class=age_class,
        sex=female.astype(np.int8),
        flags=flags,
        exclusions=dict(schema.exclusions),
        schema=schema,
    )
    X, colnames = proto.design()
    outcomes = np.empty((n, len(spec.outcome_specs)), dtype=np.int8)
    for k, o in enumerate(spec.outcome_specs):
        if isinstance(o.coefficients, Mapping):
            beta = np.array([float(o.coefficients.get(c, 0.0)) for c in colnames])
        else:
            beta = np.asarray(o.coefficients, dtype=float)
        p = sigmoid(o.intercept + X @ beta)
        outcomes[:, k] = np.where(rng.random(n) < p, 1, -1)
    return Cohort(
        ids=proto.ids,
        variables=proto.variables,
        values=values,
        outcome_names=proto.outcome_names,
        outcomes=outcomes,
        age_labels=labels,
        age_class=age_class,
        sex=proto.sex,
        flags=flags,
        exclusions=proto.exclusions,
        schema=schema,
    )


def design_columns(spec: GeneratorSpec) -> list[str]:
    """Encoded column names, in the order list-valued coefficients use."""
    return [c for v in spec.schema().determinants() for c in v.dummy_names()]
