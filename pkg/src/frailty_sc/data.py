"""Cohort data model, CSV/schema ingestion and deterministic splits.

A cohort holds one row per subject.  Determinants are stored at the variable
level (categoricals as level codes); :meth:`Cohort.design` expands them into
the reference-coded dummy matrix that the logistic models use.  Outcome labels
are kept in {-1, +1} internally; CSV files carry 0/1.
"""
from __future__ import annotations

import csv
import math
import os
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib
import tomli_w

from .stats import SizeError

DEFAULT_AGE_BOUNDS = (65, 70, 75, 80, 85, 90)
KINDS = ("binary", "count", "categorical")


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


def age_class_labels(bounds: Sequence[int]) -> tuple[str, ...]:
    """``(65, 70, ..., 90)`` -> ``("[65-69]", ..., "[90+]")``."""
    out = [f"[{lo}-{hi - 1}]" for lo, hi in zip(bounds[:-1], bounds[1:])]
    out.append(f"[{bounds[-1]}+]")
    return tuple(out)


def age_to_class(age: float, bounds: Sequence[int]) -> int:
    if not math.isfinite(age) or age < bounds[0]:
        raise ParseError(f"age {age} below the first age class bound {bounds[0]}")
    idx = 0
    for i, b in enumerate(bounds):
        if age >= b:
            idx = i
    return idx


def substream(seed: int, stage: str) -> np.random.Generator:
    """Independent generator for one pipeline stage.

    The stream is keyed by ``(seed, crc32(stage))`` so any stage can be re-run
    in isolation and still see the same random numbers.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(stage.encode())]))


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str = "binary"
    levels: tuple[str, ...] = ()
    reference: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if len(self.levels) < 2:
                raise SchemaError(f"categorical {self.name!r} needs at least two levels")
            ref = self.reference if self.reference is not None else self.levels[0]
            if ref not in self.levels:
                raise SchemaError(f"reference {ref!r} not among levels of {self.name!r}")
            object.__setattr__(self, "reference", ref)
            object.__setattr__(self, "levels", tuple(self.levels))

    @property
    def reference_index(self) -> int:
        return self.levels.index(self.reference)

    def level_column(self, level: str) -> str:
        return f"{self.name}{level}" if level.startswith("[") else f"{self.name}[{level}]"

    def dummy_names(self) -> list[str]:
        if self.kind != "categorical":
            return [self.name]
        return [self.level_column(lv) for lv in self.levels if lv != self.reference]


@dataclass
class Schema:
    """Column roles of a cohort CSV.  See docs/formats.md for the TOML layout."""

    variables: list[Variable]
    outcomes: list[str]
    id_column: str = "id"
    age_column: str = "age"
    age_bounds: tuple[int, ...] = DEFAULT_AGE_BOUNDS
    age_determinant: bool = True
    sex_column: str = "female"
    flags: list[str] = field(default_factory=list)
    exclusions: dict[str, str] = field(default_factory=dict)
    apriori_exclude: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.age_bounds = tuple(int(b) for b in self.age_bounds)
        if list(self.age_bounds) != sorted(set(self.age_bounds)):
            raise SchemaError("age bounds must be strictly increasing")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate variable names")
        for out, flag in self.exclusions.items():
            if out not in self.outcomes:
                raise SchemaError(f"exclusion for unknown outcome {out!r}")
            if flag not in self.flags:
                raise SchemaError(f"exclusion predicate {flag!r} is not a declared flag")

    @property
    def age_labels(self) -> tuple[str, ...]:
        return age_class_labels(self.age_bounds)

    def determinants(self) -> list[Variable]:
        """All determinants in column order: age (if used), sex, then the rest."""
        out = []
        if self.age_determinant:
            out.append(Variable("age", "categorical", self.age_labels, self.age_labels[0]))
        out.append(Variable(self.sex_column, "binary"))
        out.extend(v for v in self.variables if v.name not in ("age", self.sex_column))
        return out

    # -- TOML ---------------------------------------------------------------
    def to_dict(self) -> dict:
        d = {
            "id_column": self.id_column,
            "outcomes": list(self.outcomes),
            "flags": list(self.flags),
            "apriori_exclude": list(self.apriori_exclude),
            "age": {
                "column": self.age_column,
                "bounds": list(self.age_bounds),
                "determinant": self.age_determinant,
            },
            "sex": {"column": self.sex_column},
            "exclusions": dict(self.exclusions),
            "variables": [],
        }
        for v in self.variables:
            row = {"name": v.name, "kind": v.kind}
            if v.kind == "categorical":
                row["levels"] = list(v.levels)
                row["reference"] = v.reference
            d["variables"].append(row)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Schema":
        try:
            outcomes = list(d["outcomes"])
        except KeyError:
            raise SchemaError("schema must declare 'outcomes'") from None
        variables = []
        for row in d.get("variables", []):
            if "name" not in row:
                raise SchemaError("every [[variables]] entry needs a name")
            variables.append(
                Variable(
                    row["name"],
                    row.get("kind", "binary"),
                    tuple(str(x) for x in row.get("levels", ())),
                    row.get("reference"),
                )
            )
        age = d.get("age", {})
        sex = d.get("sex", {})
        return cls(
            variables=variables,
            outcomes=outcomes,
            id_column=d.get("id_column", "id"),
            age_column=age.get("column", "age"),
            age_bounds=tuple(age.get("bounds", DEFAULT_AGE_BOUNDS)),
            age_determinant=bool(age.get("determinant", True)),
            sex_column=sex.get("column", "female"),
            flags=list(d.get("flags", [])),
            exclusions=dict(d.get("exclusions", {})),
            apriori_exclude=list(d.get("apriori_exclude", [])),
        )


def load_schema(path) -> Schema:
    with open(path, "rb") as fh:
        return Schema.from_dict(tomllib.load(fh))


def write_schema(schema: Schema, path) -> None:
    atomic_write_bytes(path, tomli_w.dumps(schema.to_dict()).encode())


@dataclass(frozen=True)
class SubjectRecord:
    id: str
    determinants: np.ndarray
    outcomes: np.ndarray
    age_class: str
    sex: int


@dataclass(frozen=True, eq=False)
class Cohort:
    """Immutable subjects-by-determinants table with +-1 outcome labels."""

    ids: np.ndarray
    variables: tuple[Variable, ...]
    values: np.ndarray
    outcome_names: tuple[str, ...]
    outcomes: np.ndarray
    age_labels: tuple[str, ...]
    age_class: np.ndarray
    sex: np.ndarray
    flags: Mapping[str, np.ndarray] = field(default_factory=dict)
    exclusions: Mapping[str, str] = field(default_factory=dict)
    schema: Schema | None = None

    def __post_init__(self):
        n = len(self.ids)
        if self.values.shape != (n, len(self.variables)):
            raise SchemaError("determinant matrix shape does not match subjects x variables")
        if self.outcomes.shape != (n, len(self.outcome_names)):
            raise SchemaError("outcome matrix shape does not match subjects x outcomes")
        if not np.all(np.isfinite(self.values)):
            raise ParseError("determinant values must be finite")
        if self.outcomes.size and not np.all(np.abs(self.outcomes) == 1):
            raise ParseError("outcome labels must be in {-1, +1}")
        for arr in (self.values, self.outcomes, self.age_class, self.sex, *self.flags.values()):
            arr.setflags(write=False)

    # -- basic accessors ----------------------------------------------------
    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def determinant_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.determinant_names.index(name)]

    def outcome(self, name: str) -> np.ndarray:
        try:
            return self.outcomes[:, self.outcome_names.index(name)]
        except ValueError:
            raise KeyError(f"unknown outcome {name!r}") from None

    def subject(self, i: int) -> SubjectRecord:
        return SubjectRecord(
            str(self.ids[i]),
            self.values[i].copy(),
            self.outcomes[i].copy(),
            self.age_labels[int(self.age_class[i])],
            int(self.sex[i]),
        )

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Cohort(
            ids=self.ids[idx],
            variables=self.variables,
            values=self.values[idx],
            outcome_names=self.outcome_names,
            outcomes=self.outcomes[idx],
            age_labels=self.age_labels,
            age_class=self.age_class[idx],
            sex=self.sex[idx],
            flags={k: v[idx] for k, v in self.flags.items()},
            exclusions=self.exclusions,
            schema=self.schema,
        )

    def eligible(self, outcome: str) -> np.ndarray:
        """Mask of subjects at risk for ``outcome`` (exclusion predicate false)."""
        flag = self.exclusions.get(outcome)
        if flag is None:
            return np.ones(self.n, dtype=bool)
        return ~self.flags[flag]

    def view_for(self, outcome: str) -> "Cohort":
        return self.subset(self.eligible(outcome))

    # -- encodings ----------------------------------------------------------
    def design(self, names: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
        """Reference-coded design matrix (no intercept) for the given variables."""
        names = self.determinant_names if names is None else list(names)
        cols, colnames = [], []
        for name in names:
            v = self.variable(name)
            x = self.column(name)
            if v.kind == "categorical":
                for j, lv in enumerate(v.levels):
                    if lv == v.reference:
                        continue
                    cols.append((x == j).astype(float))
                    colnames.append(v.level_column(lv))
            else:
                cols.append(x.astype(float))
                colnames.append(v.name)
        X = np.column_stack(cols) if cols else np.empty((self.n, 0))
        return X, colnames

    def design_groups(self, names: Sequence[str]) -> dict[str, list[int]]:
        """Variable name -> column indices in :meth:`design` output."""
        groups, j = {}, 0
        for name in names:
            k = len(self.variable(name).dummy_names())
            groups[name] = list(range(j, j + k))
            j += k
        return groups


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"row {row}: column {col!r}: cannot parse {text!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}: column {col!r}: non-finite value {text!r}")
    return v


def _parse_label(text: str, row: int, col: str) -> int:
    v = _parse_float(text, row, col)
    if v == 1:
        return 1
    if v in (0, -1):
        return -1
    raise ParseError(f"row {row}: outcome {col!r} must be 0/1, got {text!r}")


def load_cohort(path, schema: Schema | str | os.PathLike) -> Cohort:
    """Read a cohort CSV according to ``schema`` (a Schema or a TOML path)."""
    if not isinstance(schema, Schema):
        schema = load_schema(schema)
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        dets = schema.determinants()
        needed = [schema.id_column, schema.sex_column, *schema.outcomes, *schema.flags]
        if schema.age_determinant or schema.age_column in header:
            needed.append(schema.age_column)
        needed += [v.name for v in dets if v.name != "age"]
        for col in needed:
            if col not in header:
                raise SchemaError(f"missing column {col!r} in {path}")
        rows = list(reader)

    labels = schema.age_labels
    n = len(rows)
    ids = np.empty(n, dtype=object)
    values = np.empty((n, len(dets)))
    outcomes = np.empty((n, len(schema.outcomes)), dtype=np.int8)
    age_class = np.zeros(n, dtype=np.int64)
    flags = {f: np.empty(n, dtype=bool) for f in schema.flags}
    has_age = schema.age_column in header
    for i, row in enumerate(rows):
        ids[i] = row[schema.id_column]
        if has_age:
            a = row[schema.age_column].strip()
            age_class[i] = labels.index(a) if a in labels else age_to_class(
                _parse_float(a, i, schema.age_column), schema.age_bounds
            )
        for j, v in enumerate(dets):
            if v.name == "age":
                values[i, j] = age_class[i]
                continue
            text = row[v.name].strip()
            if v.kind == "categorical":
                if text not in v.levels:
                    raise ParseError(f"row {i}: unknown level {text!r} for {v.name!r}")
                values[i, j] = v.levels.index(text)
                continue
            x = _parse_float(text, i, v.name)
            if v.kind == "binary" and x not in (0.0, 1.0):
                raise ParseError(f"row {i}: binary {v.name!r} must be 0/1, got {text!r}")
            if v.kind == "count" and x < 0:
                raise ParseError(f"row {i}: count {v.name!r} must be >= 0, got {text!r}")
            values[i, j] = x
        for k, o in enumerate(schema.outcomes):
            outcomes[i, k] = _parse_label(row[o], i, o)
        for f in schema.flags:
            flags[f][i] = _parse_float(row[f], i, f) != 0
    sex = values[:, [v.name for v in dets].index(schema.sex_column)].astype(np.int8)
    return Cohort(
        ids=ids,
        variables=tuple(dets),
        values=values,
        outcome_names=tuple(schema.outcomes),
        outcomes=outcomes,
        age_labels=labels,
        age_class=age_class,
        sex=sex,
        flags=flags,
        exclusions=dict(schema.exclusions),
        schema=schema,
    )


def _fmt(x: float) -> str:
    return repr(float(x)) if x != int(x) else str(int(x))


def cohort_rows(cohort: Cohort, schema: Schema):
    """Header and row iterator in the CSV layout :func:`load_cohort` reads."""
    dets = [v for v in cohort.variables if v.name != "age"]
    header = [schema.id_column, schema.age_column] + [v.name for v in dets]
    header += list(cohort.outcome_names) + list(cohort.flags)
    det_idx = [cohort.determinant_names.index(v.name) for v in dets]

    def rows():
        for i in range(cohort.n):
            row = [str(cohort.ids[i]), cohort.age_labels[int(cohort.age_class[i])]]
            for v, j in zip(dets, det_idx):
                x = cohort.values[i, j]
                row.append(v.levels[int(x)] if v.kind == "categorical" else _fmt(x))
            row += ["1" if o == 1 else "0" for o in cohort.outcomes[i]]
            row += ["1" if cohort.flags[f][i] else "0" for f in cohort.flags]
            yield row

    return header, rows()


def write_cohort(cohort: Cohort, path, schema: Schema | None = None) -> None:
    schema = schema or cohort.schema
    if schema is None:
        raise SchemaError("writing a cohort needs its schema")
    header, rows = cohort_rows(cohort, schema)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    seed: int = 0
    train_fraction: float = 0.75
    n_calibration_groups: int = 10
    per_outcome_exclusions: Mapping[str, str] = field(default_factory=dict)
    stratify: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_calibration_groups < 2:
            raise ValueError("n_calibration_groups must be >= 2")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_indices(n: int, train_fraction: float, rng: np.random.Generator,
                  labels=None) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        raise SizeError(f"cannot split a cohort of {n} subject(s)")
    if labels is None:
        n_train = min(max(_round_half_up(train_fraction * n), 1), n - 1)
        perm = rng.permutation(n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    train = []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        k = _round_half_up(train_fraction * members.size)
        train.append(rng.permutation(members)[:k])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(n), train)
    return train, test


def split_cohort(cohort: Cohort, plan: SplitPlan, outcome: str | None = None,
                 ) -> tuple[Cohort, Cohort]:
    """Random train/test partition, deterministic in ``plan.seed``.

    With ``outcome`` given, that outcome's exclusion predicate (from the plan,
    falling back to the cohort's own) is applied before splitting.
    """
    if outcome is not None:
        flag = plan.per_outcome_exclusions.get(outcome, cohort.exclusions.get(outcome))
        if flag is not None:
            cohort = cohort.subset(~cohort.flags[flag])
    labels = None
    if plan.stratify:
        if outcome is None:
            raise ValueError("stratified split needs an outcome")
        labels = cohort.outcome(outcome)
    tr, te = split_indices(cohort.n, plan.train_fraction, substream(plan.seed, "split"), labels)
    return cohort.subset(tr), cohort.subset(te)


def partition_indices(n: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("need k >= 2 groups")
    if n < k:
        raise SizeError(f"cannot make {k} groups from {n} subjects")
    return [np.sort(g) for g in np.array_split(rng.permutation(n), k)]


def partition_groups(cohort: Cohort, k: int, seed: int) -> list[Cohort]:
    """k disjoint, near-equal groups covering the cohort."""
    groups = partition_indices(cohort.n, k, substream(seed, "groups"))
    return [cohort.subset(g) for g in groups]
