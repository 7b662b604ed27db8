"""Profiles, datasets, CSV/manifest I/O and leave-one-profile-out splits.

A profile is one operating run sampled at 1 Hz. Values are held column-wise
in a read-only float array with columns ``t, n_m, I_m, T_ref, T_W, T_DE,
T_NDE``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

COLUMNS = ("t", "n_m", "I_m", "T_ref", "T_W", "T_DE", "T_NDE")
INPUTS = ("n_m", "I_m", "T_ref")
TARGETS = ("T_W", "T_DE", "T_NDE")
TEMPERATURES = ("T_ref", "T_W", "T_DE", "T_NDE")
DYNAMICS = ("slow", "medium", "fast")


@dataclass(frozen=True)
class Sample:
    t: int
    n_m: float
    I_m: float
    T_ref: float
    T_W: float
    T_DE: float
    T_NDE: float


@dataclass(frozen=True, eq=False)
class Profile:
    id: str
    dynamics_class: str
    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float, copy=True)
        if arr.ndim != 2 or arr.shape[1] != len(COLUMNS):
            raise DataError(f"profile {self.id!r}: expected (n, {len(COLUMNS)}) values, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_samples(cls, id: str, dynamics_class: str, samples: Iterable[Sample]) -> "Profile":
        rows = [[getattr(s, c) for c in COLUMNS] for s in samples]
        return cls(id, dynamics_class, np.array(rows, dtype=float).reshape(-1, len(COLUMNS)))

    @classmethod
    def from_columns(cls, id: str, dynamics_class: str, **cols) -> "Profile":
        missing = [c for c in COLUMNS if c not in cols]
        if missing:
            raise DataError(f"profile {id!r}: missing columns {missing}")
        return cls(id, dynamics_class, np.column_stack([np.asarray(cols[c], dtype=float) for c in COLUMNS]))

    def __len__(self):
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def inputs(self) -> np.ndarray:
        return self.values[:, 1:4]

    @property
    def targets(self) -> np.ndarray:
        return self.values[:, 4:7]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(int(r[0]), *map(float, r[1:])) for r in self.values]

    def same_values(self, other: "Profile") -> bool:
        return (
            self.id == other.id
            and self.dynamics_class == other.dynamics_class
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


@dataclass(frozen=True)
class Dataset:
    profiles: tuple[Profile, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        ids = [p.id for p in self.profiles]
        dup = sorted({i for i in ids if ids.count(i) > 1})
        if dup:
            raise DataError(f"duplicate profile ids: {dup}")

    @property
    def ids(self) -> list[str]:
        return [p.id for p in self.profiles]

    def get(self, profile_id: str) -> Profile:
        for p in self.profiles:
            if p.id == profile_id:
                return p
        raise DataError(f"unknown profile id {profile_id!r}")

    def subset(self, ids: Iterable[str]) -> list[Profile]:
        return [self.get(i) for i in ids]

    def replace(self, profile: Profile) -> "Dataset":
        """Copy of the dataset with the same-id profile swapped out."""
        self.get(profile.id)
        return Dataset(tuple(profile if p.id == profile.id else p for p in self.profiles), dict(self.provenance))

    @property
    def total_seconds(self) -> int:
        return sum(len(p) for p in self.profiles)


@dataclass(frozen=True)
class Split:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]

    def check(self, dataset: Dataset) -> None:
        sets = [set(self.train_ids), set(self.val_ids), set(self.test_ids)]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise DataError("split sets are not pairwise disjoint")
        if set().union(*sets) != set(dataset.ids):
            raise DataError("split does not cover the dataset ids exactly")
        if not self.train_ids or not self.test_ids:
            raise DataError("split needs non-empty train and test sets")

    def to_dict(self) -> dict:
        return {"train_ids": list(self.train_ids), "val_ids": list(self.val_ids), "test_ids": list(self.test_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "Split":
        return cls(tuple(d["train_ids"]), tuple(d["val_ids"]), tuple(d["test_ids"]))


def validate_profile(p: Profile, nonnegative_inputs: bool = True) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    out = []
    if p.dynamics_class not in DYNAMICS:
        out.append(f"dynamics_class: {p.dynamics_class!r} not in {DYNAMICS}")
    if len(p) < 2:
        out.append(f"fewer than 2 samples ({len(p)})")
    t = p.t
    for i, v in enumerate(t):
        if not math.isfinite(v) or v != int(v):
            out.append(f"t[{i}]: not a finite integer ({v})")
    for i in np.flatnonzero(np.diff(t) != 1.0):
        if math.isfinite(t[i]) and math.isfinite(t[i + 1]):
            out.append(f"t[{i + 1}]: step {t[i + 1] - t[i]:g} s, expected 1 s")
    for name in COLUMNS[1:]:
        col = p.column(name)
        for i in np.flatnonzero(~np.isfinite(col)):
            out.append(f"{name}[{i}]: non-finite value {col[i]}")
        if nonnegative_inputs and name in ("n_m", "I_m"):
            for i in np.flatnonzero(col < 0):
                out.append(f"{name}[{i}]: negative value {col[i]}")
    return out


def _parse_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise DataError(f"row {row}, column {col}: non-numeric value {cell!r}") from None


def _read_table(text, required: Sequence[str], optional: Sequence[str] = ()) -> dict[str, np.ndarray]:
    if isinstance(text, str):
        text = io.StringIO(text)
    reader = csv.reader(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV") from None
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    wanted = [c for c in (*required, *optional) if c in header]
    idx = {c: header.index(c) for c in wanted}
    cols: dict[str, list[float]] = {c: [] for c in wanted}
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise DataError(f"row {rownum}: expected {len(header)} cells, got {len(row)}")
        for c in wanted:
            cols[c].append(_parse_float(row[idx[c]], rownum, c))
    return {c: np.array(v, dtype=float) for c, v in cols.items()}


def _check_time(t: np.ndarray) -> None:
    for i, v in enumerate(t):
        if v != int(v):
            raise DataError(f"row {i + 1}, column t: timestamp {v} is not an integer second")
    for i in np.flatnonzero(np.diff(t) != 1.0):
        kind = "gap" if t[i + 1] > t[i] else "non-monotone timestamp"
        raise DataError(f"row {i + 2}: timestamp {kind} ({t[i]:g} -> {t[i + 1]:g}); 1 Hz grid required")


def parse_profile_csv(text, id: str, dynamics_class: str) -> Profile:
    """Parse a CSV (string or text stream) with the seven profile columns in any order."""
    if dynamics_class not in DYNAMICS:
        raise DataError(f"unknown dynamics class {dynamics_class!r}")
    cols = _read_table(text, COLUMNS)
    _check_time(cols["t"])
    p = Profile.from_columns(id, dynamics_class, **cols)
    problems = validate_profile(p)
    if problems:
        raise DataError(f"profile {id!r}: {problems[0]}" + (f" (+{len(problems) - 1} more)" if len(problems) > 1 else ""))
    return p


def parse_inputs_csv(text) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Parse an inference CSV: ``t`` and the three inputs required, targets optional.

    Returns ``(t, inputs, targets_or_None)``.
    """
    cols = _read_table(text, ("t", *INPUTS), TARGETS)
    _check_time(cols["t"])
    if len(cols["t"]) < 1:
        raise DataError("no data rows")
    X = np.column_stack([cols[c] for c in INPUTS])
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite input values")
    Y = np.column_stack([cols[c] for c in TARGETS]) if all(c in cols for c in TARGETS) else None
    return cols["t"], X, Y


def _fmt(v: float) -> str:
    return repr(float(v))


def profile_to_csv(p: Profile) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in p.values:
        w.writerow([str(int(row[0]))] + [_fmt(v) for v in row[1:]])
    return buf.getvalue()


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_dataset(d: Dataset, out_dir) -> Path:
    """Write one CSV per profile plus ``manifest.json``; returns the manifest path."""
    out_dir = Path(out_dir)
    entries = []
    for p in d.profiles:
        fname = f"{p.id}.csv"
        atomic_write_text(out_dir / fname, profile_to_csv(p))
        entries.append({"id": p.id, "file": fname, "dynamics": p.dynamics_class})
    manifest = {"profiles": entries}
    if d.provenance:
        manifest["provenance"] = d.provenance
    path = out_dir / "manifest.json"
    atomic_write_text(path, json.dumps(manifest, indent=2) + "\n")
    return path


def load_dataset(path) -> Dataset:
    """Load a dataset from a manifest file or a directory containing ``manifest.json``."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(manifest, dict) or not isinstance(manifest.get("profiles"), list):
        raise DataError(f"{path}: manifest must contain a 'profiles' list")
    profiles = []
    for entry in manifest["profiles"]:
        try:
            pid, fname, dyn = entry["id"], entry["file"], entry["dynamics"]
        except (KeyError, TypeError):
            raise DataError(f"{path}: manifest entries need id, file and dynamics") from None
        fpath = path.parent / fname
        try:
            with open(fpath, encoding="utf-8", newline="") as fh:
                profiles.append(parse_profile_csv(fh, pid, dyn))
        except FileNotFoundError:
            raise DataError(f"profile file not found: {fpath}") from None
        except DataError as e:
            raise DataError(f"{fpath}: {e}") from None
    return Dataset(tuple(profiles), {"kind": "imported", "path": str(path)})


def split_leave_one_out(d: Dataset, test_id: str, n_val: int, seed: int) -> Split:
    """Hold out ``test_id``; draw ``n_val`` validation profiles from the rest by seed."""
    d.get(test_id)
    rest = [i for i in d.ids if i != test_id]
    if n_val < 0 or n_val > len(d.profiles) - 2:
        raise DataError(f"n_val={n_val} too large for {len(d.profiles)} profiles (max {len(d.profiles) - 2})")
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(rest), size=n_val, replace=False).tolist()) if n_val else set()
    val = tuple(rest[i] for i in range(len(rest)) if i in picked)
    train = tuple(rest[i] for i in range(len(rest)) if i not in picked)
    split = Split(train, val, (test_id,))
    split.check(d)
    return split
