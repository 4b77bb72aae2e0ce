"""CSV loading, feature preprocessing and stratified splitting."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import (
    CellParseError,
    ConfigError,
    DataError,
    MissingColumnError,
    MissingFileError,
    RaggedRowError,
    TestSplitLocked,
)

logger = logging.getLogger(__name__)

BUNDLED = ("banana", "phoneme", "segment", "twonorm", "ringnorm")
BUNDLED_TARGET = "class"


@dataclass(frozen=True)
class RawTable:
    columns: list[str]
    cells: list[list[str]]
    target: str

    @property
    def n(self) -> int:
        return len(self.cells)

    @property
    def d(self) -> int:
        return len(self.columns) - 1


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    feature_kinds: list[str]
    feature_names: list[str]
    class_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class SplitMasks:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {
            "train": self.train.tolist(),
            "valid": self.valid.tolist(),
            "test": self.test.tolist(),
        }


def bundled_path(name: str) -> Path:
    """Path of one of the CSV files shipped with the package."""
    stem = Path(name).stem
    if stem not in BUNDLED:
        raise MissingFileError(f"no bundled dataset named {name!r}")
    return Path(str(resources.files("gais") / "datasets" / f"{stem}.csv"))


def resolve_dataset(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    if Path(path_or_name).stem in BUNDLED and p.parent == Path("."):
        return bundled_path(path_or_name)
    raise MissingFileError(f"dataset file not found: {path_or_name}")


def load_csv(path: str | Path, target: str = BUNDLED_TARGET) -> RawTable:
    """Read a comma separated file with a header row.

    Bare names of bundled datasets (``banana`` or ``banana.csv``) resolve
    to the copies shipped in ``gais/datasets``.
    """
    p = resolve_dataset(str(path))
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [c.strip() for c in next(reader)]
        except StopIteration:
            raise DataError(f"{p}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise RaggedRowError(f"ragged row at line {lineno}")
            cells = [c.strip() for c in row]
            if any(c == "" for c in cells):
                raise DataError(f"missing cell at line {lineno}")
            rows.append(cells)
    if target not in header:
        raise MissingColumnError(f"target column {target!r} not in {header}")
    if len(rows) < 2:
        raise DataError(f"{p}: need at least 2 rows, got {len(rows)}")
    return RawTable(columns=header, cells=rows, target=target)


def _first_appearance_codes(values: list[str]) -> tuple[np.ndarray, list[str]]:
    order: dict[str, int] = {}
    codes = np.empty(len(values), dtype=np.int64)
    for i, v in enumerate(values):
        codes[i] = order.setdefault(v, len(order))
    return codes, list(order)


def _minmax(col: np.ndarray) -> np.ndarray:
    lo, hi = col.min(), col.max()
    if hi == lo:
        return np.zeros_like(col)
    return (col - lo) / (hi - lo)


def _parse_float(s: str) -> float | None:
    try:
        v = float(s)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def preprocess(raw: RawTable) -> Dataset:
    """Label-encode categoricals, min-max scale everything to [0, 1].

    A column is numeric when every cell parses as a finite float. A column
    where most (but not all) cells parse is treated as a data error rather
    than silently becoming categorical.
    """
    t = raw.columns.index(raw.target)
    feature_idx = [j for j in range(len(raw.columns)) if j != t]
    n = raw.n
    X = np.empty((n, len(feature_idx)), dtype=np.float64)
    kinds = []
    for out_j, j in enumerate(feature_idx):
        col = [row[j] for row in raw.cells]
        parsed = [_parse_float(c) for c in col]
        bad = [i for i, v in enumerate(parsed) if v is None]
        if not bad:
            X[:, out_j] = _minmax(np.array(parsed, dtype=np.float64))
            kinds.append("numeric")
        elif len(bad) <= n / 2:
            # line number = data row index + 2 (header is line 1)
            raise CellParseError(
                f"column {raw.columns[j]!r}: unparseable value {col[bad[0]]!r} "
                f"at row {bad[0] + 2}"
            )
        else:
            codes, _ = _first_appearance_codes(col)
            X[:, out_j] = _minmax(codes.astype(np.float64))
            kinds.append("categorical")
    y, class_names = _first_appearance_codes([row[t] for row in raw.cells])
    return Dataset(
        X=X,
        y=y,
        n_classes=len(class_names),
        feature_kinds=kinds,
        feature_names=[raw.columns[j] for j in feature_idx],
        class_names=class_names,
    )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _largest_remainder(quotas: np.ndarray, total: int, priority: np.ndarray) -> np.ndarray:
    """Integer allocation summing to ``total`` with |alloc - quota| < 1.

    Extra units go to classes with lower ``priority`` first, then larger
    remainder, then lower class index.
    """
    base = np.floor(quotas + 1e-9).astype(np.int64)
    extra = total - int(base.sum())
    if extra > 0:
        rem = quotas - base
        order = np.lexsort((np.arange(len(quotas)), -np.round(rem, 12), priority))
        base[order[:extra]] += 1
    return base


def stratified_split(
    y: np.ndarray,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> SplitMasks:
    """Split indices into train/valid/test preserving class shares.

    Per class the shuffled indices are sliced as [valid | test | train];
    valid and test sizes come from a global largest-remainder allocation so
    split totals track the requested fractions. Classes with fewer than 3
    members go wholly to train.
    """
    y = np.asarray(y)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must sum to 1, got {fractions}")
    if min(fractions) < 0:
        raise ConfigError(f"negative split fraction in {fractions}")
    rng = np.random.default_rng(seed)
    classes = np.unique(y)
    warnings = []
    members = {}
    for c in classes:
        idx = np.flatnonzero(y == c)
        members[c] = idx[rng.permutation(len(idx))]
    eligible = [c for c in classes if len(members[c]) >= 3]
    for c in classes:
        if len(members[c]) < 3:
            msg = f"class {c} has {len(members[c])} instances; placed wholly in train"
            logger.warning(msg)
            warnings.append(msg)
    sizes = np.array([len(members[c]) for c in eligible], dtype=np.float64)
    n_eligible = int(sizes.sum())
    _, f_valid, f_test = fractions
    zeros = np.zeros(len(eligible))
    n_valid = _largest_remainder(sizes * f_valid, _round_half_up(f_valid * n_eligible), zeros)
    given = (n_valid - np.floor(sizes * f_valid + 1e-9)).astype(float)
    n_test = _largest_remainder(sizes * f_test, _round_half_up(f_test * n_eligible), given)

    train, valid, test = [], [], []
    for c in classes:
        if c not in eligible:
            train.append(members[c])
            continue
        k = eligible.index(c)
        idx = members[c]
        a, b = n_valid[k], n_valid[k] + n_test[k]
        valid.append(idx[:a])
        test.append(idx[a:b])
        train.append(idx[b:])

    def cat(parts):
        return np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)

    return SplitMasks(cat(train), cat(valid), cat(test), tuple(warnings))


class Splits:
    """Dataset view that withholds test labels until explicitly unlocked."""

    def __init__(self, ds: Dataset, masks: SplitMasks):
        self.ds = ds
        self.masks = masks
        self._test_unlocked = False

    def train(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.masks.train
        return self.ds.X[m], self.ds.y[m]

    def valid(self) -> tuple[np.ndarray, np.ndarray]:
        m = self.masks.valid
        return self.ds.X[m], self.ds.y[m]

    def unlock_test(self) -> None:
        self._test_unlocked = True

    def test(self) -> tuple[np.ndarray, np.ndarray]:
        if not self._test_unlocked:
            raise TestSplitLocked("test split is locked until the evaluate stage")
        m = self.masks.test
        return self.ds.X[m], self.ds.y[m]


def write_bundle(out_dir: str | Path, ds: Dataset, masks: SplitMasks) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds.X.astype("<f8").tofile(out / "X.f64le")
    ds.y.astype("<u4").tofile(out / "y.u32le")
    (out / "masks.json").write_text(json.dumps(masks.to_json()))
    meta = {
        "n": ds.n,
        "d": ds.d,
        "C": ds.n_classes,
        "columns": ds.feature_names,
        "feature_kinds": ds.feature_kinds,
        "class_names": ds.class_names,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2))
    return out


def read_bundle(in_dir: str | Path) -> tuple[Dataset, SplitMasks]:
    src = Path(in_dir)
    if not (src / "meta.json").exists():
        raise MissingFileError(f"no dataset bundle in {src}")
    meta = json.loads((src / "meta.json").read_text())
    X = np.fromfile(src / "X.f64le", dtype="<f8").reshape(meta["n"], meta["d"])
    y = np.fromfile(src / "y.u32le", dtype="<u4").astype(np.int64)
    m = json.loads((src / "masks.json").read_text())
    ds = Dataset(
        X=X,
        y=y,
        n_classes=meta["C"],
        feature_kinds=meta["feature_kinds"],
        feature_names=meta["columns"],
        class_names=meta.get("class_names", []),
    )
    masks = SplitMasks(*(np.asarray(m[k], dtype=np.int64) for k in ("train", "valid", "test")))
    return ds, masks
