"""Loading, validating, labelling and splitting the phishing-websites corpus.

The corpus has 30 ternary attributes plus a ``Result`` column in {-1, 1}.
Both the UCI ARFF file and a CSV with a header row are accepted.
"""

from __future__ import annotations

import csv
import hashlib
import io
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Label
from .nn.rng import RngStream

REFERENCE_TOTAL = 11055
REFERENCE_PHISHING = 4898
REFERENCE_LEGITIMATE = 6157
LABEL_COLUMN = "Result"

T = (-1, 0, 1)
B = (-1, 1)

# (canonical name, allowed values, accepted spellings besides the canonical one)
_SCHEMA = [
    ("having_IP_Address", B, ()),
    ("URL_Length", T, ()),
    ("Shortening_Service", B, ("Shortining_Service",)),
    ("having_At_Symbol", B, ()),
    ("double_slash_redirecting", B, ()),
    ("Prefix_Suffix", B, ()),
    ("having_Sub_Domain", T, ()),
    ("SSLfinal_State", T, ()),
    ("Domain_registration_length", B, ("Domain_registeration_length",)),
    ("Favicon", B, ()),
    ("Port", B, ("port",)),
    ("HTTPS_token", B, ()),
    ("Request_URL", B, ()),
    ("URL_of_Anchor", T, ()),
    ("Links_in_tags", T, ()),
    ("SFH", T, ("SFH (server form handler)",)),
    ("Submitting_to_email", B, ()),
    ("Abnormal_URL", B, ()),
    ("Redirect", (0, 1), ("Redirect page",)),
    ("onMouseOver", B, ("on_mouseover", "onMouseOver (using to hide link)")),
    ("RightClick", B, ()),
    ("popUpWidnow", B, ("popUpWindow", "Using pop-up widnow")),
    ("Iframe", B, ()),
    ("age_of_domain", B, ()),
    ("DNSRecord", B, ()),
    ("web_traffic", T, ()),
    ("Page_Rank", B, ()),
    ("Google_Index", B, ()),
    ("Links_pointing_to_page", T, ()),
    ("Statistical_report", B, ()),
]


class DatasetError(ValueError):
    """Malformed input; ``line`` is the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Attribute:
    number: int
    name: str
    domain: tuple[int, ...]
    aliases: tuple[str, ...] = ()


@dataclass(frozen=True)
class FeatureSchema:
    attributes: tuple[Attribute, ...]

    def __len__(self):
        return len(self.attributes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def lookup(self, name: str) -> int | None:
        """Index of the attribute called ``name`` (any accepted spelling)."""
        key = _normalize(name)
        return self._index.get(key)

    @property
    def _index(self) -> dict[str, int]:
        idx = {}
        for i, a in enumerate(self.attributes):
            for n in (a.name,) + a.aliases:
                idx[_normalize(n)] = i
        return idx


def _normalize(name: str) -> str:
    return re.sub(r"[^a-z0-9]", "", name.strip().strip("'\"").lower())


SCHEMA = FeatureSchema(tuple(Attribute(i + 1, n, d, a) for i, (n, d, a) in enumerate(_SCHEMA)))


@dataclass(frozen=True)
class Sample:
    features: tuple[int, ...]
    raw_label: int
    label: Label | None
    source_index: int


@dataclass(frozen=True, eq=False)
class Dataset:
    """An immutable labelled corpus stored column-wise.

    ``features`` is ``[n, 30]`` int8 in schema order, ``raw_labels`` the
    ``Result`` values, ``labels`` the mapped 0/1 classes (1 = phishing) once
    :func:`map_labels` has run, ``source_index`` the 0-based data-row number.
    """

    features: np.ndarray
    raw_labels: np.ndarray
    source_index: np.ndarray
    labels: np.ndarray | None = None
    phishing_value: int | None = None

    def __post_init__(self):
        for arr in (self.features, self.raw_labels, self.source_index, self.labels):
            if arr is not None:
                arr.setflags(write=False)

    def __len__(self):
        return len(self.raw_labels)

    def __getitem__(self, i) -> Sample:
        label = None if self.labels is None else Label(int(self.labels[i]))
        return Sample(tuple(int(v) for v in self.features[i]), int(self.raw_labels[i]), label,
                      int(self.source_index[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def samples(self) -> list[Sample]:
        return list(self)

    def subset(self, indices) -> Dataset:
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices].copy(), self.raw_labels[indices].copy(),
                       self.source_index[indices].copy(),
                       None if self.labels is None else self.labels[indices].copy(),
                       self.phishing_value)

    def summary(self) -> dict:
        out = {"total": len(self), "raw_label_counts": {int(k): int(v) for k, v in
                                                         sorted(Counter(self.raw_labels.tolist()).items())}}
        if self.labels is not None:
            out["phishing"] = int(self.labels.sum())
            out["legitimate"] = int(len(self) - self.labels.sum())
        return out

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise DatasetError("labels have not been mapped; call map_labels first")
        return self.labels

    def to_tensor(self, dtype=np.float64) -> np.ndarray:
        """All samples encoded as ``[n, 30, 1]``."""
        return self.features.astype(dtype)[:, :, None]


def _empty() -> Dataset:
    return Dataset(np.zeros((0, len(SCHEMA)), np.int8), np.zeros(0, np.int8), np.zeros(0, np.int64))


def _parse_int(token: str, line: int, column: str) -> int:
    token = token.strip().strip("'\"")
    try:
        return int(token)
    except ValueError:
        raise DatasetError(f"non-integer value {token!r} in column {column}", line) from None


def _build(rows: list[list[int]], labels: list[int]) -> Dataset:
    if not rows:
        return _empty()
    features = np.asarray(rows, dtype=np.int8)
    return Dataset(features, np.asarray(labels, dtype=np.int8), np.arange(len(rows), dtype=np.int64))


def _column_order(names: list[tuple[str, int]]) -> tuple[list[int], int]:
    """Map file columns to schema positions; returns (positions, label column)."""
    positions, label_col = [], None
    seen = set()
    for col, (name, line) in enumerate(names):
        if _normalize(name) == _normalize(LABEL_COLUMN):
            label_col = col
            positions.append(-1)
            continue
        idx = SCHEMA.lookup(name)
        if idx is None:
            raise DatasetError(f"unknown attribute name {name!r}", line)
        if idx in seen:
            raise DatasetError(f"duplicate attribute {name!r}", line)
        seen.add(idx)
        positions.append(idx)
    missing = [SCHEMA.attributes[i].name for i in range(len(SCHEMA)) if i not in seen]
    if missing:
        raise DatasetError(f"missing attributes: {', '.join(missing)}")
    if label_col is None:
        raise DatasetError(f"missing class column {LABEL_COLUMN!r}")
    return positions, label_col


def _parse_row(tokens: list[str], positions: list[int], label_col: int, line: int):
    if len(tokens) != len(positions):
        raise DatasetError(f"expected {len(positions)} values, found {len(tokens)}", line)
    row = [0] * len(SCHEMA)
    label = None
    for col, tok in enumerate(tokens):
        if col == label_col:
            label = _parse_int(tok, line, LABEL_COLUMN)
            if label not in (-1, 1):
                raise DatasetError(f"class value {label} outside {{-1, 1}}", line)
        else:
            name = SCHEMA.attributes[positions[col]].name
            value = _parse_int(tok, line, name)
            if value not in (-1, 0, 1):
                raise DatasetError(f"value {value} of {name} outside {{-1, 0, 1}}", line)
            row[positions[col]] = value
    return row, label


_ATTR_RE = re.compile(r"^@attribute\s+('[^']*'|\"[^\"]*\"|\S+)\s+(.*)$", re.IGNORECASE)


def parse_arff(text: str) -> Dataset:
    names: list[tuple[str, int]] = []
    rows, labels = [], []
    positions = label_col = None
    in_data = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if not in_data:
            low = line.lower()
            if low.startswith("@relation"):
                continue
            if low.startswith("@attribute"):
                m = _ATTR_RE.match(line)
                if not m:
                    raise DatasetError(f"malformed attribute declaration {line!r}", lineno)
                names.append((m.group(1).strip("'\""), lineno))
                continue
            if low.startswith("@data"):
                positions, label_col = _column_order(names)
                in_data = True
                continue
            raise DatasetError(f"unexpected header line {line!r}", lineno)
        tokens = [t for t in line.split(",")]
        row, label = _parse_row(tokens, positions, label_col, lineno)
        rows.append(row)
        labels.append(label)
    if not in_data:
        raise DatasetError("no @data section found")
    return _build(rows, labels)


def parse_csv(text: str) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    rows, labels = [], []
    positions = label_col = None
    header_seen = False
    for lineno, tokens in enumerate(reader, start=1):
        if not tokens or all(not t.strip() for t in tokens):
            continue
        if not header_seen:
            positions, label_col = _column_order([(t.strip(), lineno) for t in tokens])
            header_seen = True
            continue
        row, label = _parse_row(tokens, positions, label_col, lineno)
        rows.append(row)
        labels.append(label)
    if not header_seen:
        raise DatasetError("missing CSV header row")
    return _build(rows, labels)


def parse_dataset(data: bytes | str, format: str = "arff") -> Dataset:
    """Parse ARFF or CSV content into a Dataset with unmapped labels."""
    text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    if format == "arff":
        return parse_arff(text)
    if format == "csv":
        return parse_csv(text)
    raise ValueError(f"unknown format {format!r}; expected 'arff' or 'csv'")


def guess_format(path) -> str:
    return "csv" if str(path).lower().endswith(".csv") else "arff"


def load_dataset(path, format: str | None = None) -> Dataset:
    path = Path(path)
    return parse_dataset(path.read_bytes(), format or guess_format(path))


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def serialize_arff(dataset: Dataset, relation: str = "phishing") -> str:
    lines = [f"@relation {relation}", ""]
    for a in SCHEMA.attributes:
        lines.append(f"@attribute {a.name} {{{','.join(str(v) for v in a.domain)}}}")
    lines.append(f"@attribute {LABEL_COLUMN} {{-1,1}}")
    lines += ["", "@data"]
    for feats, label in zip(dataset.features.tolist(), dataset.raw_labels.tolist()):
        lines.append(",".join(str(v) for v in feats + [label]))
    return "\n".join(lines) + "\n"


def serialize_csv(dataset: Dataset) -> str:
    lines = [",".join(SCHEMA.names + [LABEL_COLUMN])]
    for feats, label in zip(dataset.features.tolist(), dataset.raw_labels.tolist()):
        lines.append(",".join(str(v) for v in feats + [label]))
    return "\n".join(lines) + "\n"


# --- validation -----------------------------------------------------------

@dataclass
class ValidationReport:
    total: int
    histograms: dict[str, dict[int, int]]
    violations: list[tuple[int, int, str, int]] = field(default_factory=list)
    duplicate_rows: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def lines(self) -> list[str]:
        out = [f"samples: {self.total}", f"domain violations: {len(self.violations)}",
               f"duplicate rows (kept): {self.duplicate_rows}"]
        for a in SCHEMA.attributes:
            hist = self.histograms[a.name]
            cells = " ".join(f"{v:+d}:{hist.get(v, 0)}" for v in (-1, 0, 1))
            out.append(f"attr {a.number:2d} {a.name:<28s} {cells}")
        for row, number, name, value in self.violations[:50]:
            out.append(f"violation: row {row} attribute {number} ({name}) value {value} not in domain")
        return out

    def to_dict(self) -> dict:
        return {"total": self.total, "domain_violations": len(self.violations),
                "duplicate_rows": self.duplicate_rows,
                "histograms": {k: {str(v): c for v, c in h.items()} for k, h in self.histograms.items()},
                "violations": [{"row": r, "attribute": n, "name": nm, "value": v}
                               for r, n, nm, v in self.violations]}


def validate(dataset: Dataset, schema: FeatureSchema = SCHEMA) -> ValidationReport:
    """Histogram every attribute and flag out-of-domain values and duplicates."""
    histograms, violations = {}, []
    for j, a in enumerate(schema.attributes):
        col = dataset.features[:, j] if len(dataset) else np.zeros(0, np.int8)
        values, counts = np.unique(col, return_counts=True)
        histograms[a.name] = {int(v): int(c) for v, c in zip(values, counts)}
        bad = np.flatnonzero(~np.isin(col, a.domain))
        violations += [(int(dataset.source_index[r]), a.number, a.name, int(col[r])) for r in bad]
    violations.sort()
    duplicates = 0
    if len(dataset):
        full = np.column_stack([dataset.features, dataset.raw_labels])
        duplicates = len(dataset) - len(np.unique(full, axis=0))
    return ValidationReport(len(dataset), histograms, violations, duplicates)


# --- labels ---------------------------------------------------------------

def map_labels(dataset: Dataset, phishing_value: int | None = None) -> Dataset:
    """Attach 0/1 labels (1 = phishing).

    Without ``phishing_value`` the orientation is inferred from the class
    counts: the raw value occurring 4,898 times is phishing. Any other corpus
    must pass ``phishing_value`` explicitly.
    """
    raw = dataset.raw_labels
    counts = {v: int((raw == v).sum()) for v in (-1, 1)}
    if phishing_value is None:
        matches = [v for v in (-1, 1)
                   if counts[v] == REFERENCE_PHISHING and counts[-v] == REFERENCE_LEGITIMATE]
        if not matches:
            raise DatasetError(
                f"cannot infer label orientation: count(-1)={counts[-1]}, count(1)={counts[1]}; "
                f"expected {REFERENCE_PHISHING} phishing / {REFERENCE_LEGITIMATE} legitimate. "
                "Pass an explicit phishing label value.")
        phishing_value = matches[0]
    if phishing_value not in (-1, 1):
        raise DatasetError(f"phishing label value must be -1 or 1, got {phishing_value}")
    labels = (raw == phishing_value).astype(np.int8)
    return Dataset(dataset.features, dataset.raw_labels, dataset.source_index, labels, phishing_value)


# --- splitting ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.k}:{self.seed}:".encode())
        h.update(np.asarray(self.assignments, dtype=np.int64).tobytes())
        return h.hexdigest()[:16]

    def __eq__(self, other):
        return (isinstance(other, FoldPlan) and self.k == other.k
                and np.array_equal(self.assignments, other.assignments))


def stratified_kfold(dataset: Dataset, k: int = 10, rng: RngStream | None = None) -> FoldPlan:
    """Per-class shuffle followed by round-robin assignment to ``k`` folds.

    The round-robin counter carries over from one class to the next so the
    overall fold sizes also differ by at most one.
    """
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    labels = dataset.require_labels()
    rng = rng or RngStream(42)
    sizes = [int((labels == c).sum()) for c in (1, 0)]
    if min(sizes) == 0:
        raise DatasetError("both classes must be present for stratified folds")
    if k > min(sizes):
        raise DatasetError(f"k={k} exceeds the smaller class size {min(sizes)}")
    assignments = np.empty(len(dataset), dtype=np.int64)
    start = 0
    for c in (1, 0):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(len(members))]
        assignments[members] = (start + np.arange(len(members))) % k
        start = (start + len(members)) % k
    return FoldPlan(k, assignments, rng.seed)


def holdout_split(dataset: Dataset, fraction: float = 0.1, rng: RngStream | None = None):
    """Stratified ``(train, validation)`` split with ``round(fraction * n_c)``
    validation samples per class ``c``, kept within ``[1, n_c - 1]``."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie strictly between 0 and 1, got {fraction}")
    labels = dataset.require_labels()
    rng = rng or RngStream(42)
    train_idx, val_idx = [], []
    for c in (1, 0):
        members = np.flatnonzero(labels == c)
        if len(members) == 0:
            continue
        members = members[rng.permutation(len(members))]
        if len(members) < 2:
            raise DatasetError(f"class {Label(c).name.lower()} ({len(members)} samples) would leave "
                               f"an empty training or validation part")
        # round half up, nudged by at most one so neither part is empty
        n_val = min(max(int(np.floor(fraction * len(members) + 0.5)), 1), len(members) - 1)
        val_idx.append(members[:n_val])
        train_idx.append(members[n_val:])
    if len(val_idx) < 2:
        raise DatasetError("holdout split needs both classes present")
    return dataset.subset(np.sort(np.concatenate(train_idx))), dataset.subset(np.sort(np.concatenate(val_idx)))


def encode(sample: Sample | np.ndarray, dtype=np.float64) -> np.ndarray:
    """A sample's 30 feature values as a ``[30, 1]`` real tensor, unscaled."""
    feats = sample.features if isinstance(sample, Sample) else sample
    return np.asarray(feats, dtype=dtype).reshape(-1, 1)
