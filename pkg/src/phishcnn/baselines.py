"""Classical comparators written from scratch: naive Bayes, logistic
regression, ID3-style trees, random forests and a Pegasos linear SVM.

All models take features as an ``[n, 30]`` integer array with values in
{-1, 0, 1} and labels in {0, 1} (1 = phishing). Ties are always resolved
towards Phishing.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .data import SCHEMA, Dataset
from .model import Label
from .nn.functional import sigmoid
from .nn.rng import RngStream

KINDS = ("NaiveBayes", "Logistic", "DecisionTree", "RandomTree", "RandomForest", "LinearSVM")
VALUES = (-1, 0, 1)


@dataclass(frozen=True)
class BaselineSpec:
    kind: str
    seed: int = 42
    alpha: float = 1.0                 # naive Bayes smoothing
    learning_rate: float = 0.5         # logistic
    epochs: int = 500                  # logistic / SVM passes
    max_depth: int | None = None       # trees
    min_leaf: int = 1
    n_features: int | None = None      # random subset size; None = ceil(sqrt(30)) for random trees
    n_trees: int = 100
    bootstrap: bool = True
    lam: float = 1e-4                  # SVM regularization

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}; expected one of {KINDS}")
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


DEFAULT_SPECS = {
    "NaiveBayes": BaselineSpec("NaiveBayes"),
    "Logistic": BaselineSpec("Logistic"),
    "DecisionTree": BaselineSpec("DecisionTree"),
    "RandomTree": BaselineSpec("RandomTree"),
    "RandomForest": BaselineSpec("RandomForest"),
    "LinearSVM": BaselineSpec("LinearSVM", epochs=20),
}


def _xy(data, y=None):
    if isinstance(data, Dataset):
        return data.features.astype(np.int64), data.require_labels().astype(np.int64)
    return np.asarray(data, dtype=np.int64), np.asarray(y, dtype=np.int64)


def _require(x, y):
    if len(x) == 0:
        raise ValueError("cannot train on empty data")
    if len(x) != len(y):
        raise ValueError("features and labels differ in length")


def _domains(n_attr: int) -> list[tuple[int, ...]]:
    if n_attr == len(SCHEMA):
        return [a.domain for a in SCHEMA.attributes]
    return [VALUES] * n_attr


# --- naive Bayes ----------------------------------------------------------

@dataclass
class NaiveBayesModel:
    kind = "NaiveBayes"
    log_prior: np.ndarray           # [2]
    cond: list[dict[int, np.ndarray]]  # per attribute: value -> [P(v|legit), P(v|phish)]

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        logp = np.tile(self.log_prior, (len(x), 1))
        for j, table in enumerate(self.cond):
            for v, probs in table.items():
                rows = x[:, j] == v
                logp[rows] += np.log(probs)
        logp -= logp.max(axis=1, keepdims=True)
        p = np.exp(logp)
        p /= p.sum(axis=1, keepdims=True)
        return p[:, 1]

    def posterior(self, x) -> np.ndarray:
        p1 = self.predict_proba(x)
        return np.column_stack([1 - p1, p1])


def train_naive_bayes(data, y=None, spec: BaselineSpec = DEFAULT_SPECS["NaiveBayes"]) -> NaiveBayesModel:
    """Categorical naive Bayes with Laplace smoothing over each attribute's domain."""
    x, y = _xy(data, y)
    _require(x, y)
    counts = np.array([(y == 0).sum(), (y == 1).sum()], dtype=float)
    with np.errstate(divide="ignore"):
        log_prior = np.log(counts / counts.sum())
    cond = []
    for j, domain in enumerate(_domains(x.shape[1])):
        table = {}
        for v in domain:
            c = np.array([np.sum((x[:, j] == v) & (y == k)) for k in (0, 1)], dtype=float)
            table[v] = (c + spec.alpha) / (counts + spec.alpha * len(domain))
        cond.append(table)
    return NaiveBayesModel(log_prior, cond)


# --- logistic regression --------------------------------------------------

@dataclass
class LogisticModel:
    kind = "Logistic"
    weights: np.ndarray
    bias: float

    def decision(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights + self.bias

    def predict_proba(self, x) -> np.ndarray:
        return sigmoid(self.decision(x))


def logistic_loss_and_grad(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy of ``sigmoid(x @ w + b)`` and its gradient."""
    z = x @ w + b
    # log(1 + e^z) - y z, written stably
    loss = float(np.mean(np.logaddexp(0, z) - y * z))
    r = (sigmoid(z) - y) / len(y)
    return loss, x.T @ r, float(r.sum())


def train_logistic(data, y=None, spec: BaselineSpec = DEFAULT_SPECS["Logistic"]) -> LogisticModel:
    """Full-batch gradient descent on BCE from a zero initialisation."""
    if spec.learning_rate <= 0:
        raise ValueError(f"learning rate must be positive, got {spec.learning_rate}")
    x, y = _xy(data, y)
    _require(x, y)
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(spec.epochs):
        _, gw, gb = logistic_loss_and_grad(w, b, x, y)
        w -= spec.learning_rate * gw
        b -= spec.learning_rate * gb
    return LogisticModel(w, b)


# --- trees ----------------------------------------------------------------

@dataclass
class Node:
    counts: tuple[int, int]                  # (legitimate, phishing) training samples
    attribute: int | None = None
    children: dict[int, Node] = field(default_factory=dict)

    @property
    def is_leaf(self) -> bool:
        return self.attribute is None

    @property
    def label(self) -> int:
        return int(self.counts[1] >= self.counts[0])

    @property
    def score(self) -> float:
        n = self.counts[0] + self.counts[1]
        return self.counts[1] / n if n else 0.5


def entropy(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def information_gain(column: np.ndarray, y: np.ndarray) -> float:
    """Entropy of ``y`` minus the weighted entropy after a multiway split on ``column``."""
    n = len(y)
    gain = entropy(np.bincount(y, minlength=2))
    for v in np.unique(column):
        mask = column == v
        gain -= mask.sum() / n * entropy(np.bincount(y[mask], minlength=2))
    return gain


def _gains(x: np.ndarray, y: np.ndarray, attrs) -> np.ndarray:
    """Vectorised information gain for several attributes at once."""
    n, k = len(y), len(attrs)
    # one (attribute, value, class) cell per code
    codes = (x[:, attrs] + 1) * 2 + y[:, None] + 6 * np.arange(k)
    table = np.bincount(codes.ravel(), minlength=6 * k).reshape(k, 3, 2)
    sizes = table.sum(axis=2)
    p = table / np.where(sizes == 0, 1, sizes)[..., None]
    safe = np.where(p > 0, p, 1)
    h = -(p * np.log2(safe)).sum(axis=2)
    parent = entropy(np.bincount(y, minlength=2))
    return parent - (sizes / n * h).sum(axis=1)


@dataclass
class TreeModel:
    kind: str
    root: Node

    def leaves(self, x) -> list[Node]:
        """The leaf reached by every row of ``x``."""
        x = np.asarray(x)
        out = [None] * len(x)
        stack = [(self.root, np.arange(len(x)))]
        while stack:
            node, rows = stack.pop()
            if node.is_leaf:
                for r in rows:
                    out[r] = node
                continue
            col = x[rows, node.attribute]
            routed = np.zeros(len(rows), dtype=bool)
            for v, child in node.children.items():
                hit = col == v
                routed |= hit
                stack.append((child, rows[hit]))
            if not routed.all():
                # unseen value: follow the branch that held the most training samples
                fallback = max(node.children.values(), key=lambda c: (sum(c.counts), c.counts[1]))
                stack.append((fallback, rows[~routed]))
        return out

    def predict_proba(self, x) -> np.ndarray:
        return np.array([leaf.score for leaf in self.leaves(x)])

    def predict(self, x) -> np.ndarray:
        return np.array([leaf.label for leaf in self.leaves(x)], dtype=np.int8)

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(node.children.values())

    def depth(self) -> int:
        def d(node):
            return 0 if node.is_leaf else 1 + max(d(c) for c in node.children.values())
        return d(self.root)


def _grow(x, y, depth, spec: BaselineSpec, n_features: int | None, rng: RngStream | None) -> Node:
    counts = (int((y == 0).sum()), int((y == 1).sum()))
    node = Node(counts)
    if counts[0] == 0 or counts[1] == 0:
        return node
    if spec.max_depth is not None and depth >= spec.max_depth:
        return node
    if len(y) < 2 * spec.min_leaf:
        return node
    n_attr = x.shape[1]
    if n_features is None:
        order = np.arange(n_attr)
        gains = _gains(x, y, order)
        best = int(np.argmax(gains))
        best_attr, best_gain = int(order[best]), gains[best]
    else:
        # examine at least n_features random attributes, and keep going
        # through the rest until one with positive gain turns up
        order = rng.permutation(n_attr)
        gains = _gains(x, y, order)
        best_attr, best_gain = None, 0.0
        for i, attr in enumerate(order):
            if i >= n_features and best_gain > 1e-12:
                break
            if best_attr is None or gains[i] > best_gain:
                best_attr, best_gain = int(attr), gains[i]
    if best_gain <= 1e-12:
        return node
    column = x[:, best_attr]
    values = np.unique(column)
    parts = [column == v for v in values]
    if min(p.sum() for p in parts) < spec.min_leaf:
        return node
    node.attribute = best_attr
    for v, mask in zip(values, parts):
        node.children[int(v)] = _grow(x[mask], y[mask], depth + 1, spec, n_features, rng)
    return node


def _n_features(spec: BaselineSpec, n_attr: int) -> int:
    return spec.n_features or math.ceil(math.sqrt(n_attr))


def train_tree(data, y=None, spec: BaselineSpec = DEFAULT_SPECS["DecisionTree"]) -> TreeModel:
    """Top-down induction on information gain with multiway splits.

    ``DecisionTree`` scores every attribute at each node; ``RandomTree``
    scores a random subset of ceil(sqrt(30)) = 6 attributes.
    """
    x, y = _xy(data, y)
    _require(x, y)
    if spec.kind == "RandomTree":
        root = _grow(x, y, 0, spec, _n_features(spec, x.shape[1]), RngStream(spec.seed).derive(0))
    else:
        root = _grow(x, y, 0, spec, None, None)
    return TreeModel(spec.kind if spec.kind in ("DecisionTree", "RandomTree") else "DecisionTree", root)


@dataclass
class ForestModel:
    kind = "RandomForest"
    trees: list[TreeModel]

    def votes(self, x) -> np.ndarray:
        """Number of trees voting Phishing for each row."""
        x = np.asarray(x)
        return np.sum([t.predict(x) for t in self.trees], axis=0)

    def predict_proba(self, x) -> np.ndarray:
        return self.votes(x) / len(self.trees)


def train_random_forest(data, y=None, spec: BaselineSpec = DEFAULT_SPECS["RandomForest"]) -> ForestModel:
    """Random trees on bootstrap resamples; tree ``i`` uses sub-stream ``(seed, i)``,
    so tree 0 without bootstrapping equals a RandomTree with the same seed."""
    x, y = _xy(data, y)
    _require(x, y)
    master = RngStream(spec.seed)
    trees = []
    nf = _n_features(spec, x.shape[1])
    for i in range(spec.n_trees):
        rng = master.derive(i)
        if spec.bootstrap:
            idx = rng.integers(0, len(y), len(y))
            xb, yb = x[idx], y[idx]
        else:
            xb, yb = x, y
        trees.append(TreeModel("RandomTree", _grow(xb, yb, 0, spec, nf, rng)))
    return ForestModel(trees)


# --- linear SVM -----------------------------------------------------------

@dataclass
class SVMModel:
    kind = "LinearSVM"
    weights: np.ndarray   # last entry multiplies the constant feature 1

    def decision(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x @ self.weights[:-1] + self.weights[-1]

    def predict_proba(self, x) -> np.ndarray:
        return self.decision(x)


def svm_objective(w: np.ndarray, x: np.ndarray, y_pm: np.ndarray, lam: float) -> float:
    """Mean hinge loss plus ``lam / 2 * ||w||^2`` (w includes the bias term)."""
    xa = np.column_stack([x, np.ones(len(x))])
    return float(np.mean(np.maximum(0, 1 - y_pm * (xa @ w))) + lam / 2 * w @ w)


def train_linear_svm(data, y=None, spec: BaselineSpec = DEFAULT_SPECS["LinearSVM"]) -> SVMModel:
    """Pegasos: stochastic sub-gradient descent on the L2-regularised hinge loss.

    Returns the average of all iterates, which is far steadier than the last
    one when lambda is small.
    """
    if spec.lam <= 0:
        raise ValueError(f"lambda must be positive, got {spec.lam}")
    x, y = _xy(data, y)
    _require(x, y)
    xa = np.column_stack([x.astype(np.float64), np.ones(len(x))])
    y_pm = np.where(y == 1, 1.0, -1.0)
    rng = RngStream(spec.seed)
    w = np.zeros(xa.shape[1])
    total = np.zeros_like(w)
    radius = 1 / math.sqrt(spec.lam)
    t = 0
    for _ in range(spec.epochs):
        for i in rng.permutation(len(y)):
            t += 1
            eta = 1.0 / (spec.lam * t)
            margin = y_pm[i] * (xa[i] @ w)
            w *= 1 - eta * spec.lam
            if margin < 1:
                w += eta * y_pm[i] * xa[i]
            norm = math.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            total += w
    return SVMModel(total / t if t else w)


# --- dispatch -------------------------------------------------------------

def train_baseline(spec: BaselineSpec, data, y=None):
    if spec.kind == "NaiveBayes":
        return train_naive_bayes(data, y, spec)
    if spec.kind == "Logistic":
        return train_logistic(data, y, spec)
    if spec.kind in ("DecisionTree", "RandomTree"):
        return train_tree(data, y, spec)
    if spec.kind == "RandomForest":
        return train_random_forest(data, y, spec)
    return train_linear_svm(data, y, spec)


def scores(model, x) -> np.ndarray:
    return model.predict_proba(x)


def threshold(model) -> float:
    return 0.0 if model.kind == "LinearSVM" else 0.5


def predict_many(model, x) -> np.ndarray:
    """0/1 predictions; a score exactly on the threshold counts as Phishing."""
    if isinstance(model, TreeModel):
        return model.predict(x)
    return (scores(model, x) >= threshold(model)).astype(np.int8)


def predict_baseline(model, sample) -> tuple[Label, float]:
    feats = getattr(sample, "features", sample)
    row = np.asarray(feats, dtype=np.int64).reshape(1, -1)
    return Label(int(predict_many(model, row)[0])), float(scores(model, row)[0])


def vote_tally(model: ForestModel, x) -> list[Counter]:
    """Per-row Counter of tree votes, built one tree at a time."""
    tallies = [Counter() for _ in range(len(x))]
    for tree in model.trees:
        for i, label in enumerate(tree.predict(x)):
            tallies[i][int(label)] += 1
    return tallies
