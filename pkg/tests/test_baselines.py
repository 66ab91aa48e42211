import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phishcnn.baselines import (BaselineSpec, ForestModel, TreeModel, entropy, logistic_loss_and_grad,
                                predict_baseline, predict_many, svm_objective, train_baseline, train_linear_svm,
                                train_logistic, train_naive_bayes, train_random_forest, train_tree, vote_tally)
from phishcnn.data import SCHEMA, map_labels
from phishcnn.model import Label
from synthetic import make_corpus


def corpus(n=200, seed=0):
    ds = map_labels(make_corpus(n, seed), phishing_value=-1)
    return ds.features.astype(np.int64), ds.labels.astype(np.int64)


# --- BaselineSpec ---------------------------------------------------------

@pytest.mark.parametrize("kwargs", [{"kind": "BayesNet"}, {"kind": "RandomForest", "n_trees": 0},
                                    {"kind": "DecisionTree", "min_leaf": 0}, {"kind": "NaiveBayes", "alpha": 0}])
def test_spec_ranges(kwargs):
    with pytest.raises(ValueError):
        BaselineSpec(**kwargs)


@pytest.mark.parametrize("kind", ["NaiveBayes", "Logistic", "DecisionTree", "RandomTree", "RandomForest",
                                  "LinearSVM"])
def test_empty_data_rejected(kind):
    with pytest.raises(ValueError):
        train_baseline(BaselineSpec(kind), np.zeros((0, 30)), np.zeros(0))


# --- naive Bayes ----------------------------------------------------------

def test_nb_two_samples_predict_their_own_class():
    x, y = np.array([[1], [-1]]), np.array([1, 0])
    model = train_naive_bayes(x, y)
    assert predict_many(model, x).tolist() == [1, 0]


def test_nb_hand_smoothing():
    # a1 over {-1,0,1}; phishing rows have a1 = 1, 1, -1; legitimate row has a1 = 0
    x = np.array([[1], [1], [-1], [0]])
    y = np.array([1, 1, 1, 0])
    model = train_naive_bayes(x, y)
    assert model.cond[0][1][1] == pytest.approx((2 + 1) / (3 + 3))
    assert model.cond[0][1][0] == pytest.approx((0 + 1) / (1 + 3))
    assert np.exp(model.log_prior).tolist() == pytest.approx([0.25, 0.75])


def test_nb_uniform_data_follows_prior():
    # every value appears equally often in each class, so the likelihoods cancel
    x = np.tile(np.array([[-1], [0], [1]]), (3, 3))
    y = np.array([1] * 6 + [0] * 3)
    model = train_naive_bayes(x, y)
    np.testing.assert_allclose(model.predict_proba(x), 6 / 9, atol=1e-12)
    assert set(predict_many(model, x).tolist()) == {1}


def test_nb_degenerate_prior_always_that_class():
    x, _ = corpus(40)
    model = train_naive_bayes(x, np.zeros(40, dtype=int))
    assert set(predict_many(model, x).tolist()) == {0}


def test_nb_tables_sum_to_one_over_schema_domain():
    x, y = corpus()
    model = train_naive_bayes(x, y)
    for attr, table in zip(SCHEMA.attributes, model.cond):
        assert tuple(table) == attr.domain
        np.testing.assert_allclose(sum(table.values()), [1.0, 1.0], atol=1e-9)


def test_nb_posterior_sums_to_one():
    x, y = corpus()
    post = train_naive_bayes(x, y).posterior(x)
    np.testing.assert_allclose(post.sum(axis=1), 1.0, atol=1e-9)


# --- logistic -------------------------------------------------------------

def test_logistic_separable_toy():
    x = np.array([[-1], [-1], [1], [1]])
    y = np.array([0, 0, 1, 1])
    assert (predict_many(train_logistic(x, y), x) == y).all()


def test_logistic_zero_epochs_scores_half():
    x, y = corpus(30)
    model = train_logistic(x, y, BaselineSpec("Logistic", epochs=0))
    np.testing.assert_array_equal(model.predict_proba(x), 0.5)


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.choice([-1.0, 0.0, 1.0], size=(5, 4))
    y = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    w, b = rng.normal(size=4), 0.3
    _, gw, gb = logistic_loss_and_grad(w, b, x, y)
    h = 1e-6
    num = []
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        num.append((logistic_loss_and_grad(w + e, b, x, y)[0] - logistic_loss_and_grad(w - e, b, x, y)[0]) / (2 * h))
    num_b = (logistic_loss_and_grad(w, b + h, x, y)[0] - logistic_loss_and_grad(w, b - h, x, y)[0]) / (2 * h)
    analytic = np.append(gw, gb)
    numeric = np.append(num, num_b)
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)) < 1e-6


def test_logistic_score_is_sigmoid_of_dot_product():
    x, y = corpus(50)
    model = train_logistic(x, y, BaselineSpec("Logistic", epochs=20))
    for row in x[:10]:
        z = sum(float(a) * float(b) for a, b in zip(row, model.weights)) + model.bias
        _, score = predict_baseline(model, row)
        assert abs(score - 1 / (1 + math.exp(-z))) < 1e-12


def test_logistic_rejects_bad_learning_rate():
    x, y = corpus(10)
    with pytest.raises(ValueError):
        train_logistic(x, y, BaselineSpec("Logistic", learning_rate=0))


# --- trees ----------------------------------------------------------------

def test_tree_single_determining_attribute():
    x, _ = corpus(60)
    y = (x[:, 7] == 1).astype(int)
    model = train_tree(x, y)
    assert model.root.attribute == 7
    assert all(child.is_leaf for child in model.root.children.values())
    assert (model.predict(x) == y).all()


def test_tree_pure_data_single_leaf():
    x, _ = corpus(30)
    model = train_tree(x, np.ones(30, dtype=int))
    assert model.root.is_leaf and list(model.nodes()) == [model.root]


def test_tree_root_is_hand_computed_best_gain():
    # columns: a0 splits 3/1 vs 1/3, a1 splits 4/0 vs 0/4 except one row, a2 is noise
    x = np.array([[1, 1, 1], [1, 1, -1], [1, 1, 1], [-1, 1, -1],
                  [-1, -1, 1], [-1, -1, -1], [1, -1, 1], [-1, -1, -1]])
    y = np.array([1, 1, 1, 0, 0, 0, 0, 0])
    h = lambda p, n: entropy([p, n])  # noqa: E731
    parent = h(3, 5)
    gains = [parent - 4 / 8 * h(3, 1) - 4 / 8 * h(0, 4),
             parent - 4 / 8 * h(3, 1) - 4 / 8 * h(0, 4),
             parent - 4 / 8 * h(2, 2) - 4 / 8 * h(1, 3)]
    # hand values with log2: H(3,5)=0.9544, H(3,1)=0.8113, H(2,2)=1, H(1,3)=0.8113
    assert parent == pytest.approx(0.954434, abs=1e-6)
    assert gains[0] == pytest.approx(0.548795, abs=1e-6)
    model = train_tree(x, y)
    assert model.root.attribute == int(np.argmax(gains))


def test_tree_nodes_reference_valid_attributes_and_values():
    x, y = corpus(300, 2)
    for spec in (BaselineSpec("DecisionTree"), BaselineSpec("RandomTree", seed=5)):
        model = train_tree(x, y, spec)
        for node in model.nodes():
            if not node.is_leaf:
                assert 0 <= node.attribute < 30
                assert set(node.children) <= set(SCHEMA.attributes[node.attribute].domain)


def test_depth_limit_never_beats_full_tree():
    x, y = corpus(300, 3)
    full = (train_tree(x, y).predict(x) == y).mean()
    for depth in (0, 1, 2, 4):
        limited = train_tree(x, y, BaselineSpec("DecisionTree", max_depth=depth))
        assert limited.depth() <= depth
        assert (limited.predict(x) == y).mean() <= full


def test_tree_tie_leaf_is_phishing():
    x = np.array([[1], [1]])
    model = train_tree(x, np.array([0, 1]))
    assert model.predict(x).tolist() == [1, 1]


def test_unseen_value_routes_to_largest_child():
    x = np.array([[1]] * 5 + [[-1]] * 2)
    y = np.array([1] * 5 + [0] * 2)
    model = train_tree(x, y)
    assert model.predict(np.array([[0]])).tolist() == [1]


def test_random_tree_deterministic_per_seed():
    x, y = corpus(200, 4)
    a = train_tree(x, y, BaselineSpec("RandomTree", seed=1))
    b = train_tree(x, y, BaselineSpec("RandomTree", seed=1))
    assert a == b


# --- forest ---------------------------------------------------------------

def test_single_tree_forest_equals_random_tree():
    x, y = corpus(200, 5)
    forest = train_random_forest(x, y, BaselineSpec("RandomForest", n_trees=1, bootstrap=False, seed=9))
    tree = train_tree(x, y, BaselineSpec("RandomTree", seed=9))
    np.testing.assert_array_equal(predict_many(forest, x), tree.predict(x))


def test_vote_counts_match_independent_tally():
    x, y = corpus(100, 6)
    forest = train_random_forest(x, y, BaselineSpec("RandomForest", n_trees=15))
    sample = x[:10]
    tallies = vote_tally(forest, sample)
    np.testing.assert_array_equal(forest.votes(sample), [t[1] for t in tallies])
    assert all(t[0] + t[1] == 15 for t in tallies)


class Fixed:
    """A stand-in tree that always predicts one label."""

    def __init__(self, label):
        self.label = label

    def predict(self, x):
        return np.full(len(x), self.label, dtype=np.int8)


def test_sixty_of_hundred_votes():
    forest = ForestModel([Fixed(1)] * 60 + [Fixed(0)] * 40)
    label, score = predict_baseline(forest, np.zeros(30))
    assert label is Label.PHISHING and score == pytest.approx(0.6)


def test_tied_vote_is_phishing_and_unanimous_vote_wins():
    assert predict_baseline(ForestModel([Fixed(1), Fixed(0)]), np.zeros(30))[0] is Label.PHISHING
    assert predict_baseline(ForestModel([Fixed(0)] * 3), np.zeros(30))[0] is Label.LEGITIMATE


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 1000))
def test_forest_order_invariance(seed):
    x, y = corpus(80, 7)
    forest = train_random_forest(x, y, BaselineSpec("RandomForest", n_trees=7))
    order = np.random.default_rng(seed).permutation(7)
    shuffled = ForestModel([forest.trees[i] for i in order])
    np.testing.assert_array_equal(predict_many(forest, x), predict_many(shuffled, x))


# --- SVM ------------------------------------------------------------------

def test_svm_separable_toy():
    x = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1], [1, 0], [-1, 0]])
    y = (x[:, 0] > 0).astype(int)
    model = train_linear_svm(x, y, BaselineSpec("LinearSVM", epochs=50, lam=1e-2))
    assert (predict_many(model, x) == y).all()


def test_svm_objective_decreases():
    x, y = corpus(20, 8)
    spec = BaselineSpec("LinearSVM", epochs=20)
    model = train_linear_svm(x, y, spec)
    y_pm = np.where(y == 1, 1.0, -1.0)
    assert svm_objective(model.weights, x, y_pm, spec.lam) < svm_objective(np.zeros(31), x, y_pm, spec.lam)


def test_svm_zero_margin_is_phishing():
    x, y = corpus(10)
    model = train_linear_svm(x, y, BaselineSpec("LinearSVM", epochs=0))
    assert set(predict_many(model, x).tolist()) == {1}


def test_svm_rejects_bad_lambda():
    x, y = corpus(10)
    with pytest.raises(ValueError):
        train_linear_svm(x, y, BaselineSpec("LinearSVM", lam=0))


@pytest.mark.parametrize("kind", ["NaiveBayes", "Logistic", "DecisionTree", "RandomTree", "RandomForest",
                                  "LinearSVM"])
def test_every_baseline_is_deterministic(kind):
    x, y = corpus(120, 9)
    spec = BaselineSpec(kind, n_trees=5, epochs=30)
    a, b = train_baseline(spec, x, y), train_baseline(spec, x, y)
    np.testing.assert_array_equal(a.predict_proba(x), b.predict_proba(x))


def test_tree_model_kind():
    x, y = corpus(50)
    assert isinstance(train_tree(x, y), TreeModel)
