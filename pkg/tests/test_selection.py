import numpy as np
import pytest

from apps.experiments.services.boltzmann import BmKind, BmModel, marginal_visible
from apps.experiments.services.cif import edge_confidence
from apps.experiments.services.config import CvConfig, HtestConfig, TrainConfig
from apps.experiments.services.errors import (
    ConfigError,
    DimensionMismatch,
    InsufficientSamples,
    NegativeInput,
    NonPositiveProbability,
)
from apps.experiments.services.harness import sample_dataset
from apps.experiments.services.selection import (
    EdgeSet,
    build_model,
    chi2_sf_1df,
    cif_htest,
    cif_rank,
    cv_select,
    default_grid,
    edge_tests,
    edges_for_ratio,
    heldout_loglik,
    model_complexity_ratio,
    pairwise_confidence,
)


def _counts_to_samples(counts):
    """Rows with each bitmask cell repeated counts[cell] times (variable i on bit i)."""
    cells = np.repeat(np.arange(len(counts)), counts)
    n = int(len(counts)).bit_length() - 1
    return ((cells[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def _planted_samples(rng, n=4, coupling=2.0, N=5000):
    model = BmModel.vbm(n, [(0, 1)]).with_parameters(np.r_[np.full(n, -1.0), coupling])
    return sample_dataset(marginal_visible(model), N, rng)


def test_chi2_tail():
    assert chi2_sf_1df(0.0) == pytest.approx(1.0)
    assert chi2_sf_1df(3.841) == pytest.approx(0.05, abs=1e-3)
    assert chi2_sf_1df(5.024) == pytest.approx(0.025, abs=1e-3)
    assert chi2_sf_1df(np.array([0.0, 3.841])).shape == (2,)
    with pytest.raises(NegativeInput):
        chi2_sf_1df(-1.0)


def test_edge_set_normalises_pairs():
    edges = EdgeSet(3, frozenset({(2, 0), (1, 2)}))
    assert edges.sorted() == [(0, 2), (1, 2)]
    assert (0, 2) in edges
    assert len(EdgeSet.complete(4)) == 6
    with pytest.raises(DimensionMismatch):
        EdgeSet(3, frozenset({(1, 1)}))
    with pytest.raises(DimensionMismatch):
        EdgeSet(3, frozenset({(0, 3)}))


def test_pairwise_confidence_matches_table_confidence(skewed_pair):
    samples = _counts_to_samples([40, 20, 30, 10])
    rho = pairwise_confidence(samples, smoothing=0.0)
    assert rho[0, 1] == pytest.approx(0.00789, abs=1e-5)
    assert rho[0, 1] == pytest.approx(edge_confidence(skewed_pair))
    assert rho[1, 0] == rho[0, 1]
    assert rho[0, 0] == 0.0


def test_pairwise_confidence_of_balanced_counts_is_zero():
    samples = _counts_to_samples([25, 25, 25, 25])
    assert pairwise_confidence(samples)[0, 1] == pytest.approx(0.0, abs=1e-15)


def test_pairwise_confidence_needs_smoothing_for_empty_cells():
    samples = _counts_to_samples([10, 0, 0, 10])
    with pytest.raises(NonPositiveProbability):
        pairwise_confidence(samples, smoothing=0.0)
    assert pairwise_confidence(samples, smoothing=0.5)[0, 1] > 0


def test_sample_validation():
    with pytest.raises(DimensionMismatch):
        pairwise_confidence(np.array([[0, 2], [1, 0]]))
    with pytest.raises(DimensionMismatch):
        pairwise_confidence(np.zeros((5, 1)))


def test_htest_detects_planted_edge(rng):
    samples = _planted_samples(rng)
    selected = cif_htest(samples, HtestConfig(alpha=0.05))
    assert (0, 1) in selected
    tests = {(t.i, t.j): t for t in edge_tests(samples)}
    assert tests[(0, 1)].p_value < 1e-6
    assert tests[(0, 1)].statistic == pytest.approx(len(samples) * tests[(0, 1)].rho)


def test_htest_uses_doubled_tail(rng):
    samples = _planted_samples(rng, N=500)
    for test in edge_tests(samples):
        assert test.p_value == pytest.approx(min(1.0, 2 * chi2_sf_1df(test.statistic)))
        assert test.selected == (test.p_value < 0.05)


def test_htest_detection_rate_over_replicates(rng):
    detected = sum((0, 1) in cif_htest(_planted_samples(rng), HtestConfig(alpha=0.05)) for _ in range(200))
    assert detected / 200 > 0.99


def test_htest_relabels_with_columns(rng):
    model = BmModel.vbm(5, [(0, 1), (2, 4)]).with_parameters(np.r_[np.full(5, -0.5), 1.5, -1.0])
    samples = sample_dataset(marginal_visible(model), 800, rng)
    permutation = np.array([3, 0, 4, 1, 2])
    # column k of the relabelled data is old column permutation[k]
    new_label = np.argsort(permutation)
    original = cif_htest(samples)
    relabelled = cif_htest(samples[:, permutation])
    expected = EdgeSet(5, frozenset((int(new_label[i]), int(new_label[j])) for i, j in original))
    assert relabelled == expected
    assert len(original) >= 2


def test_rank_ignores_sample_duplication(rng):
    samples = _planted_samples(rng, N=2000)
    doubled = np.vstack((samples, samples))
    once, twice = cif_rank(samples, smoothing=0.0), cif_rank(doubled, smoothing=0.0)
    assert [edge for edge, _ in once] == [edge for edge, _ in twice]
    assert [rho for _, rho in once] == pytest.approx([rho for _, rho in twice], rel=1e-12)
    assert cif_rank(doubled)[0][0] == once[0][0]


def test_rank_orders_by_confidence(rng):
    samples = _planted_samples(rng, N=1000)
    ranking = cif_rank(samples)
    assert ranking[0][0] == (0, 1)
    values = [rho for _, rho in ranking]
    assert values == sorted(values, reverse=True)
    restricted = cif_rank(samples, EdgeSet(4, frozenset({(2, 3)})))
    assert [edge for edge, _ in restricted] == [(2, 3)]
    assert cif_rank(samples, EdgeSet(4)) == []


def test_model_complexity_ratio():
    rho = {(0, 1): 3.0, (0, 2): 1.0, (1, 2): 0.0}
    assert model_complexity_ratio([(0, 1)], rho) == pytest.approx(0.75)
    assert model_complexity_ratio([], rho) == 0.0
    assert model_complexity_ratio(rho.keys(), rho) == pytest.approx(1.0)
    assert model_complexity_ratio([(0, 1)], {(0, 1): 0.0}) == 0.0
    matrix = np.array([[0.0, 3.0, 1.0], [3.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    assert model_complexity_ratio([(1, 0)], matrix) == pytest.approx(0.75)


def test_edges_for_ratio():
    ranking = [((0, 1), 3.0), ((0, 2), 1.0), ((1, 2), 0.0)]
    assert len(edges_for_ratio(ranking, 0.0, 3)) == 0
    assert edges_for_ratio(ranking, 0.5, 3).sorted() == [(0, 1)]
    assert edges_for_ratio(ranking, 0.9, 3).sorted() == [(0, 1), (0, 2)]


def test_default_grid():
    assert default_grid(45) == [0, 4, 9, 14, 18, 22, 27, 32, 36, 40, 45]
    assert default_grid(3, points=11) == [0, 1, 2, 3]


def test_build_model_kinds():
    assert build_model(3, [(0, 1)]).kind is BmKind.VBM
    hidden = build_model(3, [(0, 1)], n_hidden=2)
    assert hidden.kind is BmKind.VRBM
    assert hidden.enabled_edges() == [(0, 1)]


def test_heldout_loglik_of_uniform_model():
    samples = _counts_to_samples([1, 1, 1, 1])
    assert heldout_loglik(BmModel.zeros(2), samples) == pytest.approx(np.log(0.25))


def test_cv_select(rng):
    samples = _planted_samples(rng, n=3, N=90)
    cfg = CvConfig(k=3, grid=[0, 1, 3], seed=5)
    result = cv_select(samples, "cif", cfg, TrainConfig(max_epochs=200))
    assert result.budget in (0, 1, 3)
    assert len(result.edges) == result.budget
    assert len(result.cv_table) == 9
    assert set(result.scores) == {0, 1, 3}
    assert result.scores[result.budget] == max(result.scores.values())


def test_rand_cv_is_reproducible(rng):
    samples = _planted_samples(rng, n=3, N=60)
    cfg = CvConfig(k=3, grid=[1, 2], seed=9)
    train_cfg = TrainConfig(max_epochs=100)
    first = cv_select(samples, "rand", cfg, train_cfg)
    second = cv_select(samples, "rand", cfg, train_cfg)
    assert first.edges == second.edges
    assert first.cv_table == second.cv_table


def test_cv_select_inputs(rng):
    samples = _planted_samples(rng, n=3, N=4)
    with pytest.raises(InsufficientSamples):
        cv_select(samples, "cif", CvConfig(k=5))
    with pytest.raises(ConfigError):
        cv_select(samples, "greedy", CvConfig(k=2))
    with pytest.raises(ConfigError):
        cv_select(samples, "cif", CvConfig(k=2, grid=[4]))


@pytest.mark.slow
def test_htest_level_under_independence(rng):
    trials = selected = 0
    for _ in range(200):
        samples = (rng.random((10_000, 6)) < 0.5).astype(np.uint8)
        tests = edge_tests(samples, HtestConfig(alpha=0.05))
        trials += len(tests)
        selected += sum(t.selected for t in tests)
    expected = 0.025 * trials
    assert abs(selected - expected) <= 3 * np.sqrt(trials * 0.025 * 0.975)
