import numpy as np
import pytest

from src.opad.annotator import Annotator, CostLedger
from src.opad.data_model import (AnnotationState, Box, Dataset, EntityAnnotation, Prediction, Regime, Sample,
                                 Span, TaskKind, commit_selection, draw_state_set, init_deployment_pools,
                                 init_policy_training_pools, load_dataset, sample_candidates, save_dataset)
from src.opad.errors import BudgetExceeded, ConfigurationError, EndOfEpisode, IntegrityError
from tests.helpers import tiny_detection_dataset


def bare_dataset(n_train, n_val=2, n_test=2):
    """Samples without units or entities, only ids and splits"""
    total = n_train + n_val + n_test
    samples = [Sample(id=i, entities=(), features=np.zeros((0, 2))) for i in range(total)]
    splits = {'train': range(n_train), 'val': range(n_train, n_train + n_val),
              'test': range(n_train + n_val, total)}
    return Dataset(TaskKind.DETECTION, 2, 2, samples, splits, seed=0)


def test_geometry_validation():
    with pytest.raises(ValueError):
        Box(0.5, 0.1, 0.4, 0.2)
    with pytest.raises(ValueError):
        Box(0.1, 0.3, 0.2, 0.3)
    with pytest.raises(ValueError):
        Span(4, 4)
    assert Box(0.0, 0.0, 0.5, 0.5).area == pytest.approx(0.25)


def test_prediction_scores_must_sum_to_one():
    with pytest.raises(ValueError):
        Prediction.from_scores(Span(0, 1), np.array([0.5, 0.4]))
    pred = Prediction.from_scores(Span(0, 1), np.array([0.2, 0.7, 0.1]))
    assert pred.confidence == pytest.approx(0.7)
    assert pred.predicted_class == 1
    with pytest.raises(ValueError):
        pred.class_scores[0] = 1.0


def test_dataset_rejects_duplicate_ids_and_overlapping_splits():
    sample = Sample(id=0, entities=(), features=np.zeros((0, 2)))
    with pytest.raises(IntegrityError):
        Dataset(TaskKind.DETECTION, 2, 2, [sample, sample], {}, seed=0)
    with pytest.raises(IntegrityError):
        Dataset(TaskKind.DETECTION, 2, 2, [sample], {'train': [0], 'val': [0]}, seed=0)
    bad = Sample(id=1, entities=(EntityAnnotation(5, Span(0, 1)),), features=np.zeros((0, 2)))
    with pytest.raises(IntegrityError):
        Dataset(TaskKind.DETECTION, 2, 2, [bad], {}, seed=0)


def test_policy_training_pool_sizes():
    dataset = bare_dataset(5000)
    pools = init_policy_training_pools(dataset, n_init=512, n_state=256, met_fraction=0.10, rng_seed=0)
    assert len(pools.x_met) == 500
    assert len(pools.x_state) == 256
    assert len(pools.x_init) == 512
    assert len(pools.x_u) == 3732
    assert pools.x_l == pools.x_init
    parts = [pools.x_u, pools.x_l, pools.x_state, pools.x_met]
    assert sum(len(p) for p in parts) == 5000
    assert set().union(*parts) == set(dataset.split("train"))


def test_minimal_policy_training_partition():
    pools = init_policy_training_pools(bare_dataset(4), n_init=1, n_state=1, met_fraction=0.25, rng_seed=1)
    assert [len(pools.x_met), len(pools.x_state), len(pools.x_init), len(pools.x_u)] == [1, 1, 1, 1]


def test_pool_initialisation_is_deterministic():
    dataset = bare_dataset(300)
    a = init_policy_training_pools(dataset, 20, 30, 0.1, rng_seed=7)
    b = init_policy_training_pools(dataset, 20, 30, 0.1, rng_seed=7)
    assert (a.x_met, a.x_state, a.x_init, a.x_u) == (b.x_met, b.x_state, b.x_init, b.x_u)
    c = init_deployment_pools(bare_dataset(10, n_val=50), 5, rng_seed=7)
    d = init_deployment_pools(bare_dataset(10, n_val=50), 5, rng_seed=7)
    assert c.x_init == d.x_init


def test_episode_seed_redraws_only_the_seed_set():
    dataset = bare_dataset(300)
    a = init_policy_training_pools(dataset, 20, 30, 0.1, rng_seed=7, episode_seed=1)
    b = init_policy_training_pools(dataset, 20, 30, 0.1, rng_seed=7, episode_seed=2)
    assert a.x_met == b.x_met and a.x_state == b.x_state
    assert a.x_init != b.x_init
    assert draw_state_set(dataset, 30, 0.1, 7) == a.x_state


def test_policy_training_needs_enough_samples():
    with pytest.raises(ConfigurationError):
        init_policy_training_pools(bare_dataset(10), n_init=5, n_state=5, met_fraction=0.1, rng_seed=0)


def test_deployment_pool_sizes():
    pools = init_deployment_pools(bare_dataset(10, n_val=2510), n_init=512, rng_seed=0)
    assert len(pools.x_u) == 1998
    assert pools.x_u | pools.x_l == set(pools.x_val)
    pools = init_deployment_pools(bare_dataset(10, n_val=2), n_init=1, rng_seed=0)
    assert len(pools.x_u) == 1


def test_deployment_rejects_large_seed_set():
    with pytest.raises(ConfigurationError):
        init_deployment_pools(bare_dataset(10, n_val=5), n_init=5, rng_seed=0)


def test_regime_guards():
    deployment = init_deployment_pools(bare_dataset(10, n_val=6), n_init=2, rng_seed=0)
    assert deployment.regime == Regime.DEPLOYMENT
    with pytest.raises(IntegrityError):
        _ = deployment.x_met
    assert deployment.evaluation_ids() == sorted(deployment.x_test)

    training = init_policy_training_pools(bare_dataset(40), 4, 4, 0.1, rng_seed=0)
    with pytest.raises(IntegrityError):
        _ = training.x_test
    assert training.evaluation_ids() == sorted(training.x_met)


def test_state_set_must_not_overlap_val():
    dataset = bare_dataset(10, n_val=6)
    with pytest.raises(IntegrityError):
        init_deployment_pools(dataset, 2, rng_seed=0, x_state=[10])


def test_state_set_labels_are_masked():
    pools = init_policy_training_pools(bare_dataset(100), 10, 10, 0.1, rng_seed=0)
    for i in pools.x_state:
        assert pools.annotation_state(i) == AnnotationState.UNLABELLED
        assert i not in pools.labels


def test_sample_candidates():
    pools = init_policy_training_pools(bare_dataset(5000), 512, 256, 0.10, rng_seed=0)
    before = set(pools.x_u)
    candidates = sample_candidates(pools, 4, 64, np.random.default_rng(0))
    assert len(candidates) == 256
    assert len(set(candidates)) == 256
    assert set(candidates) <= pools.x_u
    assert pools.x_u == before


def test_sample_candidates_exact_and_exhausted():
    pools = init_deployment_pools(bare_dataset(4, n_val=10), n_init=2, rng_seed=0)
    assert sorted(sample_candidates(pools, 2, 4, np.random.default_rng(0))) == sorted(pools.x_u)
    with pytest.raises(EndOfEpisode):
        sample_candidates(pools, 3, 3, np.random.default_rng(0))


def test_commit_selection_moves_ids():
    pools = init_policy_training_pools(bare_dataset(5000), 512, 256, 0.10, rng_seed=0)
    candidates = sample_candidates(pools, 4, 64, np.random.default_rng(1))
    pools.x_cand = set(candidates)
    chosen = candidates[:64]
    commit_selection(pools, chosen, {i: () for i in chosen})
    assert len(pools.x_l) == 512 + 64
    assert len(pools.x_u) == 3732 - 64
    assert not pools.x_l & pools.x_u
    assert all(pools.annotation_state(i) == AnnotationState.STRONG_LABELLED for i in chosen)
    assert not pools.x_cand


def test_commit_nothing_leaves_pools_unchanged():
    pools = init_policy_training_pools(bare_dataset(100), 10, 10, 0.1, rng_seed=0)
    x_u, x_l = set(pools.x_u), set(pools.x_l)
    commit_selection(pools, [], {})
    assert pools.x_u == x_u and pools.x_l == x_l


def test_commit_rejects_bad_selections():
    pools = init_policy_training_pools(bare_dataset(100), 10, 10, 0.1, rng_seed=0)
    free = sorted(pools.x_u)
    with pytest.raises(IntegrityError):
        commit_selection(pools, [free[0], free[0]], {free[0]: ()})
    with pytest.raises(IntegrityError):
        commit_selection(pools, [sorted(pools.x_l)[0]], {sorted(pools.x_l)[0]: ()})
    with pytest.raises(IntegrityError):
        commit_selection(pools, [free[0]], {})
    pools.x_cand = {free[1]}
    with pytest.raises(IntegrityError):
        commit_selection(pools, [free[0]], {free[0]: ()})


def test_charge_beyond_budget_raises():
    pools = init_deployment_pools(bare_dataset(4, n_val=10), n_init=2, rng_seed=0, budget_seconds=20)
    pools.charge(15)
    with pytest.raises(BudgetExceeded):
        pools.charge(15)
    assert pools.budget_spent == 15


def test_pool_invariants_under_random_cycles():
    """Random cycle sequences in both regimes never break disjointness, growth or the budget"""
    dataset = tiny_detection_dataset(n_samples=60)
    annotator = Annotator(TaskKind.DETECTION, dataset.n_classes)
    rng = np.random.default_rng(2024)
    violations = 0
    for trial in range(1000):
        n_cycle = int(rng.integers(1, 4))
        n_pool = int(rng.integers(1, 3))
        budget = float(rng.integers(15, 400))
        if trial % 2:
            pools = init_deployment_pools(dataset, int(rng.integers(1, 5)), rng_seed=trial, budget_seconds=budget)
        else:
            pools = init_policy_training_pools(dataset, int(rng.integers(1, 4)), 3, 0.1, rng_seed=trial,
                                               budget_seconds=budget)
        ledger = CostLedger()
        total = len(pools.x_l) + len(pools.x_u)
        for cycle in range(1, 6):
            try:
                candidates = sample_candidates(pools, n_pool, n_cycle, rng)
            except EndOfEpisode:
                break
            pools.x_cand = set(candidates)
            chosen = [int(i) for i in rng.choice(candidates, size=n_cycle, replace=False)]
            labels, completed = {}, True
            for i in chosen:
                annotations, cost = annotator.annotate_strong(dataset[i], pools)
                try:
                    pools.charge(cost)
                except BudgetExceeded:
                    completed = False
                    break
                ledger.record(cycle, i, "draw", cost)
                labels[i] = annotations
            size_before = len(pools.x_l)
            commit_selection(pools, list(labels), labels)
            pools.x_cand = set()
            pools.check_invariants()
            if pools.x_l & pools.x_u or len(pools.x_l) + len(pools.x_u) != total:
                violations += 1
            if completed and len(pools.x_l) - size_before != n_cycle:
                violations += 1
            if ledger.total_seconds > budget or ledger.total_seconds != pools.budget_spent:
                violations += 1
            if pools.regime == Regime.DEPLOYMENT and set(pools.evaluation_ids()) & set(dataset.split("train")):
                violations += 1
            if not completed:
                break
    assert violations == 0


def test_dataset_container_round_trip(tmp_path, detection_dataset, sequence_dataset):
    for dataset, name in ((detection_dataset, "det.npz"), (sequence_dataset, "seq.npz")):
        path = save_dataset(dataset, str(tmp_path / name))
        loaded = load_dataset(path)
        assert loaded.task == dataset.task
        assert loaded.seed == dataset.seed
        assert loaded.splits == dataset.splits
        for sample_id, sample in dataset.samples.items():
            other = loaded[sample_id]
            assert np.array_equal(other.features, sample.features)
            assert [e.key() for e in other.entities] == [e.key() for e in sample.entities]
            if sample.boxes is not None:
                assert np.array_equal(other.boxes, sample.boxes)
        again = save_dataset(loaded, str(tmp_path / f"again_{name}"))
        assert open(path, 'rb').read() == open(again, 'rb').read()
