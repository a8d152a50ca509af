import inspect

import numpy as np
import pytest

from ibac.config import HeadConfig
from ibac.errors import ConfigError, EmptyCodebookError, EmptyDatasetError, ShapeError
from ibac.heads import (Codebook, FewShotSplit, MeanActionHead, build_codebook, evaluate_head, evaluate_index_head,
                        fit_direct, fit_index_head, fit_mean)
from ibac.heads.index import QuantizedIndexHead, action_table, nearest_centroid, train_index_classifier
from ibac.tensor_core import MlpSpec, Rng, init_params


def test_split_sizes_and_disjointness():
    split = FewShotSplit.draw(100, 30, seed=4)
    assert split.m == 30
    assert split.held_out.size == 20
    assert np.intersect1d(split.labeled, split.held_out).size == 0
    assert FewShotSplit.labelable(100) == 80


def test_splits_are_nested_and_share_the_held_out_rows():
    small = FewShotSplit.draw(200, 10, seed=1)
    large = FewShotSplit.draw(200, 100, seed=1)
    assert np.array_equal(large.labeled[:10], small.labeled)
    assert np.array_equal(large.held_out, small.held_out)
    assert np.array_equal(large.nested(10).labeled, small.labeled)


def test_split_seed_matters():
    assert not np.array_equal(FewShotSplit.draw(200, 10, seed=1).labeled, FewShotSplit.draw(200, 10, seed=2).labeled)


def test_split_bounds():
    with pytest.raises(ConfigError, match="exceeds"):
        FewShotSplit.draw(10, 9, seed=0)
    with pytest.raises(ConfigError):
        FewShotSplit.draw(10, 0, seed=0)
    with pytest.raises(EmptyDatasetError):
        FewShotSplit.draw(1, 1, seed=0)
    with pytest.raises(ConfigError):
        FewShotSplit.draw(100, 10, seed=0).nested(11)
    full = FewShotSplit.draw(10, FewShotSplit.labelable(10), seed=0)
    assert full.m == 8 and full.held_out.size == 2


def _linear_problem(n=1000, seed=0):
    rng = Rng(seed)
    latents = rng.normal((n, 3))
    weights = np.array([[1.0, -2.0], [0.5, 0.0], [0.0, 1.5]])
    return latents, latents @ weights + np.array([0.3, -0.1])


def test_direct_head_learns_a_linear_map():
    latents, actions = _linear_problem()
    split = FewShotSplit.draw(len(latents), 200, seed=0)
    config = HeadConfig(hidden=(), lr=1e-2, epochs=1500, batch_size=64, weight_decay=0.0)
    fit = fit_direct(latents, actions, split, config)
    assert fit.mse < 1e-4
    assert fit.train_mse < 1e-4
    assert fit.evaluation.n == split.held_out.size
    assert fit.evaluation.per_channel_mse.shape == (2,)


def test_direct_head_on_noise_does_no_better_than_the_mean():
    rng = Rng(3)
    latents = rng.normal((2000, 2))
    actions = rng.uniform((2000, 2), -1.0, 1.0)
    split = FewShotSplit.draw(len(latents), 1000, seed=0)
    config = HeadConfig(hidden=(), lr=1e-2, epochs=200, weight_decay=0.0)
    fit = fit_direct(latents, actions, split, config)
    variance = actions[split.held_out].var()
    assert abs(fit.mse - variance) < 0.1 * variance


def test_direct_head_is_reproducible():
    latents, actions = _linear_problem(n=300)
    split = FewShotSplit.draw(300, 50, seed=0)
    config = HeadConfig(hidden=(8,), epochs=5)
    a = fit_direct(latents, actions, split, config)
    b = fit_direct(latents, actions, split, config)
    assert np.array_equal(a.head.params, b.head.params)
    assert a.mse == b.mse


def test_direct_head_reads_only_labeled_actions():
    latents, actions = _linear_problem(n=300)
    split = FewShotSplit.draw(300, 50, seed=0)
    config = HeadConfig(hidden=(8,), epochs=5)
    scrambled = actions.copy()
    unlabeled = np.setdiff1d(np.arange(300), split.labeled)
    scrambled[unlabeled] = 1e6
    a = fit_direct(latents, actions, split, config)
    b = fit_direct(latents, scrambled, split, config)
    assert np.array_equal(a.head.params, b.head.params)


def test_scratch_kind():
    latents, actions = _linear_problem(n=300)
    split = FewShotSplit.draw(300, 50, seed=0)
    fit = fit_direct(latents, actions, split, HeadConfig(hidden=(4,), epochs=2), kind="scratch")
    assert fit.head.kind == "scratch"


def test_mean_head():
    actions = Rng(0).normal((50, 2))
    split = FewShotSplit.draw(50, 20, seed=0)
    head = fit_mean(actions, split)
    assert isinstance(head, MeanActionHead)
    assert np.array_equal(head.predict(np.zeros((3, 7))), np.tile(actions[split.labeled].mean(axis=0), (3, 1)))
    evaluation = evaluate_head(head, np.zeros((50, 1)), actions, split.held_out)
    expected = ((actions[split.held_out] - head.mean) ** 2).mean()
    assert evaluation.mse == pytest.approx(expected, rel=1e-12)


def test_evaluate_head_validation():
    head = MeanActionHead(np.zeros(2))
    with pytest.raises(EmptyDatasetError):
        evaluate_head(head, np.zeros((4, 1)), np.zeros((4, 2)), [])
    with pytest.raises(ShapeError):
        evaluate_head(head, np.zeros((4, 1)), np.zeros((5, 2)), [0])
    with pytest.raises(ShapeError):
        evaluate_head(head, np.zeros((4, 1)), np.zeros((4, 2)), [4])


def _clusters(seed=0, n_per=60):
    rng = Rng(seed)
    centers = np.array([[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0]])
    latents = np.vstack([c + 0.3 * rng.normal((n_per, 2)) for c in centers])
    actions = np.vstack([np.tile([[1.0, 0.0]], (n_per, 1)), np.tile([[0.0, 1.0]], (n_per, 1)),
                         np.tile([[-1.0, -1.0]], (n_per, 1))])
    return latents, actions


def test_nearest_centroid_ties_go_to_the_lowest_index():
    centroids = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert nearest_centroid(np.array([[0.0, 3.0], [0.9, 0.0]]), centroids).tolist() == [0, 0]


def test_codebook_recovers_separated_clusters():
    latents, _ = _clusters()
    codebook = build_codebook(latents, 3, seed=0)
    assert isinstance(codebook, Codebook) and codebook.k == 3 and codebook.d_z == 2
    assignments = codebook.assign(latents)
    for block in range(3):
        assert len(set(assignments[block * 60:(block + 1) * 60].tolist())) == 1
    assert len(set(assignments.tolist())) == 3
    assert not codebook.empty.any()


def test_codebook_is_seeded():
    latents = Rng(1).normal((200, 2))
    a, b = build_codebook(latents, 5, seed=3), build_codebook(latents, 5, seed=3)
    assert np.array_equal(a.centroids, b.centroids)


def test_identical_latents_leave_one_effective_code():
    codebook = build_codebook(np.ones((20, 2)), 3, seed=0)
    assert codebook.empty.sum() >= 2
    assert len(set(codebook.assign(np.ones((20, 2))).tolist())) == 1


def test_codebook_validation():
    with pytest.raises(ShapeError):
        build_codebook(np.zeros((2, 2)), 3, seed=0)
    with pytest.raises(ShapeError):
        build_codebook(np.zeros((5, 2)), 0, seed=0)


def test_index_head_on_clustered_latents():
    latents, actions = _clusters()
    codebook = build_codebook(latents, 3, seed=0)
    assignments = codebook.assign(latents)
    split = FewShotSplit.draw(len(latents), 30, seed=0)
    config = HeadConfig(hidden=(16,), lr=1e-2, classifier_epochs=100, classifier_batch_size=32)
    head = fit_index_head(latents, assignments, codebook, actions[split.labeled], split, config)
    fit = evaluate_index_head(head, latents, assignments, actions, split)
    assert fit.index_accuracy == 1.0
    assert fit.mse < 1e-12
    assert not head.fallback.any()


def test_index_prediction_ignores_positive_logit_scaling():
    latents, actions = _clusters()
    codebook = build_codebook(latents, 3, seed=0)
    assignments = codebook.assign(latents)
    split = FewShotSplit.draw(len(latents), 30, seed=0)
    head = fit_index_head(latents, assignments, codebook, actions[split.labeled], split,
                          HeadConfig(hidden=(), classifier_epochs=20))
    before = head.predict_index(latents)
    head.params = 3.0 * head.params
    assert np.array_equal(head.predict_index(latents), before)


def test_action_table_fallback():
    table, fallback = action_table(np.array([0, 0, 2]), np.array([[1.0], [3.0], [5.0]]), k=3)
    assert table[:, 0].tolist() == [2.0, 3.0, 5.0]
    assert fallback.tolist() == [False, True, False]


def test_index_head_only_sees_labeled_actions():
    assert "actions" not in inspect.signature(build_codebook).parameters
    assert "actions" not in inspect.signature(train_index_classifier).parameters
    latents, actions = _clusters()
    codebook = build_codebook(latents, 3, seed=0)
    split = FewShotSplit.draw(len(latents), 30, seed=0)
    with pytest.raises(ShapeError, match="labeled actions"):
        fit_index_head(latents, codebook.assign(latents), codebook, actions, split)


def test_empty_codebook_is_rejected():
    latents = np.zeros((10, 2))
    codebook = Codebook(np.zeros((2, 2)), np.array([True, True]))
    split = FewShotSplit.draw(10, 3, seed=0)
    with pytest.raises(EmptyCodebookError):
        fit_index_head(latents, np.zeros(10, dtype=np.int64), codebook, np.zeros((3, 1)), split)


def test_index_prediction_ignores_positive_rescaling_and_shifts_of_the_logits():
    for seed in range(100):
        rng = Rng(seed)
        d_z, k, width = 1 + seed % 4, 2 + seed % 6, 3 + seed % 5
        codebook = Codebook(rng.normal((k, d_z)), np.zeros(k, dtype=bool))
        spec = MlpSpec((d_z, width, k))
        params = init_params(spec, rng.spawn("params")) + 0.1 * rng.normal(spec.n_params)
        head = QuantizedIndexHead(codebook, spec, params, np.zeros(d_z), np.ones(d_z), np.zeros((k, 1)),
                                  np.zeros(k, dtype=bool))
        latents = rng.normal((40, d_z))
        before = head.predict_index(latents)

        last = (width + 1) * k
        scaled = params.copy()
        scaled[-last:] *= float(rng.uniform(1, 0.2, 5.0)[0])
        scaled[-k:] += float(rng.normal(1)[0])
        head.params = scaled
        assert np.array_equal(head.predict_index(latents), before), seed


def test_index_head_action_table_reads_only_labeled_rows():
    config = HeadConfig(hidden=(), classifier_epochs=1, classifier_batch_size=64)
    for seed in range(100):
        rng = Rng(seed)
        latents = rng.normal((60, 2))
        codebook = build_codebook(latents, 2 + seed % 4, seed=seed)
        assignments = codebook.assign(latents)
        split = FewShotSplit.draw(len(latents), 1 + seed % 40, seed=seed)
        actions = np.full((60, 2), np.nan)
        actions[split.labeled] = rng.uniform((split.m, 2), -1.0, 1.0)

        head = fit_index_head(latents, assignments, codebook, actions[split.labeled], split, config)
        labeled_codes = assignments[split.labeled]
        assert np.isfinite(head.action_table).all(), seed
        for code in range(codebook.k):
            members = actions[split.labeled][labeled_codes == code]
            expected = members.mean(axis=0) if len(members) else actions[split.labeled].mean(axis=0)
            assert np.allclose(head.action_table[code], expected, rtol=0, atol=1e-12), seed
            assert head.fallback[code] == (len(members) == 0), seed


def test_codebook_assignment_is_the_exhaustive_nearest_centroid():
    for seed in range(100):
        rng = Rng(seed)
        k, d_z = 1 + seed % 8, 1 + seed % 4
        codebook = Codebook(rng.normal((k, d_z)), np.zeros(k, dtype=bool))
        latents = 2.0 * rng.normal((50, d_z))
        assignments = codebook.assign(latents)
        for row, code in zip(latents, assignments):
            distances = [float(np.sum((row - c) ** 2)) for c in codebook.centroids]
            assert code == distances.index(min(distances)), seed


def test_index_classifier_never_trains_on_held_out_rows():
    latents, actions = _clusters()
    codebook = build_codebook(latents, 3, seed=0)
    assignments = codebook.assign(latents)
    split = FewShotSplit.draw(len(latents), 30, seed=0)
    config = HeadConfig(hidden=(4,), classifier_epochs=5, classifier_batch_size=32)
    head = fit_index_head(latents, assignments, codebook, actions[split.labeled], split, config)

    scrambled, relabeled = latents.copy(), assignments.copy()
    scrambled[split.held_out] = 50.0 * Rng(1).normal((split.held_out.size, 2))
    relabeled[split.held_out] = (relabeled[split.held_out] + 1) % 3
    other = fit_index_head(scrambled, relabeled, codebook, actions[split.labeled], split, config)
    assert np.array_equal(other.params, head.params)
    assert np.array_equal(other.in_mean, head.in_mean) and np.array_equal(other.in_std, head.in_std)


def test_more_labels_never_hurt_the_direct_head():
    monotone = full_beats_few = 0
    for seed in range(5):
        rng = Rng(seed)
        actions = rng.uniform((1000, 2), -1.0, 1.0)
        latents = actions + 0.5 * rng.normal((1000, 2))
        base = FewShotSplit.draw(1000, FewShotSplit.labelable(1000, 0.2), seed=seed)
        mse = {m: fit_direct(latents, actions, base.nested(m), HeadConfig(seed=seed)).mse for m in (10, 50, 200)}
        everything = fit_direct(latents, actions, base, HeadConfig(seed=seed)).mse
        monotone += mse[10] >= mse[50] >= mse[200]
        full_beats_few += everything <= mse[50]
    assert monotone >= 3
    assert full_beats_few >= 3


def test_direct_head_starts_from_the_labeled_mean():
    latents, actions = _linear_problem(n=300)
    split = FewShotSplit.draw(300, 50, seed=0)
    fit = fit_direct(latents, actions, split, HeadConfig(epochs=0, val_fraction=0.0))
    assert np.allclose(fit.head.predict(latents), actions[split.labeled].mean(axis=0), rtol=0, atol=1e-12)


def test_early_stopping_keeps_few_shot_heads_near_the_mean_on_noise():
    rng = Rng(11)
    latents = rng.normal((2000, 8))
    actions = rng.uniform((2000, 2), -1.0, 1.0)
    split = FewShotSplit.draw(len(latents), 50, seed=0)
    stopped = fit_direct(latents, actions, split, HeadConfig())
    mean = evaluate_head(fit_mean(actions, split), latents, actions, split.held_out)
    assert stopped.mse <= 1.2 * mean.mse
