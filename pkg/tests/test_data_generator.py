from collections import Counter

import numpy as np
import pytest

from src.data_generator import (DetectionTaskSpec, SequenceTaskSpec, dataset_path, generate_all_datasets,
                                generate_detection_dataset, generate_sequence_dataset, skewed_prior)
from src.opad.data_model import Box, Prediction, save_dataset
from src.opad.errors import ConfigurationError
from src.opad.metrics import average_precision, box_iou_matrix, entity_f_score


def test_class_histogram_follows_prior():
    spec = DetectionTaskSpec()
    dataset = generate_detection_dataset(spec, 5000, seed=0)
    counts = Counter(e.class_id for s in dataset.samples.values() for e in s.entities)
    total = sum(counts.values())
    for class_id, p in enumerate(spec.class_prior):
        assert abs(counts[class_id] / total - p) <= 0.02


def test_default_prior_is_imbalanced():
    prior = skewed_prior(13)
    assert sum(prior) == pytest.approx(1.0)
    assert max(prior) / min(prior) >= 10


def test_separable_limit_gives_perfect_ap():
    """Zero noise and no distractors: nearest-center classification is exact"""
    spec = DetectionTaskSpec(feature_noise_sigma=0.0, distractor_rate=0.0)
    dataset = generate_detection_dataset(spec, 100, seed=1)
    centers = spec.centers
    predictions, truth = {}, {}
    for sample in dataset.samples.values():
        preds = []
        for box, feature in zip(sample.boxes, sample.features):
            nearest = int(np.argmin(((centers - feature) ** 2).sum(axis=1)))
            scores = np.zeros(spec.n_classes + 1)
            scores[nearest] = 1.0
            preds.append(Prediction.from_scores(Box(*map(float, box)), scores))
        predictions[sample.id] = preds
        truth[sample.id] = sample.entities
    assert average_precision(predictions, truth, spec.n_classes).value == pytest.approx(1.0)


def test_every_gt_box_has_a_matching_proposal(detection_dataset):
    for sample in detection_dataset.samples.values():
        gt = np.array([e.geometry.as_tuple() for e in sample.entities])
        iou = box_iou_matrix(gt, sample.boxes)
        assert np.all(iou.max(axis=1) > 0.5)


def test_boxes_lie_on_the_unit_page(detection_dataset):
    for sample in detection_dataset.samples.values():
        assert np.all((sample.boxes >= 0.0) & (sample.boxes <= 1.0))
        for entity in sample.entities:
            assert 0.0 <= entity.geometry.x0 < entity.geometry.x1 <= 1.0
            assert 0.0 <= entity.geometry.y0 < entity.geometry.y1 <= 1.0


def test_same_seed_same_bytes(tmp_path, detection_spec, sequence_spec):
    for name, make, spec in (("det", generate_detection_dataset, detection_spec),
                             ("seq", generate_sequence_dataset, sequence_spec)):
        a = save_dataset(make(spec, 40, seed=9), str(tmp_path / f"{name}_a.npz"))
        b = save_dataset(make(spec, 40, seed=9), str(tmp_path / f"{name}_b.npz"))
        c = save_dataset(make(spec, 40, seed=10), str(tmp_path / f"{name}_c.npz"))
        assert open(a, 'rb').read() == open(b, 'rb').read()
        assert open(a, 'rb').read() != open(c, 'rb').read()


@pytest.mark.parametrize("overrides", [
    {'feature_noise_sigma': -0.1},
    {'box_jitter_sigma': -0.01},
    {'center_scale': 0.0},
    {'distractor_rate': 1.0},
    {'n_classes': 1},
    {'class_prior': [0.5, 0.5]},
])
def test_degenerate_detection_specs(overrides):
    with pytest.raises(ConfigurationError):
        DetectionTaskSpec(**overrides)


def test_degenerate_sequence_specs():
    with pytest.raises(ConfigurationError):
        SequenceTaskSpec(feature_noise_sigma=-1.0)
    with pytest.raises(ConfigurationError):
        SequenceTaskSpec(max_len=10, length_range=(5, 20))
    with pytest.raises(ConfigurationError):
        SequenceTaskSpec(tag_scheme="BIO")


def test_sentences_respect_max_len():
    spec = SequenceTaskSpec()
    dataset = generate_sequence_dataset(spec, 1000, seed=0)
    assert spec.n_tags == 4 * spec.n_entity_classes + 1
    assert max(s.n_units for s in dataset.samples.values()) <= 150


def test_spans_are_disjoint_and_separated(sequence_dataset):
    for sample in sequence_dataset.samples.values():
        spans = sorted(e.geometry.as_tuple() for e in sample.entities)
        for (_, end), (start, _) in zip(spans, spans[1:]):
            assert start > end
        assert all(0 <= s < e <= sample.n_units for s, e in spans)


def test_zero_entity_classes_gives_all_o_sentences():
    spec = SequenceTaskSpec(n_entity_classes=0, max_len=20, length_range=(5, 20))
    dataset = generate_sequence_dataset(spec, 50, seed=2)
    assert all(not s.entities for s in dataset.samples.values())
    truth = {s.id: s.entities for s in dataset.samples.values()}
    assert entity_f_score({}, truth, 0).value == 0.0


def test_split_sizes(detection_dataset):
    sizes = {name: len(detection_dataset.split(name)) for name in ("train", "val", "test")}
    assert sizes == {'train': 100, 'val': 50, 'test': 50}


def test_generate_all_datasets_writes_one_file_per_task_and_seed(tmp_path, detection_spec, sequence_spec):
    paths = generate_all_datasets({'detection': detection_spec, 'sequence': sequence_spec},
                                  {'detection': 30, 'sequence': 30}, [0, 1], str(tmp_path))
    assert len(paths) == 4
    assert dataset_path(str(tmp_path), "sequence", 1) in paths
