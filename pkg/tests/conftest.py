import pytest

from src.data_generator import (DetectionTaskSpec, SequenceTaskSpec, generate_detection_dataset,
                                generate_sequence_dataset)


@pytest.fixture(scope="session")
def detection_spec():
    return DetectionTaskSpec(n_classes=4, feature_dim=6, entities_per_sample=(1, 4))


@pytest.fixture(scope="session")
def detection_dataset(detection_spec):
    """200 pages: 100 train / 50 val / 50 test"""
    return generate_detection_dataset(detection_spec, 200, seed=3)


@pytest.fixture(scope="session")
def sequence_spec():
    return SequenceTaskSpec(n_entity_classes=3, max_len=30, length_range=(10, 30), feature_dim=5)


@pytest.fixture(scope="session")
def sequence_dataset(sequence_spec):
    return generate_sequence_dataset(sequence_spec, 160, seed=5)
