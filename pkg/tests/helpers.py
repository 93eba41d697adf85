"""Builders shared by the test modules"""

import numpy as np

from src.opad.data_model import Box, Dataset, EntityAnnotation, Prediction, Sample, TaskKind


def make_prediction(geometry, class_id, confidence, n_outputs):
    """Prediction whose argmax is ``class_id`` with the remaining mass spread evenly"""
    scores = np.full(n_outputs, (1.0 - confidence) / (n_outputs - 1))
    scores[class_id] = confidence
    return Prediction.from_scores(geometry, scores)


def tiny_detection_dataset(n_samples=12, n_classes=2, feature_dim=3):
    """Hand-built dataset: one entity per page, every id in train/val/test by thirds"""
    samples = []
    for i in range(n_samples):
        entity = EntityAnnotation(i % n_classes, Box(0.1, 0.1, 0.5, 0.5))
        features = np.full((2, feature_dim), float(i))
        boxes = np.array([[0.1, 0.1, 0.5, 0.5], [0.6, 0.6, 0.9, 0.9]])
        samples.append(Sample(id=i, entities=(entity,), features=features, boxes=boxes))
    third = n_samples // 3
    splits = {'train': range(third), 'val': range(third, 2 * third), 'test': range(2 * third, n_samples)}
    return Dataset(TaskKind.DETECTION, n_classes, feature_dim, samples, splits, seed=0)
