import numpy as np
import pytest

from src.opad.annotator import Annotator
from src.opad.data_model import Box, EntityAnnotation, Sample, Span, TaskKind
from src.opad.errors import ConfigurationError
from src.opad.rewards import (RewardConfig, class_entropy, class_entropy_reward, combine, feedback_reward,
                              vanilla_reward)
from tests.helpers import make_prediction


def entity(class_id, start=0):
    return EntityAnnotation(class_id, Span(start, start + 1))


def test_vanilla_reward():
    assert vanilla_reward(0.62, 0.5) == pytest.approx(0.12)
    assert vanilla_reward(0.4, 0.5) == pytest.approx(-0.1)


def test_class_entropy():
    assert class_entropy([]) == 0.0
    assert class_entropy([entity(2), entity(2, 3)]) == 0.0
    assert class_entropy([entity(k) for k in range(4)]) == pytest.approx(np.log(4))
    assert class_entropy_reward([[entity(0)], [entity(1)], []]) == pytest.approx(np.log(2))


def feedback_outcome(annotator, sample_id, predictions):
    boxes = (Box(0.1, 0.1, 0.3, 0.3), Box(0.5, 0.5, 0.8, 0.8))
    sample = Sample(id=sample_id, entities=(EntityAnnotation(0, boxes[0]), EntityAnnotation(1, boxes[1])),
                    features=np.zeros((2, 3)), boxes=np.array([b.as_tuple() for b in boxes]))
    return annotator.annotate_weak(sample, predictions(boxes))[0]


def test_feedback_reward():
    annotator = Annotator(TaskKind.DETECTION, 2)
    perfect = feedback_outcome(annotator, 0, lambda b: [make_prediction(b[0], 0, 0.9, 3),
                                                        make_prediction(b[1], 1, 0.8, 3)])
    silent = feedback_outcome(annotator, 1, lambda b: [])
    assert feedback_reward([perfect], 2) == pytest.approx(0.0)
    assert feedback_reward([silent], 2) == pytest.approx(1.0)
    assert 0.0 < feedback_reward([perfect, silent], 2) < 1.0
    with pytest.raises(ConfigurationError):
        feedback_reward([perfect], 2, TaskKind.SEQUENCE)


def test_combine():
    config = RewardConfig(use_class_entropy=True, lambda_cls=0.5, use_feedback=True, lambda_fb=2.0)
    breakdown = combine(config, 0.1, cls_entropy=0.4, feedback=0.05)
    assert breakdown.total == pytest.approx(0.1 + 0.2 + 0.1)
    plain = combine(RewardConfig(), 0.1, cls_entropy=0.4, feedback=0.05)
    assert plain.total == pytest.approx(0.1)
    assert plain.cls_entropy == pytest.approx(0.4)


def test_reward_config_validation_and_names():
    assert RewardConfig().variant == "vanilla"
    assert RewardConfig(use_class_entropy=True, lambda_cls=0.5).variant == "vanilla-cls0.5"
    assert RewardConfig(use_class_entropy=True, lambda_cls=1.0, use_feedback=True,
                        lambda_fb=0.5).variant == "vanilla-cls1-fb0.5"
    with pytest.raises(ConfigurationError):
        RewardConfig(lambda_cls=-1.0)
    with pytest.raises(ConfigurationError):
        RewardConfig(use_feedback=True, lambda_fb=1.0, task=TaskKind.SEQUENCE, metric_kind="Fscore")
    with pytest.raises(ConfigurationError):
        RewardConfig(metric_kind="accuracy")
