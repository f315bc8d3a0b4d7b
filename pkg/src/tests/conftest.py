import numpy as np
import pytest
import torch

from datasets.sequence import BoundingBox, FrameRecord, Sequence, Modality
from datasets.synthetic import ToySequenceConfig, TargetDescriptor, MotionDescriptor, generate_toy_sequence
from models.TrackNet import classification_spec, build_network


def make_sequence(id="seq", modalities=("RGB", "RGB", "NIR"), size=32, box=(8, 8, 10, 12), attributes=()):
    rng = np.random.default_rng(0)
    frames = [FrameRecord(image=rng.uniform(0, 1, size=(size, size, 3)).astype(np.float32),
                          modality=Modality(m), gt=BoundingBox(*box)) for m in modalities]
    return Sequence(id=id, frames=frames, attributes=attributes)


@pytest.fixture
def tiny_sequence():
    return make_sequence()


@pytest.fixture
def toy_config():
    return ToySequenceConfig(length=12, image_size=48, target=TargetDescriptor(width=12., height=10.),
                             motion=MotionDescriptor(velocity=(1., 0.5), noise=0.2), switch_schedule=(4, 8),
                             seed=3, id="toy_fixture")


@pytest.fixture
def toy_sequence(toy_config):
    return generate_toy_sequence(toy_config)


@pytest.fixture
def small_net():
    torch.manual_seed(0)
    return build_network(classification_spec(), use_marmot=True)


@pytest.fixture
def baseline_net():
    torch.manual_seed(0)
    return build_network(classification_spec(), use_marmot=False)
