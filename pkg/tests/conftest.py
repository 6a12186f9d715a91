# -*- coding: utf-8 -*-

import logging

import pytest
import torch

from vpt_nullspace import config
from vpt_nullspace.harness import SyntheticTaskSpec, generate_task_stream
from vpt_nullspace.model import BackboneModel

TINY_CONFIG = """\
# tiny stream for the command tests
stream.image_size = 8
stream.patch_size = 4
stream.tasks = 2
stream.classes_per_task = 2
stream.train_per_class = 8
stream.test_per_class = 8
stream.pretext_classes = 2
stream.pretext_per_class = 4

model.dim = 8
model.heads = 2
model.layers = 1
model.prompts = 2

pretrain.epochs = 1
train.epochs = 2
train.batch_size = 8

method.names = seq, nsp2
run.seeds = 0
run.output_dir = out
"""


@pytest.fixture(autouse=True)
def vptns_home(tmp_path, monkeypatch):
    home = tmp_path / "home"
    monkeypatch.setattr(config, "VPTNS_HOME", str(home))
    root = logging.getLogger()
    handlers = list(root.handlers)
    yield home
    # the commands configure the root logger; drop their handlers between tests
    for h in list(root.handlers):
        if h not in handlers:
            root.removeHandler(h)
            h.close()


@pytest.fixture
def generator():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


@pytest.fixture
def small_model(generator):
    """
    D=8, H=2, L=2, M=2 over 4 patches of 4 pixels (N=5 tokens), backbone frozen, no heads yet.
    """
    model = BackboneModel(dim=8, heads=2, layers=2, prompts=2, patch_dim=4, num_patches=4, generator=generator)
    model.freeze_backbone()
    return model


@pytest.fixture
def tiny_spec():
    return SyntheticTaskSpec(
        image_size=8,
        patch_size=4,
        classes_per_task=2,
        tasks=2,
        train_per_class=6,
        test_per_class=5,
        pretext_classes=2,
        pretext_per_class=4,
        seed=0,
    )


@pytest.fixture
def tiny_stream(tiny_spec):
    return generate_task_stream(tiny_spec)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY_CONFIG)
    return path
