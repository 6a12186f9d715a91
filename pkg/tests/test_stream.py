# -*- coding: utf-8 -*-

from dataclasses import replace

import pytest
import torch

from vpt_nullspace.errors import ConfigError
from vpt_nullspace.harness import SyntheticTaskSpec, class_patterns, generate_task_stream
from vpt_nullspace.harness.stream import patchify


def test_stream_is_deterministic(tiny_spec):
    a, b = generate_task_stream(tiny_spec), generate_task_stream(tiny_spec)
    for ta, tb in zip(a, b):
        assert ta.class_ids == tb.class_ids
        assert torch.equal(ta.train_x, tb.train_x)
        assert torch.equal(ta.test_y, tb.test_y)
    assert torch.equal(a.pretext.train_x, b.pretext.train_x)


def test_stream_differs_across_seeds(tiny_spec):
    a = generate_task_stream(tiny_spec)
    b = generate_task_stream(replace(tiny_spec, seed=1))
    assert not torch.equal(a.tasks[0].train_x, b.tasks[0].train_x)


def test_stream_shapes_and_labels(tiny_stream, tiny_spec):
    assert len(tiny_stream) == 2
    for t, task in enumerate(tiny_stream):
        assert task.index == t
        assert task.train_x.shape == (12, 4, 16)
        assert task.test_x.shape == (10, 4, 16)
        assert task.train_x.dtype == torch.float64
        assert sorted(set(task.train_y.tolist())) == [2 * t, 2 * t + 1]
        assert task.train_y.tolist().count(2 * t) == tiny_spec.train_per_class


def test_stream_classes_are_disjoint(tiny_stream):
    seen = set()
    for task in tiny_stream:
        assert not seen & set(task.class_ids)
        seen |= set(task.class_ids)
    assert not seen & set(tiny_stream.pretext.class_ids)


def test_pretext_task(tiny_stream):
    pretext = tiny_stream.pretext
    assert pretext.index == -1
    assert pretext.train_x.shape == (8, 4, 16)
    assert pretext.test_x.shape[0] == 0


def test_no_pretext_classes(tiny_spec):
    assert generate_task_stream(replace(tiny_spec, pretext_classes=0)).pretext is None


def test_capacity_is_enforced():
    spec = SyntheticTaskSpec(image_size=4, patch_size=2, tasks=5, classes_per_task=2, pretext_classes=10)
    with pytest.raises(ConfigError) as e:
        generate_task_stream(spec)
    assert e.value.key == "stream.classes_per_task"


@pytest.mark.parametrize(
    "changes",
    [dict(patch_size=3), dict(tasks=0), dict(train_per_class=0)],
)
def test_invalid_specs(tiny_spec, changes):
    with pytest.raises(ConfigError):
        replace(tiny_spec, **changes).validate()


def test_patchify_order():
    images = torch.arange(16, dtype=torch.float64).reshape(1, 4, 4)
    patches = patchify(images, 2)
    assert patches.shape == (1, 4, 4)
    assert patches[0, 0].tolist() == [0.0, 1.0, 4.0, 5.0]
    assert patches[0, 1].tolist() == [2.0, 3.0, 6.0, 7.0]
    assert patches[0, 3].tolist() == [10.0, 11.0, 14.0, 15.0]


def test_stream_patterns_are_orthogonal_with_the_configured_scale(tiny_spec):
    patterns = class_patterns(tiny_spec)
    gram = patterns.stream @ patterns.stream.T
    dim = tiny_spec.patch_dim
    expected = torch.eye(tiny_spec.total_classes, dtype=torch.float64) * tiny_spec.prototype_scale**2 * dim
    assert torch.allclose(gram, expected, atol=1e-12)
    assert patterns.pretext.shape == (tiny_spec.pretext_classes, dim)
    assert torch.allclose(patterns.pretext.pow(2).mean(dim=-1), torch.full((2,), tiny_spec.prototype_scale**2, dtype=torch.float64))


def test_samples_share_the_base_and_tile_the_class_pattern(tiny_spec):
    spec = replace(tiny_spec, noise_scale=0.0)
    stream = generate_task_stream(spec)
    patterns = class_patterns(spec)
    base = patchify(patterns.base[None], spec.patch_size)[0]
    for task in stream:
        for local, cid in enumerate(task.class_ids):
            x = task.train_x[task.train_y == task.index * spec.classes_per_task + local]
            # every patch carries the same class pattern on top of its own base patch
            assert torch.allclose(x - base, patterns.stream[cid].expand_as(x), atol=1e-12)


def test_noise_scale_sets_the_spread_around_the_class_image(tiny_spec):
    spec = replace(tiny_spec, train_per_class=400, noise_scale=0.3)
    task = generate_task_stream(spec).tasks[0]
    x = task.train_x[task.train_y == 0]
    assert float(x.std(dim=0).mean()) == pytest.approx(0.3, rel=0.05)
