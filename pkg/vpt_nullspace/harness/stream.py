# -*- coding: utf-8 -*-

"""
Synthetic class-incremental task streams. All images share one fixed base image; a class adds its own
patch pattern, tiled over every patch, and samples add Gaussian pixel noise on top. The patterns of
the stream classes are mutually orthogonal in patch space, the pretext patterns are drawn at random.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import torch

from ..errors import ConfigError
from ..numeric import DTYPE
from ..rng import SeedTree

log = logging.getLogger("task-stream")


@dataclass(frozen=True)
class SyntheticTaskSpec:
    image_size: int = 16
    patch_size: int = 4
    classes_per_task: int = 2
    tasks: int = 5
    train_per_class: int = 100
    test_per_class: int = 100
    base_scale: float = 1.0
    prototype_scale: float = 0.2
    noise_scale: float = 0.2
    pretext_classes: int = 10
    pretext_per_class: int = 50
    seed: int = 0

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2

    @property
    def capacity(self) -> int:
        # orthogonal stream patterns: at most one per patch dimension
        return self.patch_dim

    @property
    def total_classes(self) -> int:
        return self.classes_per_task * self.tasks

    def validate(self) -> None:
        if self.image_size < 1 or self.patch_size < 1 or self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"The image size {self.image_size} must be a positive multiple of the patch size {self.patch_size}.",
                key="stream.patch_size",
            )
        if self.tasks < 1 or self.classes_per_task < 1:
            raise ConfigError("A stream needs at least one task with at least one class.", key="stream.tasks")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("Every class needs at least one train and one test sample.", key="stream.train_per_class")
        if self.total_classes > self.capacity:
            raise ConfigError(
                f"{self.total_classes} stream classes exceed the generator capacity of {self.capacity} classes "
                f"for {self.patch_size}x{self.patch_size} patches.",
                key="stream.classes_per_task",
            )


@dataclass
class Task:
    """
    One task. Labels are positions in the class-incremental label space (task index * classes per
    task + local class index), which is the order of the concatenated heads.
    """

    index: int
    class_ids: Tuple[int, ...]
    train_x: torch.Tensor
    train_y: torch.Tensor
    test_x: torch.Tensor
    test_y: torch.Tensor

    @property
    def num_classes(self) -> int:
        return len(self.class_ids)

    def train(self) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.train_x, self.train_y

    def test(self) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.test_x, self.test_y


@dataclass
class TaskStream:
    spec: SyntheticTaskSpec
    tasks: List[Task]
    pretext: Optional[Task] = None

    @property
    def classes_per_task(self) -> int:
        return self.spec.classes_per_task

    @property
    def seed(self) -> int:
        return self.spec.seed

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


def patchify(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """
    Images (n, S, S) to non-overlapping flattened patches (n, (S/p)^2, p^2) in row-major patch order.
    """
    n, s, _ = images.shape
    g = s // patch_size
    patches = images.reshape(n, g, patch_size, g, patch_size).permute(0, 1, 3, 2, 4)
    return patches.reshape(n, g * g, patch_size * patch_size)


@dataclass
class ClassPatterns:
    """
    Generator parameters: the shared base image (S, S), one patch pattern per stream class and one
    per pretext class (rows of patch_dim values).
    """

    base: torch.Tensor
    stream: torch.Tensor
    pretext: torch.Tensor

    def image(self, pattern: torch.Tensor, spec: SyntheticTaskSpec) -> torch.Tensor:
        g = spec.image_size // spec.patch_size
        tile = pattern.reshape(spec.patch_size, spec.patch_size).repeat(g, g)
        return self.base + tile


def class_patterns(spec: SyntheticTaskSpec) -> ClassPatterns:
    """
    Stream patterns are orthonormal directions of patch space scaled to a per-pixel RMS of
    `prototype_scale`; the base image has a per-pixel RMS of `base_scale`.
    """
    seeds = SeedTree(spec.seed)
    dim = spec.patch_dim
    base = torch.randn(spec.image_size, spec.image_size, generator=seeds.generator("stream", purpose="base"), dtype=DTYPE)
    g = seeds.generator("stream", purpose="patterns")
    q, _ = torch.linalg.qr(torch.randn(dim, spec.total_classes, generator=g, dtype=DTYPE))
    pretext = torch.randn(spec.pretext_classes, dim, generator=g, dtype=DTYPE)
    pretext = pretext / pretext.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    scale = spec.prototype_scale * dim**0.5
    return ClassPatterns(base=base * spec.base_scale, stream=q.T * scale, pretext=pretext * scale)


def _samples(
    spec: SyntheticTaskSpec, patterns: ClassPatterns, rows: torch.Tensor, per_class: int, label_offset: int, g: torch.Generator
) -> Tuple[torch.Tensor, torch.Tensor]:
    xs, ys = [], []
    for local, pattern in enumerate(rows):
        noise = torch.randn(per_class, spec.image_size, spec.image_size, generator=g, dtype=DTYPE) * spec.noise_scale
        xs.append(patterns.image(pattern, spec) + noise)
        ys.append(torch.full((per_class,), label_offset + local, dtype=torch.long))
    return patchify(torch.cat(xs), spec.patch_size), torch.cat(ys)


def generate_task_stream(spec: SyntheticTaskSpec) -> TaskStream:
    spec.validate()
    seeds = SeedTree(spec.seed)
    patterns = class_patterns(spec)
    order = seeds.numpy("stream", purpose="class-order").permutation(spec.total_classes).tolist()

    tasks = []
    cpt = spec.classes_per_task
    for t in range(spec.tasks):
        class_ids = tuple(order[t * cpt : (t + 1) * cpt])
        rows = patterns.stream[list(class_ids)]
        train_x, train_y = _samples(
            spec, patterns, rows, spec.train_per_class, t * cpt, seeds.generator("stream", t, "train")
        )
        test_x, test_y = _samples(spec, patterns, rows, spec.test_per_class, t * cpt, seeds.generator("stream", t, "test"))
        tasks.append(Task(t, class_ids, train_x, train_y, test_x, test_y))

    pretext = None
    if spec.pretext_classes > 0:
        class_ids = tuple(range(spec.total_classes, spec.total_classes + spec.pretext_classes))
        x, y = _samples(
            spec, patterns, patterns.pretext, spec.pretext_per_class, 0, seeds.generator("stream", purpose="pretext")
        )
        pretext = Task(-1, class_ids, x, y, x[:0], y[:0])

    log.debug(f"Generated {spec.tasks} tasks with {cpt} classes each (seed {spec.seed}).")
    return TaskStream(spec, tasks, pretext)
