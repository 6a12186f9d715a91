# -*- coding: utf-8 -*-

"""
Named, splittable random streams. Every consumer asks for its own stream by (component, task,
purpose), so adding a method or changing the order of calls never shifts the draws of another one.
"""

import zlib

import numpy as np
import torch


def _key(name) -> int:
    if isinstance(name, int):
        return name
    return zlib.crc32(str(name).encode("utf-8"))


class SeedTree:
    def __init__(self, seed: int) -> None:
        self.seed = int(seed)

    def sequence(self, component: str, task: int = None, purpose: str = None) -> np.random.SeedSequence:
        spawn_key = [_key(component)]
        if task is not None:
            spawn_key.append(1 + int(task))
        if purpose is not None:
            spawn_key.append(_key(purpose))
        return np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(spawn_key))

    def seed_for(self, component: str, task: int = None, purpose: str = None) -> int:
        return int(self.sequence(component, task, purpose).generate_state(1, dtype=np.uint64)[0]) >> 1

    def generator(self, component: str, task: int = None, purpose: str = None) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(self.seed_for(component, task, purpose))
        return g

    def numpy(self, component: str, task: int = None, purpose: str = None) -> np.random.Generator:
        return np.random.default_rng(self.sequence(component, task, purpose))
