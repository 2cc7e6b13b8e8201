"""Named random streams derived from one top-level seed.

A stream is addressed by ``(seed, tag, index)`` so a tree, a little-bags group
or a Monte Carlo replicate draws the same numbers whether it runs serially or
in a worker process.
"""
import numpy as np

TREE = 1
GROUP = 2
REP = 3
DGP = 4
BOOTSTRAP = 5
NUISANCE_OUTCOME = 6
NUISANCE_TREATMENT = 7
GROWTH = 8


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(index)))
    return np.random.default_rng(sequence)


def child_seed(seed: int, tag: int, index: int = 0) -> int:
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(tag), int(index)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
