"""Derivation of per-purpose seeds from one master seed.

``derive_seed(master, purpose, *extra)`` feeds ``[master, code(purpose),
*extra]`` to :class:`numpy.random.SeedSequence` and takes its first 32-bit
word. Purposes: ``init`` (weight init, extra = fold), ``shuffle``
(minibatch order), ``folds`` (subject splits, extra = fold), ``synth``
(synthetic data noise).
"""
import numpy as np

PURPOSES = {"init": 1, "shuffle": 2, "folds": 3, "synth": 4}


def derive_seed(master, purpose, *extra):
    entropy = [int(master), PURPOSES[purpose], *(int(e) for e in extra)]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def derive_rng(master, purpose, *extra):
    return np.random.default_rng(derive_seed(master, purpose, *extra))
