import numbers

import numpy as np


def check_generator(random_state=None) -> np.random.Generator:
    """Turn ``None``, an int seed or a Generator into a ``np.random.Generator``.

    Mirrors :func:`sklearn.utils.check_random_state` but yields the PCG64-based
    Generator, whose streams are identical across platforms for a given seed.
    """
    if random_state is None:
        return np.random.default_rng()
    if isinstance(random_state, np.random.Generator):
        return random_state
    if isinstance(random_state, numbers.Integral):
        return np.random.default_rng(int(random_state))
    if isinstance(random_state, np.random.RandomState):
        return np.random.default_rng(random_state.randint(np.iinfo(np.int32).max))
    raise ValueError(f"{random_state!r} cannot be used to seed a numpy Generator")


def derive_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed for a child stream."""
    return int(rng.integers(0, 2**63 - 1))
