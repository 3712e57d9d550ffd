"""Counter-based random streams, one per (master seed, run index, purpose)."""
import numpy as np

EVENTS, CENTERS, CONFIG, OFFSET = 0, 1, 2, 3


def stream(seed, run_index=0, purpose=EVENTS) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(run_index), int(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed, *keys) -> int:
    """A 63-bit integer seed derived deterministically from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64)) >> 1
