"""Per-episode random streams.

Every stream is an MT19937 (``random.Random``) seeded with a 64-bit value
obtained by folding ``(master_seed, episode, stream)`` through the
SplitMix64 finalizer:

    h = mix(master_seed)
    h = mix(h ^ episode)
    h = mix(h ^ stream)

so episode ``i`` draws the same numbers no matter which worker runs it or
in which order episodes complete.
"""

from __future__ import annotations

import random

MASK64 = (1 << 64) - 1

ENGINE_STREAM = 0
POLICY_STREAM = 1


def mix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_seed(master_seed: int, episode: int, stream: int = ENGINE_STREAM) -> int:
    h = mix64(master_seed & MASK64)
    h = mix64(h ^ (episode & MASK64))
    return mix64(h ^ (stream & MASK64))


def stream(master_seed: int, episode: int, stream: int = ENGINE_STREAM) -> random.Random:
    return random.Random(derive_seed(master_seed, episode, stream))
