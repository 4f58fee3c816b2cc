"""Seeded 64-bit linear congruential generator.

The recurrence is fixed so that any implementation reproduces the same
stream from the same seed::

    state <- (6364136223846793005 * state + 1442695040888963407) mod 2**64
    uniform = (state >> 11) * 2**-53            # in [0, 1)

The initial state is ``seed mod 2**64`` and each draw advances the state
once before reading it. Normal deviates use Box-Muller on consecutive
uniform pairs (u1, u2): ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``; the sine
branch is discarded so that one normal always consumes two uniforms.
"""

import numpy as np

MULTIPLIER = 6364136223846793005
INCREMENT = 1442695040888963407
MASK = (1 << 64) - 1


class Lcg64:
    """Minimal reproducible generator; see the module docstring for the recurrence."""

    def __init__(self, seed=0):
        self.state = int(seed) & MASK

    def next_u64(self):
        self.state = (MULTIPLIER * self.state + INCREMENT) & MASK
        return self.state

    def random(self, size=None):
        if size is None:
            return (self.next_u64() >> 11) * 2.0**-53
        n = int(np.prod(size))
        out = np.empty(n)
        for k in range(n):
            out[k] = (self.next_u64() >> 11) * 2.0**-53
        return out.reshape(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return low + (high - low) * self.random(size)

    def normal(self, size=None):
        n = 1 if size is None else int(np.prod(size))
        u = self.random(2 * n).reshape(n, 2)
        z = np.sqrt(-2.0 * np.log1p(-u[:, 0])) * np.cos(2.0 * np.pi * u[:, 1])
        return float(z[0]) if size is None else z.reshape(size)

    def spawn(self, tag):
        """Independent child stream derived from the current state and a tag."""
        return Lcg64((self.state ^ (int(tag) * 0x9E3779B97F4A7C15)) & MASK)
