"""Seeded xoshiro256** generator with SplitMix64 seeding.

Kept in pure Python so learned arrangement files are reproducible bit for
bit on any platform:

* state words s0..s3 are four consecutive SplitMix64 outputs starting from
  the 64-bit seed;
* ``next_u64`` is xoshiro256** (rotl(s1 * 5, 7) * 9, then the xorshift
  state update with shift 17 and rotation 45);
* ``below(n)`` rejects draws >= n * floor(2**64 / n) and returns draw % n.
"""

from __future__ import annotations

MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step; returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK


class Xoshiro256:
    def __init__(self, seed: int):
        sm = seed & MASK
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK, 7) * 9) & MASK
        t = (s[1] << 17) & MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, n: int) -> int:
        """Uniform integer in [0, n)."""
        if n < 1:
            raise ValueError("n must be >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] inclusive."""
        return lo + self.below(hi - lo + 1)

    def sample(self, population: int, count: int) -> list[int]:
        """`count` distinct indices from range(population), via partial Fisher-Yates."""
        if not 0 <= count <= population:
            raise ValueError(f"cannot draw {count} of {population}")
        perm = list(range(population))
        for i in range(count):
            j = i + self.below(population - i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm[:count]
