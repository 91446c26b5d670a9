"""Counter-based random streams.

Every draw is a pure function of ``(seed, sample, particle, step, purpose)``,
computed with the Philox4x32-10 block cipher over numpy ``uint64`` arrays.
Because nothing is sequential, any subset of samples can be generated on its
own and the result does not depend on how work is split between workers.
"""

from __future__ import annotations

import numpy as np

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_SHIFT32 = np.uint64(32)

# purpose tags, kept < 2**8
ALD_NOISE = 1
MALA_NOISE = 2
MALA_ACCEPT = 3
RESAMPLE = 4
INIT_X = 5
INIT_Y = 6
BASELINE_NOISE = 7
BASELINE_ACCEPT = 8
BASELINE_RESAMPLE = 9
BASELINE_INIT = 10


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function, vectorised over the trailing counter shape.

    Parameters
    ----------
    counter : sequence of 4 integer arrays
        The four 32-bit counter words; broadcast against each other.
    key : tuple of 2 ints
        The two 32-bit key words.
    rounds : int
        Number of rounds (10 is the standard, Crush-resistant choice).

    Returns
    -------
    tuple of 4 uint64 arrays holding 32-bit output words.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*[np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter])
    k0 = int(key[0]) & 0xFFFFFFFF
    k1 = int(key[1]) & 0xFFFFFFFF
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & 0xFFFFFFFF
            k1 = (k1 + _W1) & 0xFFFFFFFF
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ np.uint64(k0),
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ np.uint64(k1),
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53-bit uniform strictly inside (0, 1)
    bits = ((hi >> np.uint64(5)) << np.uint64(26)) | (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


class CounterRNG:
    """Deterministic random substreams keyed by (sample, particle, step).

    ``samples`` and ``particles`` arguments are the *global* indices of the
    rows being generated, so a worker handling samples 512..1023 draws exactly
    what a single worker would have drawn for those rows.
    """

    def __init__(self, seed):
        seed = int(seed)
        if seed < 0 or seed >= 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = seed
        self._key = (seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF)

    def _blocks(self, purpose, step, samples, particles, n_blocks, sub=0):
        samples = np.asarray(samples, dtype=np.uint64)
        particles = np.asarray(particles, dtype=np.uint64)
        if (sub + 1) * n_blocks > 2**24:
            raise ValueError("too many blocks per stream")
        blocks = np.arange(sub * n_blocks, (sub + 1) * n_blocks, dtype=np.uint64)
        word3 = (np.uint64(purpose) << np.uint64(24)) | blocks
        c0 = samples[:, None, None]
        c1 = particles[None, :, None]
        c2 = np.uint64(step)
        c3 = word3[None, None, :]
        return philox4x32((c0, c1, c2, c3), self._key)

    def uniform(self, purpose, step, samples, particles=(0,), sub=0):
        """Uniforms in (0, 1) with shape ``(len(samples), len(particles))``.

        ``sub`` selects an independent sub-stream, e.g. the index of an inner MCMC step.
        """
        w0, w1, _, _ = self._blocks(purpose, step, samples, particles, 1, sub)
        return _to_unit(w0[..., 0], w1[..., 0])

    def normal(self, purpose, step, samples, particles=(0,), dim=1, sub=0):
        """Standard normals with shape ``(len(samples), len(particles), dim)``.

        Uses the Box-Muller transform, two normals per Philox block.
        """
        n_blocks = (dim + 1) // 2
        w0, w1, w2, w3 = self._blocks(purpose, step, samples, particles, n_blocks, sub)
        u1 = _to_unit(w0, w1)
        u2 = _to_unit(w2, w3)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)
        z = z.reshape(z.shape[0], z.shape[1], 2 * n_blocks)
        return z[..., :dim]

    def generator(self, purpose, step=0):
        """A numpy Generator seeded from this stream, for bulk non-particle draws."""
        w = philox4x32((0, 0, step, np.uint64(purpose) << np.uint64(24)), self._key)
        entropy = [int(v) for v in w]
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([self.seed, *entropy])))
