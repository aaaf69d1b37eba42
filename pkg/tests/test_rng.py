import numpy as np

from pager.rng import STAGE_CORE, child_rng, child_rngs, hash64, splitmix64

GAMMA = 0x9E3779B97F4A7C15


def test_splitmix64_reference_outputs():
    # published SplitMix64 stream for state 1234567: state advances by GAMMA per output
    assert splitmix64(1234567) == 6457827717110365317
    assert splitmix64((1234567 + GAMMA) & (2 ** 64 - 1)) == 3203168211198807973
    assert splitmix64(0) == 0xE220A8397B1DCDAF


def test_hash64_composition():
    h = splitmix64(splitmix64(splitmix64(7) ^ 3) ^ 11)
    assert hash64(7, 3, 11) == h


def test_child_streams_independent_of_batching():
    whole = [g.random() for g in child_rngs(5, STAGE_CORE, 10)]
    parts = [g.random() for g in child_rngs(5, STAGE_CORE, 4)] + \
            [g.random() for g in child_rngs(5, STAGE_CORE, 6, start=4)]
    assert whole == parts
    assert child_rng(5, STAGE_CORE, 9).random() == whole[9]


def test_distinct_streams():
    seeds = {hash64(0, s, i) for s in range(4) for i in range(1000)}
    assert len(seeds) == 4000
    assert child_rng(0, 1, 0).random() != child_rng(1, 1, 0).random()
