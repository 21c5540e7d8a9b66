import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from queuegame.rng import ARRIVAL, SERVE, DrawSource, substream


def test_substreams_are_distinct():
    a = substream(0, 0, ARRIVAL, 0).random(5)
    b = substream(0, 0, ARRIVAL, 1).random(5)
    c = substream(0, 1, ARRIVAL, 0).random(5)
    d = substream(0, 0, SERVE, 0).random(5)
    assert len({tuple(x) for x in (a, b, c, d)}) == 4


@given(seed=st.integers(0, 2**64 - 1), rep=st.integers(0, 1000))
def test_substream_reproducible(seed, rep):
    assert np.array_equal(substream(seed, rep, ARRIVAL, 2).random(3), substream(seed, rep, ARRIVAL, 2).random(3))


def test_blocks_concatenate_like_one_draw():
    whole = DrawSource(5, 2, 3, 2).block(100)
    src = DrawSource(5, 2, 3, 2)
    parts = [src.block(40), src.block(60)]
    for k in range(4):
        assert np.array_equal(whole[k], np.vstack([parts[0][k], parts[1][k]]))


def test_replications_independent_of_others():
    # replication 3's stream does not depend on whether replication 2 was drawn
    DrawSource(9, 2, 2, 2).block(50)
    assert np.array_equal(DrawSource(9, 3, 2, 2).block(10)[0], DrawSource(9, 3, 2, 2).block(10)[0])
