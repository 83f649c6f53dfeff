import numpy as np

from rgbp.prng import SplitMix64, splitmix64_scalar


def test_reference_sequence():
    # published SplitMix64 outputs for seed 0
    s, out = 0, []
    for _ in range(3):
        s, o = splitmix64_scalar(s)
        out.append(o)
    assert out == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]
    assert [int(v) for v in SplitMix64(0).next_u64(3)] == out


def test_stream_continues_across_calls():
    a = SplitMix64(5)
    first = np.concatenate([a.next_u64(2), a.next_u64(3)])
    assert np.array_equal(first, SplitMix64(5).next_u64(5))


def test_distributions():
    r = SplitMix64(1)
    u = r.uniform(200000, 2.0, 3.0)
    assert u.min() >= 2.0 and u.max() < 3.0 and abs(u.mean() - 2.5) < 0.005
    n = r.normal(20000)
    assert abs(n.mean()) < 0.03 and abs(n.std() - 1) < 0.03
    k = r.integers(5000, 3, 7)
    assert set(np.unique(k)) == {3, 4, 5, 6}


def test_fork_is_deterministic_and_distinct():
    a, b = SplitMix64(9).fork(1), SplitMix64(9).fork(1)
    assert np.array_equal(a.next_u64(4), b.next_u64(4))
    assert not np.array_equal(SplitMix64(9).fork(1).next_u64(4), SplitMix64(9).fork(2).next_u64(4))
