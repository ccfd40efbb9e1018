import numpy as np
import pytest

from manyserver.policies import Available, P1Pool, P2Pool, RandomPool, make_pool, p1_choose, p2_choose


def test_p1_longest_idle():
    assert p1_choose([Available(3, 0.2), Available(7, 0.1)]) == 7


def test_p1_tie_breaks_to_min_index():
    assert p1_choose([Available(5, 0.0), Available(2, 0.0)]) == 2


def test_p1_singleton():
    assert p1_choose([Available(4, 1.7)]) == 4


@pytest.mark.parametrize("avail, expect", [({2, 5, 9}, 9), ({4}, 4), ({1, 250}, 250)])
def test_p2_max_label(avail, expect):
    assert p2_choose(sorted(avail)) == expect
    assert p2_choose([Available(k, 0.0) for k in avail]) == expect


def test_empty_available_set_rejected():
    with pytest.raises(ValueError):
        p1_choose([])
    with pytest.raises(ValueError):
        p2_choose([])
    with pytest.raises(IndexError):
        P1Pool().pop()


def test_p1_pool_fifo():
    pool = P1Pool()
    pool.push(3, 0.1)
    pool.push(7, 0.2)
    assert pool.pop() == 3


def test_p1_pool_initial_index_order():
    pool = P1Pool()
    for k in (0, 2, 5, 9):
        pool.push(k, 0.0)
    assert [pool.pop() for _ in range(4)] == [0, 2, 5, 9]


def test_p1_pool_rejects_out_of_order_push():
    pool = P1Pool()
    pool.push(1, 0.5)
    with pytest.raises(ValueError):
        pool.push(2, 0.4)


def _random_ops(pool, choose, n_servers, n_ops, seed):
    rng = np.random.default_rng(seed)
    idle = {k: 0.0 for k in range(0, n_servers, 3)}
    for k in sorted(idle):
        pool.push(k, 0.0)
    t = 0.0
    for _ in range(n_ops):
        busy = [k for k in range(n_servers) if k not in idle]
        if idle and (not busy or rng.random() < 0.5):
            expect = choose([Available(k, h) for k, h in idle.items()])
            got = pool.pop()
            assert got == expect
            del idle[got]
        else:
            t += float(rng.exponential())
            k = busy[int(rng.integers(len(busy)))]
            idle[k] = t
            pool.push(k, t)


def test_p1_pool_matches_brute_force():
    _random_ops(P1Pool(), p1_choose, 40, 100_000, seed=1)


def test_p2_pool_matches_brute_force():
    _random_ops(P2Pool(), lambda av: p2_choose(av), 40, 100_000, seed=2)


def test_random_pool_uniform():
    rng = np.random.default_rng(4)
    hits = np.zeros(5)
    for _ in range(20_000):
        pool = RandomPool(rng)
        for k in range(5):
            pool.push(k, 0.0)
        hits[pool.pop()] += 1
    assert np.all(np.abs(hits / 20_000 - 0.2) < 0.015)


def test_make_pool():
    assert isinstance(make_pool("p1"), P1Pool)
    assert isinstance(make_pool("p2"), P2Pool)
    assert isinstance(make_pool("random", np.random.default_rng(0)), RandomPool)
    with pytest.raises(ValueError):
        make_pool("jsq")
