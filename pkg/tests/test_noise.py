import numpy as np
import pytest

from services.noise import NoiseBatch, NoiseField, batch_bits, derive_seed, make_rng, replica_fields


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(7, "graph", 10) == derive_seed(7, "graph", 10)
    assert derive_seed(7, "graph", 10) != derive_seed(7, "graph", 11)
    assert derive_seed(7, "graph") != derive_seed(7, "noise")
    assert derive_seed(7, "graph") != derive_seed(8, "graph")
    assert 0 <= derive_seed(123, "x") < 2**64


def test_negative_label_rejected():
    with pytest.raises(ValueError):
        derive_seed(0, -1)


def test_make_rng_reproducible():
    a = make_rng(3, "sets").integers(0, 1000, size=10)
    b = make_rng(3, "sets").integers(0, 1000, size=10)
    assert np.array_equal(a, b)


def test_bits_are_pure_functions_of_time_and_vertex():
    field = NoiseField(q=0.5, seed=11)
    col = field.column(5, 50)
    assert np.array_equal(col, field.column(5, 50))
    picked = field.bits(5, [3, 17, 42])
    assert np.array_equal(picked, col[[3, 17, 42]])
    assert field.bit(5, 17) == bool(col[17])


def test_frequency_close_to_q():
    field = NoiseField(q=0.3, seed=1)
    freq = np.mean([field.column(t, 1000).mean() for t in range(1, 21)])
    assert freq == pytest.approx(0.3, abs=0.02)


def test_streams_and_replicas_differ():
    base = NoiseField(q=0.5, seed=4)
    assert not np.array_equal(base.column(1, 256), base.for_stream("dual").column(1, 256))
    assert not np.array_equal(base.column(1, 256), NoiseField(q=0.5, seed=4, replica=1).column(1, 256))


def test_reversed_column_reads_horizon_minus_t():
    field = NoiseField(q=0.5, seed=9)
    assert np.array_equal(field.reversed_column(10, 3, 40), field.column(7, 40))


def test_with_q_is_monotone():
    low = NoiseField(q=0.3, seed=2)
    high = low.with_q(0.7)
    for t in range(1, 6):
        lo, hi = low.column(t, 500), high.column(t, 500)
        assert not (lo & ~hi).any()


def test_extreme_q():
    assert not NoiseField(q=0.0, seed=1).column(1, 100).any()
    assert NoiseField(q=1.0, seed=1).column(1, 100).all()
    with pytest.raises(ValueError):
        NoiseField(q=1.5, seed=1)


def test_time_index_out_of_range():
    with pytest.raises(ValueError):
        NoiseField(q=0.5, seed=1).column(-1, 4)


def test_batch_matches_individual_fields():
    fields = replica_fields(0.6, 5, range(4))
    batch = NoiseBatch(fields)
    assert len(batch) == 4
    rows = batch.bits(3, 30)
    for i, f in enumerate(fields):
        assert np.array_equal(rows[i], f.column(3, 30))
    subset = batch.bits(3, 30, np.array([1, 3]))
    assert np.array_equal(subset, rows[[1, 3]])
    assert np.array_equal(batch_bits(fields, 3, 30), rows)


def test_batch_rejects_mixed_q():
    with pytest.raises(ValueError):
        NoiseBatch([NoiseField(q=0.5, seed=1), NoiseField(q=0.6, seed=1)])
    assert batch_bits([], 1, 5).shape == (0, 5)
