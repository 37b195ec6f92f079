import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyshuffle.analysis import (
    KEY_DOMAINS,
    ModelKind,
    ParallelModel,
    SkewSpec,
    analysis_rows,
    broadcast_threshold,
    buffers_per_operator,
    connection_count,
    crc32_int64_keys,
    domain_sensitivity,
    scalar_int64_hash,
    zipf_partition_load,
    zipf_partition_load_scalar,
)
from hyshuffle.exchange import crc32_hash

CLASSIC, HYBRID = ModelKind.CLASSIC, ModelKind.HYBRID


def test_structural_examples():
    c, h = ParallelModel(CLASSIC, 6, 40), ParallelModel(HYBRID, 6, 40)
    assert (connection_count(c), buffers_per_operator(c), broadcast_threshold(c)) == (57_560, 239, 239)
    assert (connection_count(h), buffers_per_operator(h), broadcast_threshold(h)) == (30, 5, 5)
    for kind in ModelKind:
        m = ParallelModel(kind, 1, 1)
        assert connection_count(m) == buffers_per_operator(m) == broadcast_threshold(m) == 0
        assert broadcast_threshold(ParallelModel(kind, 2, 1)) == 1


def test_model_validation():
    with pytest.raises(ValueError):
        ParallelModel(HYBRID, 0, 1)
    with pytest.raises(ValueError):
        ParallelModel("nope", 1, 1)
    with pytest.raises(ValueError):
        SkewSpec(-1, 10, 2)
    assert SkewSpec(0.5, 3, 6).sparse_domain


@given(st.integers(1, 200), st.integers(1, 200))
def test_hybrid_never_needs_more(n, t):
    c, h = ParallelModel(CLASSIC, n, t), ParallelModel(HYBRID, n, t)
    assert connection_count(h) <= connection_count(c)
    assert buffers_per_operator(h) <= buffers_per_operator(c)
    if t >= 2 and n >= 2:
        assert connection_count(h) < connection_count(c)
        assert buffers_per_operator(h) < buffers_per_operator(c)


def test_vectorized_hash_matches_engine_hash():
    keys = np.array([0, 1, -1, 2**63 - 1, -(2**63), 123456789], dtype=np.int64)
    expect = [crc32_hash(struct.pack("<q", int(k))) for k in keys]
    assert list(crc32_int64_keys(keys)) == expect == [scalar_int64_hash(int(k)) for k in keys]


@settings(max_examples=15)
@given(st.floats(0, 1.5), st.integers(1, 3000), st.integers(1, 50))
def test_vectorized_load_matches_scalar_reference(z, domain, partitions):
    spec = SkewSpec(z, domain, partitions)
    fast, slow = zipf_partition_load(spec), zipf_partition_load_scalar(spec)
    assert fast.overload_factor == pytest.approx(slow.overload_factor, rel=1e-9)
    assert sum(fast.shares) == pytest.approx(1.0)


def test_custom_hash_function():
    r = zipf_partition_load(SkewSpec(1.0, 100, 2), hash_fn=lambda k: 0)
    assert r.shares == (1.0, 0.0) and r.overload_factor == 2.0


def test_uniform_limit():
    r = zipf_partition_load(SkewSpec(0.0, 100_000, 6, tuples=600_000))
    assert 1.0 <= r.overload_factor < 1.03
    assert r.max_partition_tuples == pytest.approx(r.max_partition_share * 600_000)


def test_overload_grows_with_partitions():
    grid = [1, 2, 4, 6, 12, 24, 48, 96, 240, 480]
    for z in (0.4, 0.84, 1.2):
        f = [zipf_partition_load(SkewSpec(z, 100_000, p)).overload_factor for p in grid]
        assert f == sorted(f)


def test_overload_grows_with_skew():
    f = [zipf_partition_load(SkewSpec(z, 1_000_000, 240)).overload_factor for z in (0, 0.4, 0.84, 1.2)]
    assert f == sorted(f)


def test_sensitivity_curve_shape():
    curve = domain_sensitivity(0.84, 240, KEY_DOMAINS[:4])
    assert [d for d, _ in curve] == list(KEY_DOMAINS[:4])
    assert all(f > 2 for _, f in curve)
    six = dict(domain_sensitivity(0.84, 6, (10_000, 100_000)))
    assert six[10_000] == pytest.approx(1.1405, abs=1e-3) and six[100_000] == pytest.approx(1.0912, abs=1e-3)


def test_analysis_rows_are_self_describing():
    rows = analysis_rows([6], [40], [0.84], [10_000])
    assert {r["model"] for r in rows} == {"classic_exchange", "hybrid"}
    assert all({"n", "t", "connections", "buffers", "threshold", "overload_factor"} <= r.keys() for r in rows)
