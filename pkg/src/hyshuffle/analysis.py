"""Closed-form structure and skew model of classic versus hybrid exchange.

Classic exchange treats every worker of every server as a parallel unit, so
the partition count is ``n * t``; hybrid parallelism partitions between
servers only, so it is ``n``. The skew model sums finite-domain Zipf mass of
each key into the partition chosen by the engine's own hash function.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from hyshuffle.exchange import CRC32C_TABLE, crc32_hash, partition_for

KEY_DOMAINS = (10_000, 30_000, 100_000, 300_000, 1_000_000, 3_000_000, 10_000_000)
DEFAULT_ZIPF_Z = 0.84

CSV_FIELDS = ("model", "n", "t", "partitions", "connections", "buffers", "threshold", "zipf_z", "key_domain", "overload_factor")


class ModelKind(str, Enum):
    CLASSIC = "classic_exchange"
    HYBRID = "hybrid"


@dataclass(frozen=True)
class ParallelModel:
    kind: ModelKind
    n: int
    t: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ModelKind(self.kind))
        if self.n < 1 or self.t < 1:
            raise ValueError("n and t must both be >= 1")

    @property
    def partitions(self) -> int:
        """Parallel units that each receive one partition."""
        return self.n * self.t if self.kind is ModelKind.CLASSIC else self.n


def connection_count(model: ParallelModel) -> int:
    if model.kind is ModelKind.CLASSIC:
        # every unit talks to every unit except the local units of its own instance
        return model.n**2 * model.t**2 - model.t
    return model.n * (model.n - 1)


def buffers_per_operator(model: ParallelModel) -> int:
    return model.partitions - 1


def broadcast_threshold(model: ParallelModel) -> int:
    """Input-size ratio above which broadcasting the small side beats partitioning both."""
    return model.partitions - 1


# ---------------------------------------------------------------------------
# Zipf partition load
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SkewSpec:
    zipf_z: float
    key_domain: int
    partitions: int
    tuples: int | None = None

    def __post_init__(self) -> None:
        if self.zipf_z < 0:
            raise ValueError("zipf_z must be >= 0")
        if self.key_domain < 1 or self.partitions < 1:
            raise ValueError("key_domain and partitions must be >= 1")
        if self.tuples is not None and self.tuples < 0:
            raise ValueError("tuples must be >= 0")

    @property
    def sparse_domain(self) -> bool:
        """Fewer keys than partitions: some partitions are necessarily empty."""
        return self.key_domain < self.partitions


@dataclass(frozen=True)
class LoadReport:
    spec: SkewSpec
    shares: tuple[float, ...]
    max_partition_share: float
    overload_factor: float
    max_partition_tuples: float | None
    sparse_domain: bool


def _int64_key_bytes(keys: np.ndarray) -> np.ndarray:
    return keys.astype("<i8").view(np.uint8).reshape(-1, 8)


def crc32_int64_keys(keys: np.ndarray) -> np.ndarray:
    """Vectorized CRC32-C of each key's 8-byte little-endian encoding."""
    table = np.asarray(CRC32C_TABLE, dtype=np.uint32)
    data = _int64_key_bytes(np.asarray(keys))
    crc = np.full(len(data), 0xFFFFFFFF, dtype=np.uint32)
    for i in range(8):
        crc = table[(crc ^ data[:, i]) & 0xFF] ^ (crc >> np.uint32(8))
    return crc ^ np.uint32(0xFFFFFFFF)


def scalar_int64_hash(key: int) -> int:
    """The engine's partitioning hash of an int64 key."""
    return crc32_hash(struct.pack("<q", key))


def zipf_weights(z: float, domain: int) -> np.ndarray:
    """Normalized probability of keys 1..domain under p(k) proportional to 1/k^z."""
    k = np.arange(1, domain + 1, dtype=np.float64)
    w = k ** -z
    return w / w.sum()


def zipf_partition_load(spec: SkewSpec, hash_fn: Callable[[int], int] | None = None) -> LoadReport:
    """Exact expected tuple share per partition when keys 1..key_domain are Zipf-distributed.

    ``hash_fn`` maps an integer key to its 32-bit hash; by default it is the
    engine's CRC32-C over the int64 encoding, computed vectorized.
    """
    weights = zipf_weights(spec.zipf_z, spec.key_domain)
    keys = np.arange(1, spec.key_domain + 1, dtype=np.int64)
    if hash_fn is None:
        hashes = crc32_int64_keys(keys).astype(np.int64)
    else:
        hashes = np.fromiter((hash_fn(int(k)) for k in keys), dtype=np.int64, count=len(keys))
    parts = hashes % spec.partitions
    shares = np.bincount(parts, weights=weights, minlength=spec.partitions)
    max_share = float(shares.max())
    return LoadReport(
        spec=spec,
        shares=tuple(float(s) for s in shares),
        max_partition_share=max_share,
        overload_factor=max_share * spec.partitions,
        max_partition_tuples=None if spec.tuples is None else max_share * spec.tuples,
        sparse_domain=spec.sparse_domain,
    )


def zipf_partition_load_scalar(spec: SkewSpec) -> LoadReport:
    """Pure-Python reference of :func:`zipf_partition_load`; slow, for cross-checks."""
    norm = math.fsum(k ** -spec.zipf_z for k in range(1, spec.key_domain + 1))
    shares = [0.0] * spec.partitions
    for k in range(1, spec.key_domain + 1):
        shares[partition_for(scalar_int64_hash(k), spec.partitions)] += k ** -spec.zipf_z / norm
    m = max(shares)
    return LoadReport(spec, tuple(shares), m, m * spec.partitions,
                      None if spec.tuples is None else m * spec.tuples, spec.sparse_domain)


def domain_sensitivity(z: float, partitions: int, domains: Iterable[int] = KEY_DOMAINS) -> list[tuple[int, float]]:
    """Overload factor as a function of the key domain size."""
    return [(d, zipf_partition_load(SkewSpec(z, d, partitions)).overload_factor) for d in domains]


# ---------------------------------------------------------------------------
# tabulation
# ---------------------------------------------------------------------------


def model_row(model: ParallelModel, zipf_z: float | None = None, key_domain: int | None = None) -> dict:
    overload = ""
    if zipf_z is not None and key_domain is not None:
        overload = f"{zipf_partition_load(SkewSpec(zipf_z, key_domain, model.partitions)).overload_factor:.6f}"
    return {
        "model": model.kind.value,
        "n": model.n,
        "t": model.t,
        "partitions": model.partitions,
        "connections": connection_count(model),
        "buffers": buffers_per_operator(model),
        "threshold": broadcast_threshold(model),
        "zipf_z": "" if zipf_z is None else zipf_z,
        "key_domain": "" if key_domain is None else key_domain,
        "overload_factor": overload,
    }


def analysis_rows(
    n_values: Sequence[int],
    t_values: Sequence[int],
    zipf_values: Sequence[float] = (DEFAULT_ZIPF_Z,),
    key_domains: Sequence[int] = (1_000_000,),
) -> list[dict]:
    rows = []
    for n in n_values:
        for t in t_values:
            for kind in ModelKind:
                model = ParallelModel(kind, n, t)
                for z in zipf_values:
                    for d in key_domains:
                        rows.append(model_row(model, z, d))
    return rows
