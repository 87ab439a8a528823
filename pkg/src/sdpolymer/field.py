"""Seeded, site-addressed disorder realizations on finite slabs.

Each site value is a deterministic function of (master_seed, replica_id, site):
the splitmix64 finalizer is chained over the seed, the replica id and every
coordinate (two's-complement 64-bit), the top 53 bits give a uniform in [0, 1),
and the law's inverse CDF maps it to omega. Enlarging a region therefore never
changes the value at an existing site.

Binary file layout (little-endian)::

    magic      4s   b"SDPF"
    version    u16
    d          u16
    level_min  i64
    level_max  i64
    radius     i64
    seed       u64
    replica    i64
    spec_len   u32, then spec_len bytes of UTF-8 JSON describing the law
    payload    float64[n_sites], C order over (level, t_2, ..., t_d)
    checksum   32 bytes, SHA-256 of everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import DisorderSpec, DomainError, Site

FORMAT_VERSION = 1
MAGIC = b"SDPF"
DEFAULT_MEMORY_BUDGET = 2 * 1024**3

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


class CapacityError(MemoryError):
    def __init__(self, required_bytes: int, budget: int):
        super().__init__(f"field needs {required_bytes} bytes, budget is {budget}")
        self.required_bytes = required_bytes
        self.budget = budget


class FieldFormatError(ValueError):
    pass


class ChecksumError(FieldFormatError):
    pass


class FormatVersionError(FieldFormatError):
    pass


def _splitmix(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def site_uniforms(master_seed: int, replica_id: int, coords: np.ndarray) -> np.ndarray:
    """Uniforms in [0, 1) for an (n, d) array of integer site coordinates."""
    coords = np.asarray(coords, dtype=np.int64)
    h = _splitmix(np.full(coords.shape[0], np.uint64(master_seed % 2**64)))
    h = _splitmix(h ^ np.uint64(replica_id % 2**64))
    for j in range(coords.shape[1]):
        h = _splitmix(h ^ coords[:, j].view(np.uint64))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


@dataclass(frozen=True)
class FieldRegion:
    """Levels ``level_min..level_max`` along e_1 times the sup-norm ball of radius ``radius``
    in the d-1 transverse coordinates."""

    d: int
    level_min: int
    level_max: int
    radius: int = 1

    def __post_init__(self) -> None:
        if self.d < 1:
            raise DomainError("d must be >= 1")
        if self.level_min > self.level_max:
            raise DomainError("level_min must not exceed level_max")
        if self.radius < 1:
            raise DomainError("transverse radius must be >= 1")

    @property
    def n_levels(self) -> int:
        return self.level_max - self.level_min + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_levels,) + (2 * self.radius + 1,) * (self.d - 1)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.shape))

    def covers(self, other: "FieldRegion") -> bool:
        return (
            self.d == other.d
            and self.level_min <= other.level_min
            and self.level_max >= other.level_max
            and (self.d == 1 or self.radius >= other.radius)
        )

    def coordinates(self) -> np.ndarray:
        """All sites as an (n_sites, d) int64 array in storage order."""
        axes = [np.arange(self.level_min, self.level_max + 1)]
        axes += [np.arange(-self.radius, self.radius + 1)] * (self.d - 1)
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    def index(self, site: Site) -> tuple[int, ...]:
        lvl = site[0] - self.level_min
        rest = tuple(t + self.radius for t in site[1:])
        if not 0 <= lvl < self.n_levels or any(not 0 <= r <= 2 * self.radius for r in rest):
            raise KeyError(site)
        return (lvl,) + rest


@dataclass(frozen=True, eq=False)
class DisorderField:
    region: FieldRegion
    values: np.ndarray
    spec: DisorderSpec
    master_seed: int
    replica_id: int

    def __post_init__(self) -> None:
        self.values.setflags(write=False)

    def __getitem__(self, site: Site) -> float:
        return float(self.values[self.region.index(tuple(site))])

    def centered(self, site: Site) -> float:
        return self[site] - self.spec.mean

    def centered_values(self) -> np.ndarray:
        return self.values - self.spec.mean

    def window(self, region: FieldRegion) -> np.ndarray:
        """Values restricted to a sub-region, as a dense array of ``region.shape``."""
        if not self.region.covers(region):
            raise DomainError(f"field region {self.region} does not cover {region}")
        lo = region.level_min - self.region.level_min
        sl = [slice(lo, lo + region.n_levels)]
        off = self.region.radius - region.radius
        sl += [slice(off, off + 2 * region.radius + 1)] * (region.d - 1)
        return self.values[tuple(sl)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DisorderField):
            return NotImplemented
        return (
            self.region == other.region
            and self.spec == other.spec
            and self.master_seed == other.master_seed
            and self.replica_id == other.replica_id
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None  # type: ignore[assignment]


def sample_field(
    spec: DisorderSpec,
    region: FieldRegion,
    master_seed: int,
    replica_id: int = 0,
    memory_budget: int = DEFAULT_MEMORY_BUDGET,
) -> DisorderField:
    # coordinates (d int64) + uniforms + values per site
    required = region.n_sites * 8 * (region.d + 3)
    if required > memory_budget:
        raise CapacityError(required, memory_budget)
    u = site_uniforms(master_seed, replica_id, region.coordinates())
    values = np.ascontiguousarray(spec.quantile(u).reshape(region.shape), dtype=np.float64)
    return DisorderField(region, values, spec, int(master_seed), int(replica_id))


_HEADER = struct.Struct("<4sHHqqqQq")


def _spec_bytes(spec: DisorderSpec) -> bytes:
    desc = spec.describe()
    if spec.allow_degenerate:
        desc["allow_degenerate"] = True
    return json.dumps(desc, sort_keys=True).encode()


def save_field(field: DisorderField, path: str | Path) -> None:
    r = field.region
    spec_b = _spec_bytes(field.spec)
    body = (
        _HEADER.pack(MAGIC, FORMAT_VERSION, r.d, r.level_min, r.level_max, r.radius,
                     field.master_seed % 2**64, field.replica_id)
        + struct.pack("<I", len(spec_b))
        + spec_b
        + field.values.astype("<f8").tobytes(order="C")
    )
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_field(path: str | Path) -> DisorderField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4 + 32 or raw[:4] != MAGIC:
        raise FieldFormatError(f"{path} is not a disorder field file")
    magic, version, d, lmin, lmax, radius, seed, replica = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise FormatVersionError(f"file format version {version}, this reader handles {FORMAT_VERSION}")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"checksum mismatch in {path}")
    off = _HEADER.size
    (slen,) = struct.unpack_from("<I", raw, off)
    off += 4
    spec = DisorderSpec.from_description(json.loads(raw[off:off + slen].decode()))
    off += slen
    region = FieldRegion(d, lmin, lmax, radius)
    values = np.frombuffer(body, dtype="<f8", count=region.n_sites, offset=off)
    if off + 8 * region.n_sites != len(body):
        raise FieldFormatError("payload size does not match header")
    return DisorderField(region, values.astype(np.float64).reshape(region.shape), spec, seed, replica)
