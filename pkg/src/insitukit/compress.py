"""Error-bounded lossy truncation of element spectra plus a lossless archive.

Stage 1 (lossy): discard low-energy Legendre coefficients while a
spectral-space estimate of the GLL-weighted RMSE stays below the user
bound epsilon. Stage 2 (lossless): pack the surviving coefficients into a
bit-exact little-endian archive, optionally run through a deflate coder.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .spectral import Basis1D, DimensionError, ElementField, SpectralBlock

MAGIC = b"NKCZ"
VERSION = 1

CODEC_RAW = 0
CODEC_DEFLATE = 1
_CODECS = (CODEC_RAW, CODEC_DEFLATE)

_HEADER = struct.Struct("<4sIIQd")   # magic, version, p, element_count, epsilon
_ELEM_HEAD = struct.Struct("<QI")    # element_id, kept_count


class ArchiveFormatError(ValueError):
    """Malformed archive stream (bad magic, bad version, short read...)."""


class BadMagicError(ArchiveFormatError):
    pass


class BadVersionError(ArchiveFormatError):
    pass


class TruncatedStreamError(ArchiveFormatError):
    pass


@dataclass(frozen=True)
class TruncationSpec:
    """Maximum allowed weighted RMSE per element, in field units."""

    epsilon: float

    def __post_init__(self):
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")


@dataclass
class CompressedArchive:
    order: int
    epsilon: float
    field_name: str
    codec_id: int
    element_count: int
    payload: bytes  # coded inner stream

    def to_bytes(self) -> bytes:
        name = self.field_name.encode("utf-8")
        head = _HEADER.pack(MAGIC, VERSION, self.order, self.element_count, self.epsilon)
        return (head + struct.pack("<H", len(name)) + name
                + struct.pack("<BQ", self.codec_id, len(self.payload)) + self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CompressedArchive":
        if len(data) < _HEADER.size:
            raise TruncatedStreamError("archive shorter than fixed header")
        magic, version, p, count, eps = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != VERSION:
            raise BadVersionError(f"unsupported archive version {version}")
        off = _HEADER.size
        if len(data) < off + 2:
            raise TruncatedStreamError("archive truncated in name length")
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        if len(data) < off + name_len + 9:
            raise TruncatedStreamError("archive truncated in name/codec fields")
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        codec_id, coded_len = struct.unpack_from("<BQ", data, off)
        off += 9
        if codec_id not in _CODECS:
            raise ArchiveFormatError(f"unknown codec id {codec_id}")
        if len(data) < off + coded_len:
            raise TruncatedStreamError(
                f"coded payload truncated: need {coded_len} bytes, have {len(data) - off}")
        return cls(order=p, epsilon=eps, field_name=name, codec_id=codec_id,
                   element_count=count, payload=data[off:off + coded_len])


@dataclass
class CompressionReport:
    ratio: float
    discarded_fraction: float
    per_element_rmse: np.ndarray
    max_rmse: float = field(init=False)
    uncompressed_bytes: int = 0
    archive_bytes: int = 0

    def __post_init__(self):
        self.per_element_rmse = np.asarray(self.per_element_rmse, dtype=float)
        self.max_rmse = float(self.per_element_rmse.max()) if self.per_element_rmse.size else 0.0


def mode_energies(block: SpectralBlock, basis: Basis1D) -> np.ndarray:
    """Weighted-L2 energy of each coefficient: c^2 * gamma_i gamma_j gamma_k."""
    g = basis.mode_norms
    metric = g[:, None, None] * g[None, :, None] * g[None, None, :]
    return block.coeffs ** 2 * metric


def truncate(block: SpectralBlock, basis: Basis1D, spec: TruncationSpec) -> SpectralBlock:
    """Greedily discard the lowest-energy coefficients under the RMSE budget.

    The running weighted-RMSE estimate sqrt(discarded energy / 8) is kept
    <= epsilon; by the Parseval identity it equals the physical-space
    weighted RMSE. The (0,0,0) mean coefficient is never discarded.
    Ties in energy break by lexicographic coefficient index.
    """
    if block.order != basis.order:
        raise DimensionError(f"block order {block.order} != basis order {basis.order}")
    energies = mode_energies(block, basis).ravel()
    order_idx = np.lexsort((np.arange(energies.size), energies))
    # total GLL weight volume: (sum w)^3 = 8 on the reference element
    budget = 8.0 * spec.epsilon ** 2
    kept = np.ones(energies.size, dtype=bool)
    acc = 0.0
    for idx in order_idx:
        if idx == 0:  # protect the mean
            continue
        e = energies[idx]
        if acc + e <= budget:
            acc += e
            kept[idx] = False
        else:
            break
    mask = kept.reshape(block.coeffs.shape)
    coeffs = np.where(mask, block.coeffs, 0.0)
    return SpectralBlock(order=block.order, coeffs=coeffs, kept_mask=mask,
                         element_id=block.element_id)


def weighted_rmse(original: ElementField, reconstructed: ElementField,
                  basis: Basis1D) -> float:
    """GLL-quadrature-weighted RMSE between two nodal fields."""
    if original.order != reconstructed.order or original.order != basis.order:
        raise DimensionError("orders of fields and basis must match")
    w = basis.weights
    w3 = w[:, None, None] * w[None, :, None] * w[None, None, :]
    diff2 = (original.values - reconstructed.values) ** 2
    return float(np.sqrt(np.sum(w3 * diff2) / np.sum(w3)))


def _encode_inner(blocks: Sequence[SpectralBlock], p: int) -> bytes:
    n3 = (p + 1) ** 3
    parts = []
    for blk in blocks:
        if blk.order != p:
            raise ArchiveFormatError(
                f"element {blk.element_id} has order {blk.order}, archive order {p}")
        mask = blk.kept_mask.ravel()
        vals = blk.coeffs.ravel()[mask]
        bitmap = np.packbits(mask, bitorder="little").tobytes()
        parts.append(_ELEM_HEAD.pack(blk.element_id, vals.size))
        parts.append(bitmap)
        parts.append(vals.astype("<f8").tobytes())
        if len(bitmap) != (n3 + 7) // 8:
            raise ArchiveFormatError("bitmap size mismatch")
    return b"".join(parts)


def encode(blocks: Sequence[SpectralBlock], p: int, epsilon: float,
           field_name: str, codec_id: int = CODEC_DEFLATE) -> CompressedArchive:
    """Pack truncated blocks into an archive; byte-deterministic."""
    if codec_id not in _CODECS:
        raise ArchiveFormatError(f"unknown codec id {codec_id}")
    inner = _encode_inner(blocks, p)
    if codec_id == CODEC_DEFLATE:
        payload = zlib.compress(inner, level=6)
    else:
        payload = inner
    return CompressedArchive(order=p, epsilon=epsilon, field_name=field_name,
                             codec_id=codec_id, element_count=len(blocks),
                             payload=payload)


def decode(archive: CompressedArchive) -> list[SpectralBlock]:
    """Recover the truncated blocks, bit-exact in the kept coefficients."""
    p = archive.order
    n = p + 1
    n3 = n ** 3
    bitmap_bytes = (n3 + 7) // 8
    if archive.codec_id == CODEC_DEFLATE:
        try:
            inner = zlib.decompress(archive.payload)
        except zlib.error as exc:
            raise TruncatedStreamError(f"deflate stream corrupt: {exc}") from exc
    else:
        inner = archive.payload
    blocks = []
    off = 0
    for i in range(archive.element_count):
        if len(inner) < off + _ELEM_HEAD.size:
            raise TruncatedStreamError(f"element {i}: header truncated")
        elem_id, kept_count = _ELEM_HEAD.unpack_from(inner, off)
        off += _ELEM_HEAD.size
        if kept_count > n3:
            raise ArchiveFormatError(
                f"element {i}: kept_count {kept_count} exceeds {n3}")
        if len(inner) < off + bitmap_bytes + 8 * kept_count:
            raise TruncatedStreamError(f"element {i}: payload truncated")
        mask = np.unpackbits(
            np.frombuffer(inner, dtype=np.uint8, count=bitmap_bytes, offset=off),
            bitorder="little")[:n3].astype(bool)
        off += bitmap_bytes
        if int(mask.sum()) != kept_count:
            raise ArchiveFormatError(
                f"element {i}: bitmap popcount {int(mask.sum())} != kept_count {kept_count}")
        vals = np.frombuffer(inner, dtype="<f8", count=kept_count, offset=off)
        off += 8 * kept_count
        coeffs = np.zeros(n3)
        coeffs[mask] = vals
        blocks.append(SpectralBlock(order=p, coeffs=coeffs.reshape(n, n, n),
                                    kept_mask=mask.reshape(n, n, n),
                                    element_id=elem_id))
    if off != len(inner):
        raise ArchiveFormatError(f"{len(inner) - off} trailing bytes after last element")
    return blocks


def compression_report(originals: Sequence[ElementField],
                       archive: CompressedArchive,
                       basis: Basis1D) -> CompressionReport:
    """Ratio, discarded fraction and per-element reconstruction RMSE."""
    from .spectral import dlt_inverse

    blocks = decode(archive)
    if len(blocks) != len(originals):
        raise DimensionError(
            f"archive has {len(blocks)} elements, originals {len(originals)}")
    n3 = (archive.order + 1) ** 3
    archive_bytes = len(archive.to_bytes())
    uncompressed = len(blocks) * n3 * 8
    kept_total = sum(int(b.kept_mask.sum()) for b in blocks)
    rmse = np.array([weighted_rmse(orig, dlt_inverse(blk, basis), basis)
                     for orig, blk in zip(originals, blocks)])
    denom = len(blocks) * n3 if blocks else 1
    return CompressionReport(
        ratio=uncompressed / archive_bytes if archive_bytes else float("inf"),
        discarded_fraction=1.0 - kept_total / denom,
        per_element_rmse=rmse,
        uncompressed_bytes=uncompressed,
        archive_bytes=archive_bytes,
    )
