"""
Tensor container files for coverfuse.

Layout of a ``.cfse`` file:
    8 bytes   magic "CFSE0001"
    8 bytes   header length, uint64 little-endian
    header    UTF-8 JSON: song_id, metadata, tensor directory
    payloads  raw little-endian tensors, each starting on an 8-byte boundary

Directory entries carry name, dtype, shape and the absolute byte offset of the
payload. Per-song feature caches, score matrices and debug dumps all use it.
"""

import json
import logging
import os
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .constants import CACHE_ALIGNMENT, CACHE_MAGIC, CACHE_SUFFIX
from .errors import CacheFormatError, MissingFeatures

logger = logging.getLogger(__name__)

_LENGTH = struct.Struct("<Q")
_PREAMBLE = len(CACHE_MAGIC) + _LENGTH.size
_DTYPES = {"<f8", "<f4", "<i8", "<i4", "|u1"}


@dataclass
class Container:
    """Decoded container: identity, free-form metadata and named tensors."""

    song_id: str
    metadata: dict = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)


def _align(n: int) -> int:
    return -(-n // CACHE_ALIGNMENT) * CACHE_ALIGNMENT


def _storable(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype == bool:
        array = array.astype(np.uint8)
    array = array.astype(array.dtype.newbyteorder("<"), copy=False)
    if array.dtype.str not in _DTYPES:
        raise CacheFormatError(f"unsupported tensor dtype {array.dtype}")
    return np.ascontiguousarray(array)


def _directory(arrays: Dict[str, np.ndarray], data_start: int) -> List[dict]:
    entries, offset = [], data_start
    for name, array in arrays.items():
        entries.append({
            "name": name,
            "dtype": array.dtype.str,
            "shape": list(array.shape),
            "offset": offset,
        })
        offset = _align(offset + array.nbytes)
    return entries


def encode_container(container: Container) -> bytes:
    arrays = {name: _storable(t) for name, t in container.tensors.items()}

    # Offsets are absolute, so the header length feeds back into them
    data_start = _align(_PREAMBLE)
    while True:
        header = {
            "song_id": container.song_id,
            "metadata": container.metadata,
            "tensors": _directory(arrays, data_start),
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        needed = _align(_PREAMBLE + len(blob))
        if needed == data_start:
            break
        data_start = needed

    out = bytearray(CACHE_MAGIC)
    out += _LENGTH.pack(len(blob))
    out += blob
    for entry, array in zip(header["tensors"], arrays.values()):
        out += b"\x00" * (entry["offset"] - len(out))
        out += array.tobytes()
    return bytes(out)


def decode_container(data: bytes, source: str = "<bytes>") -> Container:
    """
    Raises:
        CacheFormatError: bad magic, truncated data or an invalid directory
    """
    if len(data) < _PREAMBLE or data[:len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise CacheFormatError(f"{source}: not a coverfuse container")
    (length,) = _LENGTH.unpack_from(data, len(CACHE_MAGIC))
    if _PREAMBLE + length > len(data):
        raise CacheFormatError(f"{source}: truncated header")
    try:
        header = json.loads(data[_PREAMBLE:_PREAMBLE + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CacheFormatError(f"{source}: unreadable header: {e}") from e

    tensors = {}
    for entry in header.get("tensors", []):
        try:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(int(s) for s in entry["shape"])
            offset = int(entry["offset"])
        except (KeyError, TypeError, ValueError) as e:
            raise CacheFormatError(f"{source}: bad tensor entry {entry}: {e}") from e
        if dtype.str not in _DTYPES or offset % CACHE_ALIGNMENT:
            raise CacheFormatError(f"{source}: bad tensor entry {entry['name']}")
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * dtype.itemsize
        if offset < _PREAMBLE + length or end > len(data):
            raise CacheFormatError(f"{source}: tensor {entry['name']} out of bounds")
        tensors[entry["name"]] = np.frombuffer(data, dtype=dtype, count=count, offset=offset).reshape(shape).copy()

    return Container(
        song_id=str(header.get("song_id", "")),
        metadata=header.get("metadata", {}),
        tensors=tensors,
    )


def write_container(path, container: Container):
    """Write atomically (temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(encode_container(container))
    os.replace(tmp, path)
    logger.debug(f"Wrote {path} ({len(container.tensors)} tensors)")


def read_container(path) -> Container:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise CacheFormatError(f"cannot read {path}: {e}") from e
    return decode_container(data, str(path))


def read_header(path) -> Container:
    """Song id and metadata only; tensors are not loaded."""
    path = Path(path)
    with open(path, "rb") as f:
        preamble = f.read(_PREAMBLE)
        if len(preamble) < _PREAMBLE or preamble[:len(CACHE_MAGIC)] != CACHE_MAGIC:
            raise CacheFormatError(f"{path}: not a coverfuse container")
        (length,) = _LENGTH.unpack_from(preamble, len(CACHE_MAGIC))
        blob = f.read(length)
    try:
        header = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CacheFormatError(f"{path}: unreadable header: {e}") from e
    return Container(song_id=str(header.get("song_id", "")), metadata=header.get("metadata", {}))


class FeatureCache:
    """A directory holding one container per song."""

    def __init__(self, directory):
        self.directory = Path(directory)

    @staticmethod
    def file_name(song_id: str) -> str:
        return re.sub(r"[^A-Za-z0-9._-]", "_", song_id) + CACHE_SUFFIX

    def path_for(self, song_id: str) -> Path:
        return self.directory / self.file_name(song_id)

    def __contains__(self, song_id: str) -> bool:
        return self.path_for(song_id).exists()

    def content_hash(self, song_id: str) -> Optional[str]:
        """Stored content hash of a cached song, None when absent or unreadable."""
        path = self.path_for(song_id)
        if not path.exists():
            return None
        try:
            return read_header(path).metadata.get("content_hash")
        except (CacheFormatError, OSError):
            logger.warning(f"Unreadable cache entry {path}; it will be rebuilt")
            return None

    def song_ids(self) -> List[str]:
        """Ids of every cached song, sorted."""
        ids = []
        for path in sorted(self.directory.glob(f"*{CACHE_SUFFIX}")):
            try:
                ids.append(read_header(path).song_id)
            except CacheFormatError:
                logger.warning(f"Skipping unreadable cache file {path}")
        return sorted(ids)

    def load(self, song_id: str) -> Container:
        """
        Raises:
            MissingFeatures: no cache entry for ``song_id``
        """
        path = self.path_for(song_id)
        if not path.exists():
            raise MissingFeatures(f"no cached features for '{song_id}' in {self.directory}")
        container = read_container(path)
        if container.song_id != song_id:
            raise CacheFormatError(f"{path} holds '{container.song_id}', expected '{song_id}'")
        return container

    def store(self, container: Container) -> Path:
        path = self.path_for(container.song_id)
        write_container(path, container)
        return path
