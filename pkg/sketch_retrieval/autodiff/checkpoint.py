"""
Weight checkpoint container.

Byte layout (all integers little-endian):

    magic      8 bytes   b"SKRCKPT1"
    count      uint32    number of arrays
    per array:
      name_len uint16
      name     utf-8 bytes
      ndim     uint8
      dims     ndim x uint32
      values   prod(dims) x float64 (little-endian, row-major)

A text manifest `<checkpoint>.names` lists one `name<TAB>shape` line per
array, in file order, after a `# sketch-retrieval checkpoint v1` header.
"""

import logging
import struct
from pathlib import Path

import numpy as np

_LOGGER = logging.getLogger("sketch-retrieval.autodiff")

MAGIC = b"SKRCKPT1"
MANIFEST_HEADER = "# sketch-retrieval checkpoint v1"


def manifest_path(path: Path) -> Path:
    return path.with_name(path.name + ".names")


def save_checkpoint(path: Path, arrays: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<I", len(arrays))]
    manifest = [MANIFEST_HEADER]
    for name, array in arrays.items():
        array = np.asarray(array, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array).tobytes())
        manifest.append(f"{name}\t{'x'.join(str(d) for d in array.shape) or 'scalar'}")
    path.write_bytes(b"".join(chunks))
    manifest_path(path).write_text("\n".join(manifest) + "\n", encoding="utf-8")
    _LOGGER.info("Checkpoint written to %s (%d arrays)", path, len(arrays))
    return path


def load_checkpoint(path: Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise RuntimeError(f"Checkpoint '{path}' is missing. Train a model first or pass --checkpoint.") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"Checkpoint '{path}' has an unknown header")
    offset = len(MAGIC)
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
        offset += 8 * size
        arrays[name] = values.reshape(shape).astype(np.float64)
    if offset != len(raw):
        raise ValueError(f"Checkpoint '{path}' has {len(raw) - offset} trailing bytes")
    return arrays


__all__ = ["MAGIC", "load_checkpoint", "manifest_path", "save_checkpoint"]
