"""Parameter checkpoints.

Byte layout:

    magic       8 bytes  b"MVIRPARM"
    version     u32      1
    fingerprint u64      hash of the architecture-determining config subset
    count       u32      number of tensors
    table       per tensor: u16 name length, UTF-8 name, u8 ndim, u32 dims...
    payload     per tensor, table order: little-endian f64 values

Round trips are bit-exact. Loading verifies magic, version, fingerprint,
and the full shape table against what the given config would construct, so
a checkpoint can never silently wire into the wrong architecture.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .config import RunConfig, arch_fingerprint
from .errors import CheckpointError
from .model import MViRParams

MAGIC = b"MVIRPARM"
VERSION = 1


def save_params(params: MViRParams, config: RunConfig, path) -> None:
    names = list(params.tensors)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQI", VERSION,
                             arch_fingerprint(config, params.c_img, params.c_txt),
                             len(names)))
        for name in names:
            encoded = name.encode("utf-8")
            shape = params.tensors[name].shape
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}I", *shape))
        for name in names:
            fh.write(params.tensors[name].data.astype("<f8").tobytes(order="C"))


def load_params(path, config: RunConfig, c_img: int, c_txt: int) -> MViRParams:
    """Rebuild the parameter set from a checkpoint, validating against config."""
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
    version, fingerprint, count = struct.unpack("<IQI", blob[8:24])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    expect = arch_fingerprint(config, c_img, c_txt)
    if fingerprint != expect:
        raise CheckpointError(
            f"{path}: config fingerprint mismatch (file {fingerprint:#018x}, "
            f"config {expect:#018x}); the checkpoint was written under a "
            f"different architecture")
    pos = 24
    table: list[tuple[str, tuple[int, ...]]] = []
    for i in range(count):
        if pos + 2 > len(blob):
            raise CheckpointError(f"{path}: truncated shape table at entry {i}")
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if pos + name_len + 1 > len(blob):
            raise CheckpointError(f"{path}: truncated shape table at entry {i}")
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        if pos + 4 * ndim > len(blob):
            raise CheckpointError(f"{path}: truncated shape table at entry {i}")
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        table.append((name, tuple(shape)))

    # The config must reconstruct exactly the same tensor set.
    params = MViRParams.build(config, c_img, c_txt, np.random.default_rng(0))
    expected = params.shape_table()
    got = dict(table)
    if got != expected:
        for name, shape in table:
            if name not in expected:
                raise CheckpointError(f"{path}: tensor {name!r} not in the configured model")
            if expected[name] != shape:
                raise CheckpointError(
                    f"{path}: tensor {name!r} has shape {shape}, config wants {expected[name]}")
        missing = sorted(set(expected) - set(got))
        raise CheckpointError(f"{path}: checkpoint missing tensors {missing}")

    for name, shape in table:
        n = int(np.prod(shape)) if shape else 1
        nbytes = 8 * n
        if pos + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        params.tensors[name].data = (np.frombuffer(blob[pos:pos + nbytes], dtype="<f8")
                                     .astype(np.float64).reshape(shape))
        pos += nbytes
    if pos != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - pos} trailing bytes after payload")
    return params
