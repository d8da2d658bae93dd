"""Feature fixtures, dataset manifests, splits, and batching.

A fixture is a binary file of pre-extracted image-region and text-token
features plus labels, decoupling the model from the encoders that produced
them. The byte layout is fixed so independently written files interoperate:

    magic   8 bytes  b"MVIRFEAT"
    version u32      1
    header  u32 r, u32 c_img, u32 c_txt, u64 record_count
    record  u16 id length, UTF-8 id, u8 label, u32 m,
            r*c_img little-endian f32 image payload,
            m*c_txt little-endian f32 text payload

Floats are 32-bit on disk and widened to 64-bit in memory; region count r
and feature widths are fixed per file while the token count m varies per
record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FixtureFormatError, UsageError

MAGIC = b"MVIRFEAT"
VERSION = 1
SPLITS = ("train", "val", "test")


@dataclass
class FeatureRecord:
    """One news item: region features, token features, and a binary label."""

    id: str
    label: int  # 0 real, 1 fake
    image_features: np.ndarray  # r x c_img, float64
    text_features: np.ndarray   # m x c_txt, float64

    def __post_init__(self):
        self.image_features = np.asarray(self.image_features, dtype=np.float64)
        self.text_features = np.asarray(self.text_features, dtype=np.float64)
        if self.label not in (0, 1):
            raise ConfigurationError(f"record {self.id!r}: label {self.label} not in {{0, 1}}")
        if self.image_features.ndim != 2 or self.text_features.ndim != 2:
            raise ConfigurationError(f"record {self.id!r}: features must be matrices")
        if self.text_features.shape[0] < 1:
            raise ConfigurationError(f"record {self.id!r}: needs at least one token row")


def write_fixture(records: list[FeatureRecord], path) -> None:
    """Write records in order; byte output is a pure function of the records."""
    if records:
        r, c_img = records[0].image_features.shape
        c_txt = records[0].text_features.shape[1]
    else:
        r = c_img = c_txt = 0
    for rec in records:
        if rec.image_features.shape != (r, c_img) or rec.text_features.shape[1] != c_txt:
            raise ConfigurationError(
                f"record {rec.id!r}: shape {rec.image_features.shape}/"
                f"{rec.text_features.shape} inconsistent with file header "
                f"({r}, {c_img}, {c_txt})")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIIQ", VERSION, r, c_img, c_txt, len(records)))
        for rec in records:
            ident = rec.id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise ConfigurationError(f"record id longer than 65535 bytes")
            m = rec.text_features.shape[0]
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<BI", rec.label, m))
            fh.write(rec.image_features.astype("<f4").tobytes(order="C"))
            fh.write(rec.text_features.astype("<f4").tobytes(order="C"))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise FixtureFormatError(
                f"truncated fixture: needed {n} bytes for {what}", self.pos)
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out


def read_fixture(path) -> list[FeatureRecord]:
    """Load all records, validating every header field and payload length."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(8, "magic") != MAGIC:
        raise FixtureFormatError(f"bad magic, expected {MAGIC!r}", 0)
    version, r, c_img, c_txt, count = struct.unpack("<IIIIQ", reader.take(24, "header"))
    if version != VERSION:
        raise FixtureFormatError(f"unsupported fixture version {version}", 8)
    records = []
    for i in range(count):
        at = reader.pos
        (id_len,) = struct.unpack("<H", reader.take(2, f"record {i} id length"))
        ident = reader.take(id_len, f"record {i} id").decode("utf-8")
        label, m = struct.unpack("<BI", reader.take(5, f"record {i} label/m"))
        if label not in (0, 1):
            raise FixtureFormatError(f"record {i} ({ident!r}): label {label} not in {{0, 1}}", at)
        if m < 1:
            raise FixtureFormatError(f"record {i} ({ident!r}): token count {m} < 1", at)
        img = np.frombuffer(reader.take(4 * r * c_img, f"record {i} image payload"),
                            dtype="<f4").astype(np.float64).reshape(r, c_img)
        txt = np.frombuffer(reader.take(4 * m * c_txt, f"record {i} text payload"),
                            dtype="<f4").astype(np.float64).reshape(m, c_txt)
        records.append(FeatureRecord(ident, int(label), img, txt))
    if reader.pos != len(reader.blob):
        raise FixtureFormatError(
            f"{len(reader.blob) - reader.pos} trailing bytes after last record", reader.pos)
    return records


def fixture_dims(path) -> tuple[int, int, int]:
    """Header (r, c_img, c_txt) without loading payloads."""
    with open(path, "rb") as fh:
        head = fh.read(32)
    if len(head) < 32 or head[:8] != MAGIC:
        raise FixtureFormatError("bad or truncated fixture header", 0)
    version, r, c_img, c_txt, _ = struct.unpack("<IIIIQ", head[8:])
    if version != VERSION:
        raise FixtureFormatError(f"unsupported fixture version {version}", 8)
    return r, c_img, c_txt


# -- splits and manifests -------------------------------------------------

@dataclass
class DatasetManifest:
    """Split assignment per record id plus the seed/ratios that produced it."""

    seed: int
    ratios: dict[str, float]
    assignment: dict[str, str] = field(default_factory=dict)

    def ids_for(self, split: str) -> list[str]:
        return [i for i, s in self.assignment.items() if s == split]


def split_ids(ids, ratios: dict[str, float], seed: int) -> dict[str, str]:
    """Assign ids to train/val/test as a pure function of (id set, seed, ratios).

    Ids are sorted before the seeded shuffle, so file order never changes
    the assignment.
    """
    total = sum(ratios.get(s, 0.0) for s in SPLITS)
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios sum to {total}, expected 1")
    ordered = sorted(ids)
    if len(set(ordered)) != len(ordered):
        raise ConfigurationError("duplicate record ids in fixture")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ordered))
    n = len(ordered)
    n_train = int(ratios["train"] * n + 0.5)
    n_val = int(ratios["val"] * n + 0.5)
    assignment = {}
    for rank, idx in enumerate(perm):
        if rank < n_train:
            split = "train"
        elif rank < n_train + n_val:
            split = "val"
        else:
            split = "test"
        assignment[ordered[idx]] = split
    return assignment


def build_manifest(records: list[FeatureRecord], ratios: dict[str, float],
                   seed: int) -> DatasetManifest:
    return DatasetManifest(seed=seed, ratios=dict(ratios),
                           assignment=split_ids([r.id for r in records], ratios, seed))


def write_manifest(manifest: DatasetManifest, path) -> None:
    """Plain-text manifest: two header lines, then one id<TAB>split line per record."""
    lines = [f"#seed\t{manifest.seed}",
             "#ratios\t" + ",".join(f"{manifest.ratios[s]:g}" for s in SPLITS)]
    lines += [f"{ident}\t{split}" for ident, split in manifest.assignment.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if len(lines) < 2 or not lines[0].startswith("#seed\t") or not lines[1].startswith("#ratios\t"):
        raise ConfigurationError(f"{path}: manifest must start with #seed and #ratios lines")
    seed = int(lines[0].split("\t", 1)[1])
    parts = lines[1].split("\t", 1)[1].split(",")
    ratios = dict(zip(SPLITS, (float(p) for p in parts)))
    assignment = {}
    for line in lines[2:]:
        if not line:
            continue
        ident, split = line.split("\t")
        if split not in SPLITS:
            raise ConfigurationError(f"{path}: unknown split {split!r} for id {ident!r}")
        assignment[ident] = split
    return DatasetManifest(seed=seed, ratios=ratios, assignment=assignment)


def select_split(records: list[FeatureRecord], manifest: DatasetManifest,
                 split: str) -> list[FeatureRecord]:
    wanted = {i for i, s in manifest.assignment.items() if s == split}
    return [r for r in records if r.id in wanted]


def batches(records: list[FeatureRecord], batch_size: int, seed: int,
            epoch: int) -> list[list[FeatureRecord]]:
    """Deterministic shuffled mini-batches; the last partial batch is kept.

    The shuffle is keyed by (seed, epoch) so every epoch reorders and every
    rerun reproduces.
    """
    if batch_size < 1:
        raise UsageError(f"batch size {batch_size} must be >= 1")
    if not records:
        raise UsageError("cannot batch an empty record list")
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    order = rng.permutation(len(records))
    shuffled = [records[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]
