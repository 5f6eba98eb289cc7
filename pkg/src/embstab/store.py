"""Bit-exact persistence for embeddings, transforms, and the reference chain.

Embedding file (.emb), all little-endian:

    magic     4 bytes  'OLRE'
    version   u16      1
    role      u8       0 = item, 1 = user
    precision u8       4 = float32, 8 = float64
    count     u64      number of rows
    dim       u32      embedding width
    reserved  u32      0
    records   count x (id u64, dim floats at the stated precision)
    digest    32 bytes sha256 of all preceding bytes

Transform file (.olt), all little-endian:

    magic     4 bytes  'OLRT'
    version   u16      1
    dim       u32      input dimension (row count of the matrix)
    payload   rows*cols f64 row-major; square in normal operation, cols is
              inferred from the payload size for rank-truncated maps
    digest    32 bytes sha256 of all preceding bytes

Runs live under `runs/<run_id>/` with `items.emb`, `users.emb` (stabilized
embeddings; items.emb doubles as the chaining anchor), `raw_items.emb`,
`raw_users.emb` (verbatim inputs, kept for raw-mode validation), `mT.olt`,
`mW.olt` (composed maps, float64), and `meta` (JSON run record). The
`latest_ref` pointer file at the store root holds the current reference
run id and is advanced by write-new-then-rename under an advisory lock, so
readers never block and a crash cannot leave it pointing at garbage.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import re
import struct
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import (
    ConcurrentWriter,
    CorruptFile,
    InvalidRunId,
    PrecisionLoss,
    UnknownRun,
)
from .lowrank import EmbeddingMatrix, Role
from .stabilizer import ReferenceSpace, StabilizedRun

EMB_MAGIC = b"OLRE"
TRF_MAGIC = b"OLRT"
FORMAT_VERSION = 1
CHECKSUM_ALGORITHM = "sha256"  # 32-byte digest, fixed for format version 1
DIGEST_SIZE = 32

_EMB_HEADER = struct.Struct("<4sHBBQII")
_TRF_HEADER = struct.Struct("<4sHI")

_ROLE_TO_BYTE = {Role.ITEM: 0, Role.USER: 1}
_BYTE_TO_ROLE = {0: Role.ITEM, 1: Role.USER}
_PRECISION_TO_DTYPE = {4: np.float32, 8: np.float64}

_RUN_ID_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]*$")


def _record_dtype(dim: int, precision: int) -> np.dtype:
    return np.dtype([("id", "<u8"), ("vec", f"<f{precision}", (dim,))])


def write_embeddings(emb: EmbeddingMatrix, path, precision: int | None = None) -> str:
    """Write an embedding matrix; returns the hex sha256 of the file body.

    precision defaults to the matrix's own dtype width. Requesting 4 for
    float64 data raises PrecisionLoss: downcasts must be explicit casts by
    the caller, never a side effect of writing.
    """
    native = emb.vectors.dtype.itemsize
    if precision is None:
        precision = native
    if precision not in _PRECISION_TO_DTYPE:
        raise ValueError(f"precision must be 4 or 8, got {precision}")
    if precision < native:
        raise PrecisionLoss(
            f"refusing to downcast float{native * 8} embeddings to float{precision * 8}"
        )
    header = _EMB_HEADER.pack(
        EMB_MAGIC, FORMAT_VERSION, _ROLE_TO_BYTE[emb.role], precision, emb.n, emb.dim, 0
    )
    records = np.empty(emb.n, dtype=_record_dtype(emb.dim, precision))
    records["id"] = emb.ids
    records["vec"] = emb.vectors.astype(_PRECISION_TO_DTYPE[precision], copy=False)
    digest = hashlib.sha256()
    digest.update(header)
    digest.update(records.tobytes())
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())
        fh.write(digest.digest())
    os.replace(tmp, path)
    return digest.hexdigest()


def read_embedding_header(path) -> tuple[Role, int, int, int]:
    """Parse and validate a .emb header; returns (role, precision, count, dim)."""
    with open(path, "rb") as fh:
        header = fh.read(_EMB_HEADER.size)
    if len(header) < _EMB_HEADER.size:
        raise CorruptFile(f"{path}: truncated header")
    magic, version, role_byte, precision, count, dim, reserved = _EMB_HEADER.unpack(header)
    if magic != EMB_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptFile(f"{path}: unsupported format version {version}")
    if role_byte not in _BYTE_TO_ROLE:
        raise CorruptFile(f"{path}: unknown role byte {role_byte}")
    if precision not in _PRECISION_TO_DTYPE:
        raise CorruptFile(f"{path}: unknown precision byte {precision}")
    if reserved != 0:
        raise CorruptFile(f"{path}: reserved field must be 0, got {reserved}")
    return _BYTE_TO_ROLE[role_byte], precision, count, dim


def read_embeddings(path) -> EmbeddingMatrix:
    """Read a .emb file back bit-exactly, verifying structure and checksum."""
    raw = Path(path).read_bytes()
    role, precision, count, dim = read_embedding_header(path)
    expected = _EMB_HEADER.size + count * (8 + dim * precision) + DIGEST_SIZE
    if len(raw) != expected:
        raise CorruptFile(f"{path}: size {len(raw)} != expected {expected}")
    body, digest = raw[:-DIGEST_SIZE], raw[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    records = np.frombuffer(
        body, dtype=_record_dtype(dim, precision), count=count, offset=_EMB_HEADER.size
    )
    vectors = records["vec"].reshape(count, dim)
    return EmbeddingMatrix(role, records["id"].copy(), vectors.copy())


def write_transform(matrix, path, meta: dict | None = None) -> str:
    """Write a float64 transform; returns the hex sha256 of the file body.

    When meta is given it is written as JSON to `<path>.json` alongside."""
    m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
    if m.ndim != 2 or m.size == 0:
        raise ValueError(f"transform must be a nonempty 2-D matrix, got shape {m.shape}")
    header = _TRF_HEADER.pack(TRF_MAGIC, FORMAT_VERSION, m.shape[0])
    payload = m.astype("<f8", copy=False).tobytes()
    digest = hashlib.sha256()
    digest.update(header)
    digest.update(payload)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(digest.digest())
    os.replace(tmp, path)
    if meta is not None:
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=2) + "\n")
    return digest.hexdigest()


def read_transform(path) -> np.ndarray:
    """Read a .olt transform back, verifying structure and checksum."""
    raw = Path(path).read_bytes()
    if len(raw) < _TRF_HEADER.size + DIGEST_SIZE:
        raise CorruptFile(f"{path}: truncated file")
    magic, version, rows = _TRF_HEADER.unpack(raw[: _TRF_HEADER.size])
    if magic != TRF_MAGIC:
        raise CorruptFile(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptFile(f"{path}: unsupported format version {version}")
    body, digest = raw[:-DIGEST_SIZE], raw[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    payload = body[_TRF_HEADER.size :]
    if rows == 0 or len(payload) % 8 != 0 or (len(payload) // 8) % rows != 0:
        raise CorruptFile(f"{path}: payload length {len(payload)} does not fit dim {rows}")
    cols = len(payload) // 8 // rows
    if cols == 0:
        raise CorruptFile(f"{path}: empty payload for dim {rows}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()


@dataclass(frozen=True)
class RunRecord:
    """Metadata for one stored run; serialized as the run's `meta` file."""

    run_id: str
    reference_run_id: str
    created_at: str
    dim: int
    effective_rank: int
    spectrum: tuple
    rank_policy: str
    files: dict
    anchor: str = "items.emb"
    checksum_algorithm: str = CHECKSUM_ALGORITHM


class RunStore:
    """Directory-backed store of stabilized runs and the reference pointer.

    Many readers may run concurrently; the reference pointer accepts one
    writer at a time (advisory lock). Committed runs are never rewritten.
    """

    def __init__(self, root) -> None:
        self.root = Path(root)

    @property
    def runs_dir(self) -> Path:
        return self.root / "runs"

    @property
    def latest_ref_path(self) -> Path:
        return self.root / "latest_ref"

    def init(self) -> None:
        self.runs_dir.mkdir(parents=True, exist_ok=True)

    def run_dir(self, run_id: str) -> Path:
        if not _RUN_ID_PATTERN.match(run_id):
            raise InvalidRunId(f"run id {run_id!r} is not a safe directory name")
        return self.runs_dir / run_id

    def save_run(
        self,
        run: StabilizedRun,
        raw_items: EmbeddingMatrix,
        raw_users: EmbeddingMatrix,
        rank_policy: str = "strict",
    ) -> RunRecord:
        """Persist one stabilized run. The run directory is append-only:
        saving an existing run id fails rather than rewriting history."""
        directory = self.run_dir(run.run_id)
        if directory.exists():
            raise FileExistsError(f"run {run.run_id!r} already stored; runs are append-only")
        self.init()
        directory.mkdir()
        files = {
            "items.emb": write_embeddings(run.stabilized_items, directory / "items.emb"),
            "users.emb": write_embeddings(run.stabilized_users, directory / "users.emb"),
            "raw_items.emb": write_embeddings(raw_items, directory / "raw_items.emb"),
            "raw_users.emb": write_embeddings(raw_users, directory / "raw_users.emb"),
            "mT.olt": write_transform(run.item_map, directory / "mT.olt"),
            "mW.olt": write_transform(run.user_map, directory / "mW.olt"),
        }
        record = RunRecord(
            run_id=run.run_id,
            reference_run_id=run.reference_run_id,
            created_at=datetime.now(timezone.utc).isoformat(),
            dim=run.output_dim,
            effective_rank=run.effective_rank,
            spectrum=tuple(float(s) for s in run.spectrum),
            rank_policy=rank_policy,
            files=files,
        )
        (directory / "meta").write_text(json.dumps(asdict(record), indent=2) + "\n")
        return record

    def load_record(self, run_id: str) -> RunRecord:
        meta_path = self.run_dir(run_id) / "meta"
        if not meta_path.exists():
            raise UnknownRun(f"no stored run {run_id!r}")
        data = json.loads(meta_path.read_text())
        data["spectrum"] = tuple(data["spectrum"])
        return RunRecord(**data)

    def list_runs(self) -> list[str]:
        if not self.runs_dir.exists():
            return []
        return sorted(p.name for p in self.runs_dir.iterdir() if (p / "meta").exists())

    def validate_record(self, record: RunRecord) -> None:
        """Check that every referenced file exists and matches its digest."""
        directory = self.run_dir(record.run_id)
        for name, expected in record.files.items():
            path = directory / name
            if not path.exists():
                raise CorruptFile(f"{path}: referenced by run {record.run_id!r} but missing")
            actual = hashlib.sha256(path.read_bytes()[:-DIGEST_SIZE]).hexdigest()
            if actual != expected:
                raise CorruptFile(f"{path}: digest mismatch")

    def load_stabilized(self, run_id: str) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
        record = self.load_record(run_id)
        directory = self.run_dir(record.run_id)
        return (
            read_embeddings(directory / "items.emb"),
            read_embeddings(directory / "users.emb"),
        )

    def load_raw(self, run_id: str) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
        record = self.load_record(run_id)
        directory = self.run_dir(record.run_id)
        return (
            read_embeddings(directory / "raw_items.emb"),
            read_embeddings(directory / "raw_users.emb"),
        )

    def load_transforms(self, run_id: str) -> tuple[np.ndarray, np.ndarray]:
        record = self.load_record(run_id)
        directory = self.run_dir(record.run_id)
        return read_transform(directory / "mT.olt"), read_transform(directory / "mW.olt")

    def latest_reference_id(self) -> str | None:
        if not self.latest_ref_path.exists():
            return None
        text = self.latest_ref_path.read_text().strip()
        return text or None

    def reference_space(self, run_id: str | None = None) -> ReferenceSpace:
        """Load the chaining anchor for the given run, or the latest one."""
        if run_id is None:
            run_id = self.latest_reference_id()
            if run_id is None:
                raise UnknownRun("store has no reference yet; run init first")
        record = self.load_record(run_id)
        anchor = read_embeddings(self.run_dir(record.run_id) / record.anchor)
        return ReferenceSpace(run_id=record.run_id, anchor_items=anchor)

    def advance_reference(self, record: RunRecord) -> None:
        """Atomically point `latest_ref` at the given run.

        Validates the record first (a half-written run must never become
        the reference), then writes a new pointer file and renames it over
        the old one, so readers see either the previous pointer or the new
        one, never a partial write."""
        self.validate_record(record)
        self.init()
        lock_path = self.root / "latest_ref.lock"
        with open(lock_path, "w") as lock:
            try:
                fcntl.flock(lock, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except BlockingIOError as exc:
                raise ConcurrentWriter("another writer holds the reference lock") from exc
            try:
                tmp = self.root / "latest_ref.tmp"
                tmp.write_text(record.run_id + "\n")
                os.replace(tmp, self.latest_ref_path)
            finally:
                fcntl.flock(lock, fcntl.LOCK_UN)
