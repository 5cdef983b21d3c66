"""Versioned binary dataset files and the plain-text manifest.

Layout: a text header of ``key=value`` lines between the magic line and
``end``, followed by one binary record per demonstration. Floats are
little-endian float64, masks one byte per entry.
"""

from __future__ import annotations

import struct

import numpy as np

from ..actionspace import ACTION_DIM
from ..errors import BadMagic, TruncatedFile, VersionMismatch
from .demos import EMBODIMENTS, Demonstration

MAGIC = b"CROSSEMBODY-DATASET\n"
VERSION = 1
_REC = struct.Struct("<HBBiII")


def _encode(demos, horizon) -> bytes:
    demos = list(demos)
    tasks = sorted({d.instruction_id for d in demos})
    scene_dims = sorted({len(d.scene) for d in demos})
    header = [
        f"version={VERSION}",
        f"dims={ACTION_DIM}",
        f"horizon={horizon if horizon is not None else 0}",
        f"scene_dims={','.join(map(str, scene_dims))}",
        f"tasks={','.join(map(str, tasks))}",
        f"demos={len(demos)}",
        "end",
    ]
    parts = [MAGIC, ("\n".join(header) + "\n").encode("ascii")]
    f8 = np.dtype("<f8")
    for d in demos:
        name = d.id.encode("utf-8")
        parts.append(_REC.pack(len(name), EMBODIMENTS.index(d.embodiment), int(d.augmented),
                               d.instruction_id, len(d), len(d.scene)))
        parts.append(name)
        parts.append(d.scene.astype(f8).tobytes())
        parts.append(d.proprio.astype(f8).tobytes())
        parts.append(d.proprio_mask.astype(np.uint8).tobytes())
        parts.append(d.labels.astype(f8).tobytes())
        parts.append(d.label_mask.astype(np.uint8).tobytes())
    return b"".join(parts)


def write_dataset(demos, path, horizon: int | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(_encode(demos, horizon))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"dataset ends after {len(self.buf)} bytes, needed {self.pos + n}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, count: int, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        return np.frombuffer(self.take(count * dtype.itemsize), dtype=dtype).copy()


def read_header(buf: bytes) -> tuple[dict, int]:
    if not buf.startswith(MAGIC):
        raise BadMagic("not a dataset file (bad magic)")
    pos = len(MAGIC)
    header = {}
    while True:
        nl = buf.find(b"\n", pos)
        if nl < 0:
            raise TruncatedFile("dataset header is incomplete")
        line = buf[pos:nl].decode("ascii", errors="replace")
        pos = nl + 1
        if line == "end":
            break
        key, _, value = line.partition("=")
        header[key] = value
    try:
        version = int(header.get("version", ""))
    except ValueError as exc:
        raise BadMagic("dataset header has no valid version") from exc
    if version != VERSION:
        raise VersionMismatch(f"dataset version {version} is not supported (expected {VERSION})")
    if int(header.get("dims", -1)) != ACTION_DIM:
        raise VersionMismatch(f"dataset stores {header.get('dims')}-dim actions, expected {ACTION_DIM}")
    return header, pos


def read_dataset(path) -> list[Demonstration]:
    with open(path, "rb") as fh:
        buf = fh.read()
    header, pos = read_header(buf)
    r = _Reader(buf)
    r.pos = pos
    demos = []
    for _ in range(int(header["demos"])):
        name_len, emb, augmented, instr, n, s = _REC.unpack(r.take(_REC.size))
        name = r.take(name_len).decode("utf-8")
        scene = r.array(s, "<f8")
        proprio = r.array(n * ACTION_DIM, "<f8").reshape(n, ACTION_DIM)
        pmask = r.array(n * ACTION_DIM, np.uint8).reshape(n, ACTION_DIM).astype(bool)
        labels = r.array(n * ACTION_DIM, "<f8").reshape(n, ACTION_DIM)
        lmask = r.array(n * ACTION_DIM, np.uint8).reshape(n, ACTION_DIM).astype(bool)
        demos.append(Demonstration(name, EMBODIMENTS[emb], instr, scene, proprio, pmask, labels, lmask,
                                   bool(augmented)))
    if r.pos != len(buf):
        raise TruncatedFile(f"{len(buf) - r.pos} unexpected trailing bytes after the last record")
    return demos


def write_manifest(demos, path, task_names: dict | None = None) -> None:
    task_names = task_names or {}
    lines = ["id\tembodiment\ttask\tsteps"]
    for d in demos:
        lines.append(f"{d.id}\t{d.embodiment}\t{task_names.get(d.instruction_id, d.instruction_id)}\t{len(d)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path) -> list[dict]:
    with open(path) as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    keys = rows[0]
    return [dict(zip(keys, r)) for r in rows[1:]]
