"""GLEO sample files and dataset directories.

GLEO layout (all little-endian)::

    b"GLEO" | u16 version | u32 H | u32 W | u32 T | T x u8 month
    | 4 x (u8 block tag | u32 channel count | f32 data, row-major)
    | i32 label (-1 when absent)

Block tags: 0 space-time [H,W,T,C], 1 space [H,W,C], 2 time [T,C], 3 static [C].

A dataset directory holds ``*.gleo`` files, ``manifest.txt`` (``path label``
per line, label -1 if unknown) and ``stats.txt`` (``channel mean std``).
"""

import struct
from pathlib import Path

import numpy as np

from galileo.data.catalog import KINDS, block_channels
from galileo.data.sample import NormStats, Sample
from galileo.errors import DataError, FormatError

MAGIC = b"GLEO"
VERSION = 1
_F32 = np.dtype("<f4")


def write_sample(s):
    H, W, T = s.dims
    out = [MAGIC, struct.pack("<HIII", VERSION, H, W, T),
           np.asarray(s.months, dtype=np.uint8).tobytes()]
    for tag, (kind, arr) in enumerate(s.blocks().items()):
        out.append(struct.pack("<BI", tag, arr.shape[-1]))
        out.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    out.append(struct.pack("<i", -1 if s.label is None else int(s.label)))
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated GLEO data while reading {what}", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_sample(buf):
    r = _Reader(buf)
    if bytes(r.take(4, "magic")) != MAGIC:
        raise FormatError("bad magic, not a GLEO file", 0)
    version, H, W, T = r.unpack("<HIII", "header")
    if version != VERSION:
        raise FormatError(f"unsupported GLEO version {version}", 4)
    months = np.frombuffer(r.take(T, "months"), dtype=np.uint8).astype(np.int64)
    expected = block_channels()
    shapes = {"space-time": (H, W, T), "space": (H, W), "time": (T,), "static": ()}
    arrays = {}
    for tag, kind in enumerate(KINDS):
        at = r.pos
        got_tag, C = r.unpack("<BI", f"{kind} block header")
        if got_tag != tag:
            raise FormatError(f"expected block tag {tag}, found {got_tag}", at)
        if C != len(expected[kind]):
            raise FormatError(f"{kind} block has {C} channels, catalog needs "
                              f"{len(expected[kind])}", at)
        shape = (*shapes[kind], C)
        n = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * n, f"{kind} block data"), dtype=_F32)
        arrays[kind] = data.astype(np.float32).reshape(shape)
    (label,) = r.unpack("<i", "label")
    if r.pos != len(r.buf):
        raise FormatError("trailing bytes after label", r.pos)
    try:
        return Sample(arrays["space-time"], arrays["space"], arrays["time"],
                      arrays["static"], months, None if label < 0 else label)
    except ValueError as exc:
        raise FormatError(f"invalid sample contents: {exc}") from exc


# ---------------------------------------------------------------- directories

def write_stats(path, stats):
    lines = [f"{name} {stats.mean[name]!r} {stats.std[name]!r}"
             for kind in KINDS for name in block_channels()[kind]]
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats(path):
    mean, std = {}, {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read stats file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'channel mean std'")
        mean[parts[0]] = float(parts[1])
        std[parts[0]] = float(parts[2])
    return NormStats(mean, std)


def write_dataset(directory, samples, stats=None, workers=1):
    """Write samples as ``NNNNNN.gleo`` plus manifest and stats."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = [f"{i:06d}.gleo" for i in range(len(samples))]

    def dump(item):
        name, s = item
        (d / name).write_bytes(write_sample(s))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(dump, zip(names, samples)))
    else:
        for item in zip(names, samples):
            dump(item)
    manifest = [f"{n} {-1 if s.label is None else s.label}" for n, s in zip(names, samples)]
    (d / "manifest.txt").write_text("".join(line + "\n" for line in manifest))
    if stats is not None:
        write_stats(d / "stats.txt", stats)
    return d


def read_manifest(directory):
    d = Path(directory)
    path = d / "manifest.txt"
    if not path.is_file():
        raise DataError(f"dataset manifest not found: {path}")
    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:{lineno}: expected 'path label'")
        entries.append((parts[0], int(parts[1])))
    return entries


def load_dataset(directory, workers=1):
    """All samples listed in the manifest (in manifest order) and the stats, if present."""
    d = Path(directory)
    entries = read_manifest(d)

    def load(entry):
        rel, label = entry
        p = d / rel
        try:
            s = read_sample(p.read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read sample {p}: {exc}") from exc
        except FormatError as exc:
            raise FormatError(f"{p}: {exc}") from exc
        if label >= 0 and s.label != label:
            raise DataError(f"{p}: label {s.label} disagrees with manifest ({label})")
        return s

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(workers) as pool:
            samples = list(pool.map(load, entries))
    else:
        samples = [load(e) for e in entries]
    stats_path = d / "stats.txt"
    stats = read_stats(stats_path) if stats_path.is_file() else None
    return samples, stats
