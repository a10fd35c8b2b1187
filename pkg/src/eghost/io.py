"""On-disk formats.

Event files (``.epgi``), little-endian::

    magic    4s   b"EPGI"
    version  u16  1
    duration u64  run duration in ps
    count    u64  number of records
    kind     u8   0 photon, 1 electron
    fov      4f32 x_min, x_max, y_min, y_max in µm
    records       photon: t u64 | electron: t u64, x f32, y f32

Images: 16-bit big-endian binary PGM (``P5``, maxval 65535) for counts and
raw little-endian float32 (``.f32``) for real-valued images; both come with a
JSON sidecar (``<file>.json``) holding binning and exposure metadata. Masks
are 1-bit PBM (``P4``, a set bit means open) with a JSON sidecar giving pixel
pitch and origin. Delimited text uses ``,`` separators, ``.`` decimals and a
header line; ``#`` lines carry provenance.
"""
from __future__ import annotations

import csv
import io as _io
import json
import struct
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .coincidence import PairList, TimeDifferenceHistogram
from .errors import BadMagic, CountMismatch, DataError, TruncatedRecord, VersionUnsupported
from .events import ELECTRON, PHOTON, EventStream, StreamHeader, validate_stream
from .optics import Mask
from .reconstruction import Binning, GhostImage

MAGIC = b"EPGI"
VERSION = 1
_HEADER = struct.Struct("<4sHQQB4f")
_PHOTON_REC = np.dtype("<u8")
_ELECTRON_REC = np.dtype([("t", "<u8"), ("x", "<f4"), ("y", "<f4")])


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def dump_events(stream: EventStream) -> bytes:
    stream = validate_stream(stream)
    kind = 1 if stream.is_electron else 0
    head = _HEADER.pack(MAGIC, VERSION, stream.header.duration_ps, len(stream), kind,
                        *[float(v) for v in stream.header.fov])
    if stream.is_electron:
        rec = np.empty(len(stream), _ELECTRON_REC)
        rec["t"], rec["x"], rec["y"] = stream.t, stream.x, stream.y
    else:
        rec = stream.t.astype(_PHOTON_REC)
    return head + rec.tobytes()


def load_events(buf: bytes, extra: Optional[dict] = None) -> EventStream:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagic("not an EPGI event file")
    if len(buf) < _HEADER.size:
        raise TruncatedRecord("file ends inside the header")
    magic, version, duration, count, kind, *fov = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionUnsupported(f"event format version {version}")
    if kind not in (0, 1):
        raise DataError(f"unknown stream kind code {kind}")
    dtype = _ELECTRON_REC if kind == 1 else _PHOTON_REC
    body = memoryview(buf)[_HEADER.size:]
    if len(body) % dtype.itemsize:
        raise TruncatedRecord("file ends inside a record")
    n = len(body) // dtype.itemsize
    if n != count:
        raise CountMismatch(f"header says {count} records, file holds {n}")
    rec = np.frombuffer(body, dtype=dtype, count=n)
    extra = extra or {}
    fov32 = tuple(float(np.float32(v)) for v in fov)
    header = StreamHeader(int(duration), ELECTRON if kind == 1 else PHOTON, fov32,
                          float(extra.get("nominal_rate", 0.0)), extra.get("seed"))
    if kind == 1:
        return EventStream(header, rec["t"].astype(np.int64), rec["x"], rec["y"])
    return EventStream(header, rec.astype(np.int64))


def write_events(path, stream: EventStream, provenance: Optional[dict] = None) -> None:
    """Write an event file and its JSON sidecar (rate, seed, provenance)."""
    Path(path).write_bytes(dump_events(stream))
    meta = {"kind": stream.kind, "count": len(stream), "nominal_rate": stream.header.nominal_rate,
            "seed": stream.header.seed}
    meta.update(provenance or {})
    write_json(_sidecar(path), meta)


def read_events(path) -> EventStream:
    side = _sidecar(path)
    extra = read_json(side) if side.exists() else None
    return load_events(Path(path).read_bytes(), extra)


# PGM / float images

def _pgm_header(width: int, height: int, maxval: int, comments: Iterable[str], magic: str) -> bytes:
    lines = [magic] + [f"# {c}" for c in comments] + [f"{width} {height}"]
    if maxval:
        lines.append(str(maxval))
    return ("\n".join(lines) + "\n").encode("ascii")


def _read_netpbm(buf: bytes, magic: bytes, with_maxval: bool):
    if not buf.startswith(magic):
        raise BadMagic(f"expected {magic!r} netpbm file")
    pos = len(magic)
    fields = []
    need = 3 if with_maxval else 2
    while len(fields) < need:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(buf[start:pos]))
    return fields, pos + 1


def image_to_dict(img: GhostImage) -> dict:
    b = img.binning
    return {"bin_um": b.bin_um, "origin_um": list(b.origin_um), "shape": list(b.shape),
            "total": float(img.counts.sum()), "metadata": img.metadata}


def _image_from_dict(counts: np.ndarray, meta: dict) -> GhostImage:
    b = Binning(meta["bin_um"], tuple(meta["origin_um"]), tuple(meta["shape"]))
    return GhostImage(counts, b, meta.get("metadata", {}))


def write_pgm16(path, img: GhostImage, comments: Iterable[str] = ()) -> None:
    """Counts as 16-bit big-endian PGM; row 0 of the file is the lowest y."""
    c = np.asarray(img.counts)
    if c.min() < 0 or c.max() > 65535 or not np.all(c == np.round(c)):
        raise DataError("PGM16 holds whole counts in [0, 65535]")
    ny, nx = c.shape
    data = c.astype(">u2").tobytes()
    Path(path).write_bytes(_pgm_header(nx, ny, 65535, comments, "P5") + data)
    write_json(_sidecar(path), image_to_dict(img))


def read_pgm16(path) -> GhostImage:
    buf = Path(path).read_bytes()
    (nx, ny, maxval), pos = _read_netpbm(buf, b"P5", True)
    if maxval != 65535:
        raise DataError("only 16-bit PGM is supported")
    body = buf[pos:pos + 2 * nx * ny]
    if len(body) < 2 * nx * ny:
        raise TruncatedRecord("PGM pixel data truncated")
    counts = np.frombuffer(body, ">u2").reshape(ny, nx).astype(np.int64)
    return _image_from_dict(counts, read_json(_sidecar(path)))


def write_float32(path, img: GhostImage) -> None:
    Path(path).write_bytes(np.asarray(img.counts, "<f4").tobytes())
    write_json(_sidecar(path), image_to_dict(img))


def read_float32(path) -> GhostImage:
    meta = read_json(_sidecar(path))
    ny, nx = meta["shape"]
    buf = Path(path).read_bytes()
    if len(buf) != 4 * nx * ny:
        raise TruncatedRecord("float image size does not match its sidecar")
    counts = np.frombuffer(buf, "<f4").reshape(ny, nx).astype(np.float32)
    return _image_from_dict(counts, meta)


# masks

def write_mask(path, mask: Mask, provenance: Optional[dict] = None) -> None:
    """1-bit PBM, top file row = highest y, plus JSON sidecar."""
    r = mask.raster[::-1]
    ny, nx = r.shape
    bits = np.packbits(r.astype(np.uint8), axis=1)
    Path(path).write_bytes(_pgm_header(nx, ny, 0, [mask.name] if mask.name else [], "P4") + bits.tobytes())
    meta = {"pixel_pitch_um": mask.pixel_pitch_um, "origin_um": list(mask.origin_um), "name": mask.name}
    meta.update(provenance or {})
    write_json(_sidecar(path), meta)


def read_mask(path) -> Mask:
    buf = Path(path).read_bytes()
    (nx, ny), pos = _read_netpbm(buf, b"P4", False)
    row_bytes = (nx + 7) // 8
    body = buf[pos:pos + row_bytes * ny]
    if len(body) < row_bytes * ny:
        raise TruncatedRecord("PBM data truncated")
    bits = np.unpackbits(np.frombuffer(body, np.uint8).reshape(ny, row_bytes), axis=1)[:, :nx]
    meta = read_json(_sidecar(path))
    return Mask(bits[::-1].astype(bool), float(meta["pixel_pitch_um"]), tuple(meta["origin_um"]),
                meta.get("name", ""))


# delimited text

def _comment_lines(provenance: Optional[dict]) -> str:
    if not provenance:
        return ""
    return "".join(f"# {k}={provenance[k]}\n" for k in sorted(provenance))


def write_pairs(path, pairs: PairList, provenance: Optional[dict] = None) -> None:
    rows = np.column_stack([pairs.electron_index, pairs.photon_index, pairs.tau_ps])
    buf = _io.StringIO()
    buf.write(_comment_lines(provenance))
    buf.write("electron_index,photon_index,tau_ps\n")
    np.savetxt(buf, rows, fmt="%d", delimiter=",")
    Path(path).write_text(buf.getvalue())


def read_pairs(path) -> PairList:
    skip = _header_rows(path)
    with open(path, encoding="ascii") as fh:
        body = fh.readlines()[skip:]
    a = np.loadtxt(body, dtype=np.int64, delimiter=",", ndmin=2) if body else np.zeros((0, 3), np.int64)
    a = a.reshape(-1, 3)
    return PairList(a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy())


def _header_rows(path) -> int:
    n = 0
    with open(path, encoding="ascii") as fh:
        for line in fh:
            n += 1
            if not line.startswith("#"):
                return n
    return n


def write_histogram(path, h: TimeDifferenceHistogram, g2=None, provenance: Optional[dict] = None) -> None:
    """tau bin edges, counts and (optionally) g2 with its error."""
    meta = dict(provenance or {})
    meta.update(n_electrons=h.n_electrons, n_photons=h.n_photons, duration_ps=h.duration_ps,
                bin_width_ps=h.bin_width_ps)
    buf = _io.StringIO()
    buf.write(_comment_lines(meta))
    edges = h.edges_ps
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau_lo_ps", "tau_hi_ps", "count", "g2", "g2_sigma"])
    for k in range(h.n_bins):
        row = [int(edges[k]), int(edges[k + 1]), int(h.counts[k])]
        row += [repr(float(g2.g2[k])), repr(float(g2.sigma[k]))] if g2 is not None else ["", ""]
        w.writerow(row)
    Path(path).write_text(buf.getvalue())


def read_histogram(path) -> TimeDifferenceHistogram:
    meta = {}
    rows = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[2:].strip().partition("=")
                meta[k] = v
            elif line.startswith("tau_lo_ps"):
                continue
            else:
                rows.append(line.rstrip("\n").split(","))
    lo = [int(r[0]) for r in rows]
    hi = [int(r[1]) for r in rows]
    counts = np.array([int(r[2]) for r in rows], np.int64)
    return TimeDifferenceHistogram(int(meta["bin_width_ps"]), lo[0], hi[-1], counts, int(meta["n_electrons"]),
                                   int(meta["n_photons"]), int(meta["duration_ps"]))


def write_table(path, header: list, rows, provenance: Optional[dict] = None) -> None:
    buf = _io.StringIO()
    buf.write(_comment_lines(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    Path(path).write_text(buf.getvalue())


def read_table(path):
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    r = list(csv.reader(lines))
    return r[0], [[float(v) for v in row] for row in r[1:]]


# fit report

def write_report(path, values: dict) -> None:
    """``key = value`` lines, keys sorted; floats written with repr."""
    out = []
    for k in sorted(values):
        v = values[k]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, (float, np.floating)):
            v = repr(float(v))
        out.append(f"{k} = {v}")
    Path(path).write_text("\n".join(out) + "\n")


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        k, v = k.strip(), v.strip()
        if v in ("true", "false"):
            out[k] = v == "true"
        else:
            try:
                out[k] = int(v)
            except ValueError:
                try:
                    out[k] = float(v)
                except ValueError:
                    out[k] = v
    return out


# ground truth

def write_ground_truth(directory, truth, provenance: Optional[dict] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name in ("emission_um", "photon_source_um", "photon_image_um", "transmitted", "photon_detected",
                 "electron_recorded", "electron_index", "photon_index"):
        np.save(d / f"{name}.npy", np.ascontiguousarray(getattr(truth, name)), allow_pickle=False)
    summary = {"n_pairs": truth.n_pairs, "n_electrons_emitted": truth.n_electrons_emitted,
               "n_background_electrons": truth.n_background_electrons, "n_dark_counts": truth.n_dark_counts,
               "n_true_coincidences": truth.n_true_coincidences}
    summary.update(provenance or {})
    write_json(d / "summary.json", summary)


def read_ground_truth(directory):
    from .source import GroundTruth

    d = Path(directory)
    s = read_json(d / "summary.json")
    arrays = {name: np.load(d / f"{name}.npy", allow_pickle=False) for name in (
        "emission_um", "photon_source_um", "photon_image_um", "transmitted", "photon_detected",
        "electron_recorded", "electron_index", "photon_index")}
    return GroundTruth(**arrays, n_electrons_emitted=s["n_electrons_emitted"],
                       n_background_electrons=s["n_background_electrons"], n_dark_counts=s["n_dark_counts"])
