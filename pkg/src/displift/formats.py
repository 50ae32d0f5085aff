"""PLY / XYZ point clouds and PFM + PGM disparity maps."""

from __future__ import annotations

import re
import warnings
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, MalformedFile, UnsupportedPropertyWarning
from .geometry import DisparityMap, PointCloud

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}  # fmt: skip

POINTCLOUD_FORMATS = ("ply-binary", "ply-ascii", "xyz")


def _format_for(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in POINTCLOUD_FORMATS:
            raise ValueError(f"unknown point cloud format {fmt!r}")
        return fmt
    return "xyz" if path.suffix.lower() == ".xyz" else "ply-binary"


def write_pointcloud(cloud: PointCloud, path, fmt: str | None = None) -> None:
    """Write ``cloud`` as binary PLY (default), ASCII PLY or XYZ text.

    PLY stores float32 coordinates plus a ``uchar tag`` when the cloud is
    tagged. XYZ carries coordinates only, at full double precision.
    """
    path = Path(path)
    fmt = _format_for(path, fmt)
    if fmt == "xyz":
        np.savetxt(path, cloud.points, fmt="%.17g")
        return
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if cloud.tags is not None:
        fields.append(("tag", "u1"))
    data = np.empty(len(cloud), dtype=fields)
    for axis, name in enumerate("xyz"):
        data[name] = cloud.points[:, axis]
    if cloud.tags is not None:
        data["tag"] = cloud.tags
    encoding = "binary_little_endian" if fmt == "ply-binary" else "ascii"
    header = ["ply", f"format {encoding} 1.0", f"element vertex {len(cloud)}"]
    header += [f"property float {n}" for n in "xyz"]
    if cloud.tags is not None:
        header.append("property uchar tag")
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if fmt == "ply-binary":
            fh.write(data.tobytes())
        else:
            for row in data:
                coords = " ".join(repr(float(np.float32(row[n]))) for n in "xyz")
                line = f"{coords} {int(row['tag'])}" if cloud.tags is not None else coords
                fh.write((line + "\n").encode("ascii"))


def _parse_ply_header(blob: bytes):
    end = blob.find(b"end_header")
    if not blob.startswith(b"ply"):
        raise MalformedFile("missing 'ply' magic", offset=0)
    if end < 0:
        raise MalformedFile("PLY header is truncated: missing 'end_header'", offset=len(blob))
    body_start = blob.index(b"\n", end) + 1 if b"\n" in blob[end:] else len(blob)
    fmt = None
    elements = []
    offset = 0
    for raw in blob[:end].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        words = line.split()
        if not words or words[0] in ("ply", "comment", "obj_info"):
            pass
        elif words[0] == "format":
            if len(words) < 2:
                raise MalformedFile("PLY 'format' line is incomplete", offset=offset)
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3 or not words[2].isdigit():
                raise MalformedFile(f"bad element line {line!r}", offset=offset)
            elements.append({"name": words[1], "count": int(words[2]), "props": []})
        elif words[0] == "property":
            if not elements:
                raise MalformedFile("property declared before any element", offset=offset)
            if words[1] == "list":
                elements[-1]["props"].append(("list", words[2], words[3], words[4]))
            elif len(words) == 3 and words[1] in _PLY_TYPES:
                elements[-1]["props"].append((words[2], words[1]))
            else:
                raise MalformedFile(f"bad property line {line!r}", offset=offset)
        else:
            raise MalformedFile(f"unexpected header line {line!r}", offset=offset)
        offset += len(raw) + 1
    if fmt is None:
        raise MalformedFile("PLY header is missing the 'format' line", offset=end)
    if not any(e["name"] == "vertex" for e in elements):
        raise MalformedFile("PLY header is missing the 'vertex' element", offset=end)
    return fmt, elements, body_start


def read_pointcloud(path) -> PointCloud:
    """Read a PLY (binary little-endian or ASCII) or XYZ point cloud."""
    path = Path(path)
    blob = path.read_bytes()
    if not blob.startswith(b"ply"):
        return _read_xyz(blob)
    fmt, elements, pos = _parse_ply_header(blob)
    if fmt not in ("binary_little_endian", "ascii"):
        raise MalformedFile(f"unsupported PLY format {fmt!r}", offset=0)
    ascii_rows = blob[pos:].decode("ascii", errors="replace").split("\n") if fmt == "ascii" else None
    row = 0
    for element in elements:
        names = [p[0] for p in element["props"]]
        if element["name"] != "vertex":
            if "list" in names:
                raise MalformedFile(f"cannot skip list element {element['name']!r} before the vertex data", offset=pos)
            if fmt == "ascii":
                row += element["count"]
            else:
                pos += element["count"] * np.dtype([(n, "<" + _PLY_TYPES[t]) for n, t in element["props"]]).itemsize
            continue
        if "list" in names:
            raise MalformedFile("list properties on vertices are not supported", offset=pos)
        for axis in "xyz":
            if axis not in names:
                raise MalformedFile(f"vertex element has no '{axis}' property", offset=pos)
        extras = [n for n in names if n not in ("x", "y", "z", "tag")]
        if extras:
            warnings.warn(f"ignoring vertex properties {extras}", UnsupportedPropertyWarning, stacklevel=2)
        dtype = np.dtype([(n, "<" + _PLY_TYPES[t]) for n, t in element["props"]])
        count = element["count"]
        if fmt == "binary_little_endian":
            need = count * dtype.itemsize
            if len(blob) - pos < need:
                raise MalformedFile(f"vertex data truncated: need {need} bytes, have {len(blob) - pos}", offset=len(blob))
            data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
        else:
            lines = [ln for ln in ascii_rows[row:row + count]]
            if len(lines) < count or any(not ln.strip() for ln in lines):
                raise MalformedFile(f"ASCII vertex data truncated: expected {count} rows", offset=len(blob))
            try:
                table = np.array([[float(x) for x in ln.split()] for ln in lines])
            except ValueError as exc:
                raise MalformedFile(f"non-numeric vertex data: {exc}", offset=pos) from exc
            if table.shape != (count, len(names)):
                raise MalformedFile(f"vertex rows must have {len(names)} values", offset=pos)
            data = np.empty(count, dtype=dtype)
            for k, n in enumerate(names):
                data[n] = table[:, k]
        points = np.stack([data[a].astype(np.float64) for a in "xyz"], axis=1)
        tags = data["tag"].astype(np.uint8) if "tag" in names else None
        return PointCloud(points, tags)
    raise MalformedFile("PLY file has no vertex element", offset=0)


def _read_xyz(blob: bytes) -> PointCloud:
    rows = []
    offset = 0
    for raw in blob.split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        if line and not line.startswith("#"):
            parts = line.split()
            try:
                values = [float(x) for x in parts[:3]]
            except ValueError as exc:
                raise MalformedFile(f"non-numeric XYZ line {line!r}", offset=offset) from exc
            if len(values) < 3:
                raise MalformedFile(f"XYZ line needs three coordinates: {line!r}", offset=offset)
            if len(parts) > 3 and not rows:
                warnings.warn("ignoring extra XYZ columns", UnsupportedPropertyWarning, stacklevel=3)
            rows.append(values)
        offset += len(raw) + 1
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 3))


def mask_path(path) -> Path:
    """``disparity.pfm`` -> ``disparity.mask.pgm``."""
    path = Path(path)
    return path.with_suffix(".mask.pgm")


def write_disparity(disparity: DisparityMap, path) -> None:
    """Write values as little-endian grayscale PFM and the mask as binary PGM."""
    path = Path(path)
    h, w = disparity.height, disparity.width
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM rows run bottom to top
        fh.write(np.ascontiguousarray(disparity.values[::-1], dtype="<f4").tobytes())
    with open(mask_path(path), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write((disparity.mask.astype(np.uint8) * 255).tobytes())


_PNM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pnm_header(blob: bytes, n_tokens: int):
    """Read whitespace-separated header tokens; returns tokens and data offset."""
    tokens, pos = [], 0
    for _ in range(n_tokens):
        match = _PNM_TOKEN.match(blob, pos)
        if match is None:
            raise MalformedFile("header is truncated", offset=pos)
        tokens.append(match.group(1).decode("ascii", errors="replace"))
        pos = match.end()
    if pos >= len(blob) or blob[pos:pos + 1] not in (b"\n", b" ", b"\r", b"\t"):
        raise MalformedFile("header is not followed by a single whitespace byte", offset=pos)
    return tokens, pos + 1


def _read_pfm(blob: bytes) -> np.ndarray:
    tokens, pos = _pnm_header(blob, 4)
    magic, w, h, scale = tokens
    if magic == "PF":
        raise MalformedFile("colour PFM is not supported; expected grayscale 'Pf'", offset=0)
    if magic != "Pf":
        raise MalformedFile(f"bad PFM magic {magic!r}", offset=0)
    try:
        w, h, scale = int(w), int(h), float(scale)
    except ValueError as exc:
        raise MalformedFile(f"bad PFM header: {exc}", offset=0) from exc
    if w <= 0 or h <= 0 or scale == 0:
        raise MalformedFile("PFM dimensions must be positive and scale non-zero", offset=0)
    dtype = "<f4" if scale < 0 else ">f4"
    need = w * h * 4
    if len(blob) - pos < need:
        raise MalformedFile(f"PFM data truncated: need {need} bytes, have {len(blob) - pos}", offset=len(blob))
    values = np.frombuffer(blob, dtype=dtype, count=w * h, offset=pos).reshape(h, w)
    return values[::-1].astype(np.float64)


def _read_pgm(blob: bytes) -> np.ndarray:
    tokens, pos = _pnm_header(blob, 4)
    magic, w, h, maxval = tokens
    if magic != "P5":
        raise MalformedFile(f"mask must be a binary PGM (P5), got {magic!r}", offset=0)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval > 255:
        raise MalformedFile("16-bit PGM masks are not supported", offset=0)
    if len(blob) - pos < w * h:
        raise MalformedFile("PGM data truncated", offset=len(blob))
    return np.frombuffer(blob, dtype=np.uint8, count=w * h, offset=pos).reshape(h, w)


def read_disparity(path) -> DisparityMap:
    """Read a PFM disparity map and its ``.mask.pgm`` companion.

    Without a mask file, the mask is ``value > 0``. Non-zero mask bytes mean
    foreground.
    """
    path = Path(path)
    values = _read_pfm(path.read_bytes())
    if not np.all(np.isfinite(values)):
        raise MalformedFile("PFM contains non-finite values")
    mpath = mask_path(path)
    if mpath.exists():
        mask = _read_pgm(mpath.read_bytes()) > 0
        if mask.shape != values.shape:
            raise DimensionMismatch(f"mask is {mask.shape[1]}x{mask.shape[0]} but disparity is {values.shape[1]}x{values.shape[0]}")
    else:
        mask = values > 0
    return DisparityMap(values, mask)
