"""MetaImage (``.mhd`` + ``.raw``) reading and writing, float32 little-endian only."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .fields import DisplacementField, GridGeometry, ScalarVolume


class VolumeFormatError(ValueError):
    pass


def _fmt(values):
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def write_volume(path, obj) -> Path:
    """Write a :class:`ScalarVolume` or :class:`DisplacementField`.

    The payload goes to a ``.raw`` file beside the header, x fastest, vector
    components interleaved per voxel.
    """
    path = Path(path)
    if path.suffix != ".mhd":
        path = path.with_suffix(".mhd")
    raw = path.with_suffix(".raw")
    geom = obj.geometry
    if isinstance(obj, DisplacementField):
        channels = 3
        # (3, nx, ny, nz) -> z, y, x, c in C order == x fastest, components innermost
        data = np.transpose(obj.u, (3, 2, 1, 0))
    elif isinstance(obj, ScalarVolume):
        channels = 1
        data = np.transpose(obj.values, (2, 1, 0))
    else:
        raise TypeError(f"cannot write {type(obj).__name__}")
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        f"DimSize = {_fmt(geom.dims)}",
        f"ElementSpacing = {_fmt(geom.spacing)}",
        f"Offset = {_fmt(geom.origin)}",
    ]
    if channels > 1:
        lines.append(f"ElementNumberOfChannels = {channels}")
    lines += ["ElementType = MET_FLOAT", f"ElementDataFile = {raw.name}"]
    path.write_text("\n".join(lines) + "\n")
    np.ascontiguousarray(data, dtype="<f4").tofile(raw)
    return path


def read_header(path) -> dict:
    header = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise VolumeFormatError(f"malformed header line {n}: {line!r}")
        key, value = line.split("=", 1)
        header[key.strip()] = value.strip()
    return header


def _numbers(header, key, cast, count=3, default=None):
    if key not in header:
        if default is not None:
            return default
        raise VolumeFormatError(f"missing header key {key}")
    try:
        vals = tuple(cast(v) for v in header[key].split())
    except ValueError:
        raise VolumeFormatError(f"malformed value for {key}: {header[key]!r}") from None
    if len(vals) != count:
        raise VolumeFormatError(f"{key} needs {count} values, got {len(vals)}")
    return vals


def read_volume(path):
    """Read a header written by :func:`write_volume` (or a compatible one)."""
    path = Path(path)
    header = read_header(path)
    ndims = _numbers(header, "NDims", int, count=1)[0]
    if ndims != 3:
        raise VolumeFormatError(f"NDims must be 3, got {ndims}")
    dims = _numbers(header, "DimSize", int)
    spacing = _numbers(header, "ElementSpacing", float, default=(1.0, 1.0, 1.0))
    origin = _numbers(header, "Offset", float, default=(0.0, 0.0, 0.0))
    etype = header.get("ElementType")
    if etype != "MET_FLOAT":
        raise VolumeFormatError(f"unsupported ElementType {etype!r}; only MET_FLOAT")
    if header.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise VolumeFormatError("unsupported BinaryDataByteOrderMSB = True; only little-endian")
    channels = _numbers(header, "ElementNumberOfChannels", int, count=1, default=(1,))[0]
    if channels not in (1, 3):
        raise VolumeFormatError(f"unsupported ElementNumberOfChannels {channels}")
    if "ElementDataFile" not in header:
        raise VolumeFormatError("missing header key ElementDataFile")
    raw = path.parent / header["ElementDataFile"]
    try:
        geom = GridGeometry(dims, spacing, origin)
    except ValueError as exc:
        raise VolumeFormatError(f"invalid DimSize/ElementSpacing: {exc}") from None
    expected = geom.n_voxels * channels * 4
    actual = raw.stat().st_size
    if actual != expected:
        raise VolumeFormatError(f"size mismatch: DimSize implies {expected} bytes, {raw.name} has {actual}")
    data = np.fromfile(raw, dtype="<f4").astype(np.float64)
    nx, ny, nz = dims
    if channels == 3:
        return DisplacementField(geom, np.transpose(data.reshape(nz, ny, nx, 3), (3, 2, 1, 0)))
    return ScalarVolume(geom, np.transpose(data.reshape(nz, ny, nx), (2, 1, 0)))
