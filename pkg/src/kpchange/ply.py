"""PLY reader/writer for labeled, feature-carrying point clouds.

Supported formats: ascii and binary_little_endian, vertex element only.
Recognized properties: x/y/z (written as float64), an unsigned 8-bit
``label``, and float32 feature channels ``f0`` .. ``f9``. Unknown vertex
properties are skipped with a single warning per file.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from kpchange.cloud import PointCloud

N_FEATURES = 10

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def read_ply(path, epoch_tag: str = "PC1") -> PointCloud:
    path = Path(path)
    with open(path, "rb") as fh:
        line = fh.readline().strip()
        if line != b"ply":
            raise ValueError(f"{path}: not a PLY file")
        fmt = None
        n_vertex = None
        props: list[tuple[str, str]] = []
        in_vertex = False
        while True:
            raw = fh.readline()
            if not raw:
                raise ValueError(f"{path}: unexpected end of header")
            line = raw.decode("ascii").strip()
            if line.startswith("comment"):
                continue
            if line.startswith("format"):
                fmt = line.split()[1]
                if fmt not in ("ascii", "binary_little_endian"):
                    raise ValueError(f"{path}: unsupported format {fmt!r}")
            elif line.startswith("element"):
                _, name, count = line.split()
                if name == "vertex":
                    in_vertex = True
                    n_vertex = int(count)
                else:
                    if n_vertex is None:
                        raise ValueError(f"{path}: element {name!r} before vertex is unsupported")
                    in_vertex = False
            elif line.startswith("property") and in_vertex:
                parts = line.split()
                if parts[1] == "list":
                    raise ValueError(f"{path}: list vertex properties are unsupported")
                ply_type, name = parts[1], parts[2]
                if ply_type not in _PLY_DTYPES:
                    raise ValueError(f"{path}: unknown property type {ply_type!r}")
                props.append((name, _PLY_DTYPES[ply_type]))
            elif line == "end_header":
                break
        if n_vertex is None:
            raise ValueError(f"{path}: no vertex element")
        names = [p[0] for p in props]
        for coord in ("x", "y", "z"):
            if coord not in names:
                raise ValueError(f"{path}: missing coordinate property {coord!r}")
        feat_names = [f"f{i}" for i in range(N_FEATURES)]
        known = set(("x", "y", "z", "label", *feat_names))
        unknown = [n for n in names if n not in known]
        if unknown:
            warnings.warn(f"{path}: ignoring unknown PLY properties {unknown}")

        dtype = np.dtype([(n, "<" + t) for n, t in props])
        if fmt == "ascii":
            rows = []
            for _ in range(n_vertex):
                rows.append(tuple(fh.readline().split()))
            data = np.array(rows, dtype=dtype)
        else:
            data = np.frombuffer(fh.read(dtype.itemsize * n_vertex), dtype=dtype, count=n_vertex)

    points = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    labels = data["label"].astype(np.int64) if "label" in names else None
    features = None
    if all(f in names for f in feat_names):
        features = np.stack([data[f] for f in feat_names], axis=1).astype(np.float64)
    return PointCloud(points=points, features=features, labels=labels, epoch_tag=epoch_tag)


def write_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    path = Path(path)
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    header_props = ["property double x", "property double y", "property double z"]
    if cloud.labels is not None:
        fields.append(("label", "<u1"))
        header_props.append("property uchar label")
    if cloud.features is not None:
        if cloud.features.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} feature channels, got {cloud.features.shape[1]}")
        for i in range(N_FEATURES):
            fields.append((f"f{i}", "<f4"))
            header_props.append(f"property float f{i}")
    data = np.empty(cloud.n, dtype=np.dtype(fields))
    data["x"], data["y"], data["z"] = cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]
    if cloud.labels is not None:
        data["label"] = cloud.labels.astype(np.uint8)
    if cloud.features is not None:
        for i in range(N_FEATURES):
            data[f"f{i}"] = cloud.features[:, i].astype(np.float32)

    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join([
        "ply",
        f"format {fmt} 1.0",
        f"element vertex {cloud.n}",
        *header_props,
        "end_header",
    ]) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(data.tobytes())
        else:
            for row in data:
                parts = []
                for (name, t) in fields:
                    v = row[name]
                    if t == "<u1":
                        parts.append(str(int(v)))
                    else:
                        parts.append(repr(float(v)))
                fh.write((" ".join(parts) + "\n").encode("ascii"))
