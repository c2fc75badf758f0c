"""File formats: binary arrays, MSH 2.2 meshes, XDMF export, reports.

Binary artifacts share one layout: the 8-byte magic ``HSML0001``, a
little-endian ``u64`` element count, then that many little-endian float64
values. Shapes live in accompanying text metadata.
"""

from __future__ import annotations

import csv
import io as _io
import os
import struct
import warnings
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .mesh import MeshError, VolumeMesh

MAGIC = b"HSML0001"
HEADER = struct.Struct("<8sQ")


class FormatError(ValueError):
    pass


# -- raw binary arrays -----------------------------------------------------


def pack_array(values):
    data = np.ascontiguousarray(np.asarray(values, dtype="<f8").ravel())
    return HEADER.pack(MAGIC, data.size) + data.tobytes()


def unpack_array(blob):
    if len(blob) < HEADER.size:
        raise FormatError("file too short for header")
    magic, count = HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    body = blob[HEADER.size :]
    if len(body) != 8 * count:
        raise FormatError(f"header announces {count} values, file holds {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(float)


def write_array(path, values):
    Path(path).write_bytes(pack_array(values))


def read_array(path, shape=None):
    arr = unpack_array(Path(path).read_bytes())
    return arr.reshape(shape) if shape is not None else arr


# -- key-value text and CSV ------------------------------------------------


def write_kv(path, mapping):
    lines = [f"{k} = {_kv_value(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _kv_value(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(_kv_value(x) for x in v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def read_kv(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_csv(path, header, rows):
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path):
    """Return ``(header, rows)`` with numeric cells converted to float."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[_num(c) for c in row] for row in reader]
    return header, rows


def _num(cell):
    try:
        return float(cell)
    except ValueError:
        return cell


# -- MSH 2.2 ---------------------------------------------------------------


def _sections(text):
    lines = text.splitlines()
    out = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            end = f"$End{name}"
            j = i + 1
            while j < len(lines) and lines[j].strip() != end:
                j += 1
            if j == len(lines):
                raise FormatError(f"section ${name} is not terminated")
            out[name] = [s.strip() for s in lines[i + 1 : j]]
            i = j
        i += 1
    return out


def parse_msh(text):
    """Parse an ASCII MSH 2.2 document into a :class:`VolumeMesh`.

    Tetrahedra (type 4) become volume elements and triangles (type 2)
    boundary faces tagged with their physical group name. Other element types
    are skipped; the number skipped is reported through a warning.
    """
    sec = _sections(text)
    if "MeshFormat" not in sec:
        raise FormatError("missing $MeshFormat section")
    header = sec["MeshFormat"][0].split()
    if header[0] not in ("2.2", "2"):
        raise FormatError(f"unsupported MSH version {header[0]}; only 2.2 ASCII is read")
    if len(header) > 1 and header[1] != "0":
        raise FormatError("binary MSH files are not supported")
    for name in ("Nodes", "Elements"):
        if name not in sec:
            raise FormatError(f"missing ${name} section")

    names = {}
    for line in sec.get("PhysicalNames", [])[1:]:
        dim, tag, label = line.split(maxsplit=2)
        names[int(tag)] = label.strip('"')

    node_lines = sec["Nodes"]
    n = int(node_lines[0])
    ids = np.empty(n, dtype=np.int64)
    coords = np.empty((n, 3))
    for i, line in enumerate(node_lines[1 : n + 1]):
        parts = line.split()
        ids[i] = int(parts[0])
        coords[i] = [float(v) for v in parts[1:4]]
    index = {int(k): i for i, k in enumerate(ids)}

    tets, faces, tags = [], [], []
    skipped = 0
    elem_lines = sec["Elements"]
    for line in elem_lines[1 : int(elem_lines[0]) + 1]:
        parts = [int(v) for v in line.split()]
        etype, ntags = parts[1], parts[2]
        conn = parts[3 + ntags :]
        if etype not in (2, 4):
            skipped += 1
            continue
        try:
            local = [index[c] for c in conn]
        except KeyError as exc:
            raise FormatError(f"element {parts[0]} references unknown node {exc.args[0]}") from None
        if etype == 4:
            tets.append(local)
        else:
            physical = parts[3] if ntags > 0 else 0
            faces.append(local)
            tags.append(names.get(physical, str(physical)))
    if skipped:
        warnings.warn(f"skipped {skipped} elements of unsupported type", stacklevel=2)
    if not tets:
        raise FormatError("no volume elements")
    return VolumeMesh(
        coords,
        np.asarray(tets, dtype=np.int64),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        tuple(tags),
    )


def write_msh(mesh):
    """Serialize ``mesh`` as MSH 2.2 ASCII with named physical groups."""
    labels = sorted(set(mesh.boundary_tags))
    ids = {name: i + 1 for i, name in enumerate(labels)}
    vol_tag = len(labels) + 1
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(labels) + 1)]
    out += [f'2 {ids[name]} "{name}"' for name in labels]
    out += [f'3 {vol_tag} "volume"', "$EndPhysicalNames", "$Nodes", str(mesh.n_nodes)]
    out += [f"{i + 1} {p[0]!r} {p[1]!r} {p[2]!r}" for i, p in enumerate(mesh.nodes.tolist())]
    out += ["$EndNodes", "$Elements", str(len(mesh.boundary_faces) + len(mesh.tets))]
    k = 1
    for face, name in zip(mesh.boundary_faces.tolist(), mesh.boundary_tags):
        out.append(f"{k} 2 2 {ids[name]} {ids[name]} " + " ".join(str(v + 1) for v in face))
        k += 1
    for tet in mesh.tets.tolist():
        out.append(f"{k} 4 2 {vol_tag} {vol_tag} " + " ".join(str(v + 1) for v in tet))
        k += 1
    out.append("$EndElements")
    return "\n".join(out) + "\n"


def read_msh(path):
    return parse_msh(Path(path).read_text())


# -- XDMF with binary sidecar ----------------------------------------------


def _fmt(v):
    return "%.17g" % v


def write_xdmf(series, mesh, stem):
    """Write ``stem.xdmf`` and its ``stem.bin`` sidecar; return both paths.

    Sidecar layout: header, node coordinates (N x 3), then for each time step
    one block of N values per component. Topology is written inline.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(series.values, dtype=float)
    T, C, N = values.shape
    if N != mesh.n_nodes:
        raise FormatError(f"field has {N} nodes, mesh has {mesh.n_nodes}")
    if len(series.names) != C:
        raise FormatError("one name per component required")
    blocks = [np.asarray(mesh.nodes, dtype=float)] + [values[i, c] for i in range(T) for c in range(C)]
    payload = np.concatenate([b.ravel() for b in blocks])
    bin_path = stem.with_suffix(".bin")
    bin_path.write_bytes(pack_array(payload))

    root = ET.Element("Xdmf", {"Version": "3.0"})
    domain = ET.SubElement(root, "Domain")
    coll = ET.SubElement(domain, "Grid", {"Name": "TimeSeries", "GridType": "Collection", "CollectionType": "Temporal"})
    topo_text = "\n".join(" ".join(str(v) for v in tet) for tet in mesh.tets.tolist())
    geom_offset = HEADER.size
    offset = geom_offset + 8 * 3 * N
    for i in range(T):
        grid = ET.SubElement(coll, "Grid", {"Name": f"step_{i}", "GridType": "Uniform"})
        ET.SubElement(grid, "Time", {"Value": _fmt(float(series.times[i]))})
        topo = ET.SubElement(grid, "Topology", {"TopologyType": "Tetrahedron", "NumberOfElements": str(len(mesh.tets))})
        item = ET.SubElement(topo, "DataItem", {"Format": "XML", "NumberType": "Int", "Dimensions": f"{len(mesh.tets)} 4"})
        item.text = topo_text
        geom = ET.SubElement(grid, "Geometry", {"GeometryType": "XYZ"})
        _binary_item(geom, bin_path.name, geom_offset, f"{N} 3")
        for c, name in enumerate(series.names):
            attr = ET.SubElement(grid, "Attribute", {"Name": name, "AttributeType": "Scalar", "Center": "Node"})
            _binary_item(attr, bin_path.name, offset, str(N))
            offset += 8 * N
    ET.indent(root)
    xml = '<?xml version="1.0" ?>\n' + ET.tostring(root, encoding="unicode") + "\n"
    xdmf_path = stem.with_suffix(".xdmf")
    xdmf_path.write_text(xml)
    return xdmf_path, bin_path


def _binary_item(parent, name, seek, dims):
    attrs = {
        "Format": "Binary",
        "Endian": "Little",
        "Precision": "8",
        "NumberType": "Float",
        "Seek": str(seek),
        "Dimensions": dims,
    }
    item = ET.SubElement(parent, "DataItem", attrs)
    item.text = name
    return item


def read_xdmf(path):
    """Read back an XDMF bundle written by :func:`write_xdmf`.

    Returns ``(nodes, tets, times, values (T, C, N), names)``.
    """
    path = Path(path)
    root = ET.parse(path).getroot()
    grids = root.find("Domain").find("Grid").findall("Grid")
    if not grids:
        raise FormatError("no grids in XDMF file")
    cache = {}

    def load(item):
        if item.get("Format") == "XML":
            return np.array(item.text.split(), dtype=np.int64)
        file = path.parent / item.text.strip()
        if file not in cache:
            blob = file.read_bytes()
            unpack_array(blob)  # validates header and size
            cache[file] = blob
        blob = cache[file]
        seek = int(item.get("Seek", "0"))
        count = int(np.prod([int(d) for d in item.get("Dimensions").split()]))
        if seek + 8 * count > len(blob):
            raise FormatError(f"data range {seek}+{8 * count} exceeds sidecar of {len(blob)} bytes")
        return np.frombuffer(blob, dtype="<f8", count=count, offset=seek).astype(float)

    first = grids[0]
    tets = load(first.find("Topology").find("DataItem")).reshape(-1, 4)
    nodes = load(first.find("Geometry").find("DataItem")).reshape(-1, 3)
    names = [a.get("Name") for a in first.findall("Attribute")]
    times, values = [], []
    for grid in grids:
        times.append(float(grid.find("Time").get("Value")))
        values.append([load(a.find("DataItem")) for a in grid.findall("Attribute")])
    return nodes, tets, np.array(times), np.array(values), names


# -- reports ---------------------------------------------------------------


def relative_errors(estimates, expected):
    est = np.asarray(estimates, dtype=float)
    ref = np.asarray(expected, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ref != 0, np.abs(est - ref) / np.abs(ref), np.abs(est - ref))


def format_report(rom_errors=None, pinn_estimates=None, title="hsml report"):
    """Aligned text report.

    ``pinn_estimates`` is a dict with ``names``, ``estimates`` and optional
    ``expected``; ``rom_errors`` is the dict returned by
    :func:`hsml.rom.error_analysis`.
    """
    lines = [title, ""]
    if pinn_estimates:
        names = list(pinn_estimates["names"])
        est = list(pinn_estimates["estimates"])
        exp = pinn_estimates.get("expected")
        lines.append("Parameter estimates")
        if exp is not None:
            rel = relative_errors(est, exp)
            lines.append(f"{'parameter':<10}{'estimate':>14}{'expected':>14}{'rel. error':>14}")
            for n, e, x, r in zip(names, est, exp, rel):
                lines.append(f"{n:<10}{e:>14.4f}{x:>14.4f}{r:>14.4e}")
        else:
            lines.append(f"{'parameter':<10}{'estimate':>14}")
            for n, e in zip(names, est):
                lines.append(f"{n:<10}{e:>14.4f}")
        lines.append("")
    if rom_errors:
        lines.append("ROM errors vs full order")
        cols = ["mean_abs", "max_abs", "mean_rel", "max_rel"]
        lines.append(f"{'k':>4}" + "".join(f"{c:>14}" for c in cols))
        for i, k in enumerate(rom_errors["k"]):
            lines.append(f"{int(k):>4}" + "".join(f"{rom_errors[c][i]:>14.4e}" for c in cols))
        lines.append("")
    return "\n".join(lines)


def write_report(rom_errors, pinn_estimates, path, title="hsml report"):
    """Write the text report at ``path`` and, with ROM errors, ``<stem>_rom.csv``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(rom_errors, pinn_estimates, title))
    written = [path]
    if rom_errors:
        csv_path = path.with_name(path.stem + "_rom.csv")
        cols = ["mean_abs", "max_abs", "mean_rel", "max_rel"]
        rows = [[int(k)] + [float(rom_errors[c][i]) for c in cols] for i, k in enumerate(rom_errors["k"])]
        write_csv(csv_path, ["k"] + cols, rows)
        written.append(csv_path)
    return written


def ensure_dir(path, force=False):
    """Create an output directory; an existing non-empty one needs ``force``."""
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(f"output directory {path} is not empty (use --force)")
    os.makedirs(path, exist_ok=True)
    return path


__all__ = [
    "FormatError",
    "MeshError",
    "pack_array",
    "unpack_array",
    "write_array",
    "read_array",
    "write_kv",
    "read_kv",
    "write_csv",
    "read_csv",
    "parse_msh",
    "write_msh",
    "read_msh",
    "write_xdmf",
    "read_xdmf",
    "relative_errors",
    "format_report",
    "write_report",
    "ensure_dir",
]
