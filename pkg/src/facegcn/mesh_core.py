"""Textured triangular meshes: loading, validation, writing, edge graph.

Supported formats are a small OBJ subset (``v x y z [r g b]``, ``vt u v``,
``f i j k`` or ``f i/ti j/tj k/tk``) and a PLY subset (ascii or
binary_little_endian 1.0, float x/y/z, optional uchar red/green/blue,
optional float u/v, uchar+int32 face lists). The canonical writer is ascii
PLY with 9 significant digits.

All float geometry is quantized through float32 at load time (PLY's
``float`` property is 32-bit) and stored in float64 arrays, which is what
makes write/load round trips bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvariantError, ParseError

DEFAULT_COLOR = (0.5, 0.5, 0.5)


@dataclass(frozen=True)
class TexturedMesh:
    """One frame of a raw 3D scan: geometry, topology, per-vertex color."""

    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) int64
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    uv: np.ndarray | None = None  # (N, 2) float64 in [0, 1]^2

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    @classmethod
    def from_arrays(cls, vertices, faces, colors=None, uv=None) -> "TexturedMesh":
        """Normalize dtypes, default missing colors to mid-gray, freeze arrays."""
        vertices = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.ascontiguousarray(faces, dtype=np.int64).reshape(-1, 3)
        if colors is None:
            colors = np.tile(np.asarray(DEFAULT_COLOR), (vertices.shape[0], 1))
        colors = np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3)
        if uv is not None:
            uv = np.ascontiguousarray(uv, dtype=np.float64).reshape(-1, 2)
        for arr in (vertices, faces, colors, uv):
            if arr is not None:
                arr.flags.writeable = False
        return cls(vertices=vertices, faces=faces, colors=colors, uv=uv)


@dataclass(frozen=True)
class Violation:
    kind: str  # e.g. "face_index", "degenerate_face", "nan", "length", "range"
    where: str  # array name plus index, e.g. "vertices[3]"
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, kind: str, where: str, detail: str) -> None:
        self.violations.append(Violation(kind, where, detail))

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(f"{v.kind} at {v.where}: {v.detail}" for v in self.violations)


@dataclass(frozen=True)
class EdgeGraph:
    """Undirected weighted graph over mesh vertices, one edge per face edge.

    ``indptr``/``targets``/``weights_csr`` give CSR-style adjacency for
    traversal; ``edges``/``weights`` list each undirected edge once (u < v).
    """

    n_nodes: int
    edges: np.ndarray  # (E, 2) int64, u < v
    weights: np.ndarray  # (E,) float64, > 0
    indptr: np.ndarray  # (n_nodes + 1,) int64
    targets: np.ndarray  # (2E,) int64
    weights_csr: np.ndarray  # (2E,) float64

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def neighbors(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor vertex indices of v and the corresponding edge weights."""
        lo, hi = self.indptr[v], self.indptr[v + 1]
        return self.targets[lo:hi], self.weights_csr[lo:hi]


def validate_mesh(mesh: TexturedMesh) -> ValidationReport:
    """List every invariant violation; an empty report means the mesh is valid."""
    report = ValidationReport()
    n = mesh.n_vertices

    bad = ~np.isfinite(mesh.vertices).all(axis=1)
    for i in np.nonzero(bad)[0]:
        report.add("nan", f"vertices[{i}]", "non-finite coordinate")

    if mesh.colors.shape[0] != n:
        report.add("length", "colors", f"{mesh.colors.shape[0]} colors for {n} vertices")
    else:
        bad = ~np.isfinite(mesh.colors).all(axis=1)
        for i in np.nonzero(bad)[0]:
            report.add("nan", f"colors[{i}]", "non-finite component")
        good = np.isfinite(mesh.colors).all(axis=1)
        out = good & ((mesh.colors < 0.0) | (mesh.colors > 1.0)).any(axis=1)
        for i in np.nonzero(out)[0]:
            report.add("range", f"colors[{i}]", "component outside [0, 1]")

    if mesh.uv is not None:
        if mesh.uv.shape[0] != n:
            report.add("length", "uv", f"{mesh.uv.shape[0]} uv for {n} vertices")
        else:
            bad = ~np.isfinite(mesh.uv).all(axis=1)
            for i in np.nonzero(bad)[0]:
                report.add("nan", f"uv[{i}]", "non-finite component")
            good = np.isfinite(mesh.uv).all(axis=1)
            out = good & ((mesh.uv < 0.0) | (mesh.uv > 1.0)).any(axis=1)
            for i in np.nonzero(out)[0]:
                report.add("range", f"uv[{i}]", "component outside [0, 1]")

    all_indices_ok = True
    for fi, face in enumerate(mesh.faces):
        if (face < 0).any() or (face >= n).any():
            report.add("face_index", f"faces[{fi}]", f"index out of range in {tuple(face)}")
            all_indices_ok = False
        elif len(set(int(x) for x in face)) != 3:
            report.add("degenerate_face", f"faces[{fi}]", f"repeated vertex in {tuple(face)}")

    # coincident edge endpoints would give zero-weight edges downstream
    if all_indices_ok and mesh.n_faces and np.isfinite(mesh.vertices).all():
        f = mesh.faces
        pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]], axis=0)
        pairs = np.unique(np.sort(pairs, axis=1), axis=0)
        pairs = pairs[pairs[:, 0] != pairs[:, 1]]  # self-pairs are degenerate faces
        zero = (mesh.vertices[pairs[:, 0]] == mesh.vertices[pairs[:, 1]]).all(axis=1)
        for u, v in pairs[zero]:
            report.add("degenerate_edge", f"edge({u},{v})", "coincident endpoint positions")
    return report


def build_edge_graph(mesh: TexturedMesh) -> EdgeGraph:
    """Edge graph of the mesh: one undirected edge per unique face edge.

    Weights are the Euclidean distances between endpoint vertices. Raises
    InvariantError on invalid meshes or zero-length edges (weights must be
    positive for geodesic arc lengths to be strictly increasing).
    """
    report = validate_mesh(mesh)
    if not report.ok:
        raise InvariantError(f"mesh invalid: {report}")

    f = mesh.faces
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [0, 2]]], axis=0)
    pairs = np.sort(pairs, axis=1)
    if pairs.shape[0]:
        pairs = np.unique(pairs, axis=0)
    deltas = mesh.vertices[pairs[:, 0]] - mesh.vertices[pairs[:, 1]]
    weights = np.sqrt((deltas * deltas).sum(axis=1))
    if (weights <= 0.0).any():
        bad = int(np.nonzero(weights <= 0.0)[0][0])
        raise InvariantError(
            f"zero-length edge between vertices {tuple(pairs[bad])}: "
            "coincident positions are not usable for geodesics"
        )

    n = mesh.n_vertices
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    w2 = np.concatenate([weights, weights])
    order = np.argsort(src, kind="stable")
    src, dst, w2 = src[order], dst[order], w2[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    indptr = np.cumsum(indptr)

    for arr in (pairs, weights, indptr, dst, w2):
        arr.flags.writeable = False
    return EdgeGraph(
        n_nodes=n, edges=pairs, weights=weights, indptr=indptr, targets=dst, weights_csr=w2
    )


# ---------------------------------------------------------------------------
# loading


def _f32(text: str) -> float:
    # quantize through float32: the canonical domain of all on-disk floats
    return float(np.float32(text))


def load_mesh(path, fmt: str | None = None) -> TexturedMesh:
    """Load an OBJ or PLY mesh; format inferred from the extension by default.

    The returned mesh satisfies every TexturedMesh invariant (otherwise
    InvariantError); malformed records raise ParseError with a line number.
    """
    path = Path(path)
    if fmt is None:
        fmt = path.suffix.lower().lstrip(".")
    if fmt == "obj":
        mesh = _load_obj(path)
    elif fmt == "ply":
        mesh = _load_ply(path)
    else:
        raise ParseError(f"unsupported format {fmt!r} (expected obj or ply)", path=path)
    report = validate_mesh(mesh)
    if not report.ok:
        raise InvariantError(f"{path}: {report}")
    return mesh


def _load_obj(path: Path) -> TexturedMesh:
    vertices: list[tuple] = []
    colors: list[tuple | None] = []
    uvs: list[tuple] = []
    faces: list[tuple[int, int, int]] = []
    face_uv_refs: list[tuple[int, int, int] | None] = []

    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            kind, args = tok[0], tok[1:]
            if kind == "v":
                if len(args) not in (3, 6):
                    raise ParseError("v expects 3 or 6 floats", path=path, line=lineno)
                try:
                    vals = [_f32(a) for a in args]
                except ValueError:
                    raise ParseError("bad float in v record", path=path, line=lineno)
                vertices.append(tuple(vals[:3]))
                colors.append(tuple(vals[3:]) if len(vals) == 6 else None)
            elif kind == "vt":
                if len(args) != 2:
                    raise ParseError("vt expects 2 floats", path=path, line=lineno)
                try:
                    uvs.append((_f32(args[0]), _f32(args[1])))
                except ValueError:
                    raise ParseError("bad float in vt record", path=path, line=lineno)
            elif kind == "f":
                if len(args) != 3:
                    raise ParseError("f expects exactly 3 vertex references", path=path, line=lineno)
                vidx, tidx = [], []
                for ref in args:
                    parts = ref.split("/")
                    if len(parts) == 1:
                        v, t = parts[0], None
                    elif len(parts) == 2 and parts[1]:
                        v, t = parts
                    else:
                        raise ParseError(f"unsupported face reference {ref!r}", path=path, line=lineno)
                    try:
                        vi = int(v)
                        ti = int(t) if t is not None else None
                    except ValueError:
                        raise ParseError(f"bad index in face reference {ref!r}", path=path, line=lineno)
                    if vi < 1 or (ti is not None and ti < 1):
                        raise ParseError("OBJ indices are 1-based", path=path, line=lineno)
                    vidx.append(vi - 1)
                    tidx.append(ti - 1 if ti is not None else None)
                faces.append(tuple(vidx))
                face_uv_refs.append(tuple(tidx) if all(t is not None for t in tidx) else None)
            else:
                raise ParseError(f"unsupported OBJ record {kind!r}", path=path, line=lineno)

    n = len(vertices)
    color_arr = np.array(
        [c if c is not None else DEFAULT_COLOR for c in colors], dtype=np.float64
    ).reshape(n, 3)

    uv_arr = None
    if uvs:
        refs = [r for r in face_uv_refs if r is not None]
        if refs:
            uv_arr = np.zeros((n, 2), dtype=np.float64)
            for face, ref in zip(faces, face_uv_refs):
                if ref is None:
                    continue
                for vi, ti in zip(face, ref):
                    if ti >= len(uvs):
                        raise InvariantError(f"{path}: vt index {ti + 1} out of range")
                    if 0 <= vi < n:
                        uv_arr[vi] = uvs[ti]
        elif len(uvs) == n:
            uv_arr = np.asarray(uvs, dtype=np.float64)
        else:
            raise ParseError(
                f"{len(uvs)} vt records cannot be mapped onto {n} vertices", path=path
            )

    return TexturedMesh.from_arrays(
        np.array(vertices, dtype=np.float64).reshape(n, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 3),
        color_arr,
        uv_arr,
    )


_PLY_VERTEX_PROPS = {
    "x": "f", "y": "f", "z": "f",
    "red": "u", "green": "u", "blue": "u",
    "u": "f", "v": "f",
}


def _load_ply(path: Path) -> TexturedMesh:
    with open(path, "rb") as fh:
        data = fh.read()

    # header is ascii regardless of body encoding
    end = data.find(b"end_header\n")
    if end < 0:
        raise ParseError("missing end_header", path=path)
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()
    body = data[end + len(b"end_header\n"):]

    if not header_lines or header_lines[0].strip() != "ply":
        raise ParseError("not a PLY file", path=path)

    binary = None
    n_vertices = n_faces = None
    vprops: list[str] = []
    element = None
    for lineno, line in enumerate(header_lines[1:], start=2):
        tok = line.split()
        if not tok or tok[0] == "comment":
            continue
        if tok[0] == "format":
            if tok[1:] == ["ascii", "1.0"]:
                binary = False
            elif tok[1:] == ["binary_little_endian", "1.0"]:
                binary = True
            else:
                raise ParseError(f"unsupported format {' '.join(tok[1:])!r}", path=path, line=lineno)
        elif tok[0] == "element":
            if len(tok) != 3:
                raise ParseError("malformed element", path=path, line=lineno)
            element = tok[1]
            if element == "vertex":
                n_vertices = int(tok[2])
            elif element == "face":
                n_faces = int(tok[2])
            else:
                raise ParseError(f"unsupported element {element!r}", path=path, line=lineno)
        elif tok[0] == "property":
            if element == "vertex":
                if len(tok) != 3:
                    raise ParseError("malformed vertex property", path=path, line=lineno)
                ptype, name = tok[1], tok[2]
                if name not in _PLY_VERTEX_PROPS:
                    raise ParseError(f"unsupported vertex property {name!r}", path=path, line=lineno)
                want = _PLY_VERTEX_PROPS[name]
                if want == "f" and ptype not in ("float", "float32"):
                    raise ParseError(f"property {name} must be float", path=path, line=lineno)
                if want == "u" and ptype not in ("uchar", "uint8"):
                    raise ParseError(f"property {name} must be uchar", path=path, line=lineno)
                vprops.append(name)
            elif element == "face":
                if tok[1] != "list" or tok[2] not in ("uchar", "uint8") or tok[3] not in ("int", "int32"):
                    raise ParseError("face property must be `list uchar int32`", path=path, line=lineno)
            else:
                raise ParseError("property before any element", path=path, line=lineno)
        else:
            raise ParseError(f"unsupported header record {tok[0]!r}", path=path, line=lineno)

    if binary is None or n_vertices is None or n_faces is None:
        raise ParseError("header missing format/vertex/face declarations", path=path)
    if not {"x", "y", "z"} <= set(vprops):
        raise ParseError("vertex element must declare x, y, z", path=path)
    has_color = {"red", "green", "blue"} <= set(vprops)
    has_uv = {"u", "v"} <= set(vprops)

    if binary:
        verts, cols, uv, faces = _read_ply_binary(path, body, n_vertices, n_faces, vprops)
    else:
        body_line0 = len(header_lines) + 2  # first body line, 1-based
        verts, cols, uv, faces = _read_ply_ascii(
            path, body, n_vertices, n_faces, vprops, body_line0
        )

    return TexturedMesh.from_arrays(
        verts,
        faces,
        cols if has_color else None,
        uv if has_uv else None,
    )


def _read_ply_ascii(path, body: bytes, n_vertices, n_faces, vprops, line0=1):
    lines = body.decode("ascii", errors="replace").splitlines()
    if len(lines) < n_vertices + n_faces:
        raise ParseError(
            f"expected {n_vertices + n_faces} body lines, found {len(lines)}", path=path
        )
    verts = np.zeros((n_vertices, 3))
    cols = np.zeros((n_vertices, 3))
    uv = np.zeros((n_vertices, 2))
    for i in range(n_vertices):
        tok = lines[i].split()
        if len(tok) != len(vprops):
            raise ParseError(f"vertex record has {len(tok)} fields, expected {len(vprops)}",
                             path=path, line=line0 + i)
        try:
            vals = {name: tok[j] for j, name in enumerate(vprops)}
            verts[i] = (_f32(vals["x"]), _f32(vals["y"]), _f32(vals["z"]))
            if "red" in vals:
                cols[i] = (int(vals["red"]) / 255.0, int(vals["green"]) / 255.0,
                           int(vals["blue"]) / 255.0)
            if "u" in vals:
                uv[i] = (_f32(vals["u"]), _f32(vals["v"]))
        except ValueError:
            raise ParseError("bad numeric field in vertex record", path=path, line=line0 + i)
    faces = np.zeros((n_faces, 3), dtype=np.int64)
    for i in range(n_faces):
        tok = lines[n_vertices + i].split()
        if not tok or tok[0] != "3" or len(tok) != 4:
            raise ParseError("face record must be `3 i j k`", path=path,
                             line=line0 + n_vertices + i)
        try:
            faces[i] = [int(t) for t in tok[1:]]
        except ValueError:
            raise ParseError("bad face index", path=path, line=line0 + n_vertices + i)
    return verts, cols, uv, faces


def _read_ply_binary(path, body: bytes, n_vertices, n_faces, vprops):
    fmt = "<" + "".join("f" if _PLY_VERTEX_PROPS[p] == "f" else "B" for p in vprops)
    rec = struct.Struct(fmt)
    need = rec.size * n_vertices
    if len(body) < need:
        raise ParseError("truncated vertex data", path=path)
    verts = np.zeros((n_vertices, 3))
    cols = np.zeros((n_vertices, 3))
    uv = np.zeros((n_vertices, 2))
    for i in range(n_vertices):
        vals = dict(zip(vprops, rec.unpack_from(body, i * rec.size)))
        verts[i] = (vals["x"], vals["y"], vals["z"])
        if "red" in vals:
            cols[i] = (vals["red"] / 255.0, vals["green"] / 255.0, vals["blue"] / 255.0)
        if "u" in vals:
            uv[i] = (vals["u"], vals["v"])
    faces = np.zeros((n_faces, 3), dtype=np.int64)
    off = need
    frec = struct.Struct("<Biii")
    for i in range(n_faces):
        if off + frec.size > len(body):
            raise ParseError("truncated face data", path=path)
        cnt, a, b, c = frec.unpack_from(body, off)
        if cnt != 3:
            raise ParseError(f"face {i} has {cnt} vertices, only triangles supported", path=path)
        faces[i] = (a, b, c)
        off += frec.size
    return verts, cols, uv, faces


# ---------------------------------------------------------------------------
# writing


def _fmt32(x: float) -> str:
    return "%.9g" % float(np.float32(x))


def _color_byte(c: float) -> int:
    return min(255, max(0, int(np.floor(c * 255.0 + 0.5))))


def write_mesh(mesh: TexturedMesh, path, fmt: str = "ply") -> None:
    """Write a mesh; ``fmt`` is ``ply`` (canonical ascii), ``ply-binary`` or ``obj``."""
    path = Path(path)
    if fmt == "ply":
        _write_ply_ascii(mesh, path)
    elif fmt == "ply-binary":
        _write_ply_binary(mesh, path)
    elif fmt == "obj":
        _write_obj(mesh, path)
    else:
        raise ValueError(f"unsupported write format {fmt!r}")


def _ply_header(mesh: TexturedMesh, binary: bool) -> str:
    lines = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {mesh.n_vertices}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ]
    if mesh.uv is not None:
        lines += ["property float u", "property float v"]
    lines += [
        f"element face {mesh.n_faces}",
        "property list uchar int32 vertex_indices",
        "end_header",
    ]
    return "\n".join(lines) + "\n"


def _write_ply_ascii(mesh: TexturedMesh, path: Path) -> None:
    out = [_ply_header(mesh, binary=False)]
    for i in range(mesh.n_vertices):
        fields = [_fmt32(v) for v in mesh.vertices[i]]
        fields += [str(_color_byte(c)) for c in mesh.colors[i]]
        if mesh.uv is not None:
            fields += [_fmt32(v) for v in mesh.uv[i]]
        out.append(" ".join(fields) + "\n")
    for face in mesh.faces:
        out.append("3 %d %d %d\n" % tuple(face))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(out))


def _write_ply_binary(mesh: TexturedMesh, path: Path) -> None:
    parts = [_ply_header(mesh, binary=True).encode("ascii")]
    has_uv = mesh.uv is not None
    rec = struct.Struct("<fffBBB" + ("ff" if has_uv else ""))
    for i in range(mesh.n_vertices):
        vals = [np.float32(v) for v in mesh.vertices[i]]
        vals += [_color_byte(c) for c in mesh.colors[i]]
        if has_uv:
            vals += [np.float32(v) for v in mesh.uv[i]]
        parts.append(rec.pack(*vals))
    frec = struct.Struct("<Biii")
    for face in mesh.faces:
        parts.append(frec.pack(3, *[int(x) for x in face]))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _write_obj(mesh: TexturedMesh, path: Path) -> None:
    out = []
    for i in range(mesh.n_vertices):
        coord = " ".join(_fmt32(v) for v in mesh.vertices[i])
        col = " ".join(_fmt32(c) for c in mesh.colors[i])
        out.append(f"v {coord} {col}\n")
    if mesh.uv is not None:
        for i in range(mesh.n_vertices):
            out.append(f"vt {_fmt32(mesh.uv[i][0])} {_fmt32(mesh.uv[i][1])}\n")
        for face in mesh.faces:
            out.append("f %d/%d %d/%d %d/%d\n" % tuple(int(x) + 1 for x in face for _ in (0, 1)))
    else:
        for face in mesh.faces:
            out.append("f %d %d %d\n" % tuple(int(x) + 1 for x in face))
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("".join(out))
