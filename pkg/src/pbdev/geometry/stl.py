"""Binary and ASCII STL reading/writing."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .types import GeometryError, TriangleMesh

DEDUP_TOL = 1e-6

_RECORD = np.dtype([("normal", "<f4", (3,)), ("vertices", "<f4", (3, 3)), ("attr", "<u2")])


class StlError(GeometryError):
    """Malformed STL payload."""


def parse_stl(data: bytes, dedup_tol: float = DEDUP_TOL) -> TriangleMesh:
    """Parse a binary or ASCII STL into an indexed mesh.

    Binary is recognised by its size matching the declared triangle count,
    so binary files whose header happens to start with ``solid`` still load.
    Vertices closer than ``dedup_tol`` mm (per axis, after snapping to that
    grid) are merged to recover shared topology.
    """
    data = bytes(data)
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            return _from_soup(_parse_binary(data, count), dedup_tol)
    if data.lstrip()[:5].lower() == b"solid":
        return _from_soup(_parse_ascii(data), dedup_tol)
    if len(data) < 84:
        raise StlError(f"truncated: {len(data)} bytes is shorter than the 84-byte binary header")
    (count,) = struct.unpack_from("<I", data, 80)
    have = (len(data) - 84) / 50
    if have < count:
        raise StlError(f"truncated: header declares {count} triangles, file holds {int(have)}")
    raise StlError(f"triangle count mismatch: header declares {count}, payload holds {have:g} records")


def _parse_binary(data: bytes, count: int) -> np.ndarray:
    rec = np.frombuffer(data, dtype=_RECORD, count=count, offset=84)
    return rec["vertices"].astype(np.float64)


def _parse_ascii(data: bytes) -> np.ndarray:
    try:
        text = data.decode("ascii")
    except UnicodeDecodeError as exc:
        raise StlError("ASCII STL contains non-ASCII bytes") from exc
    tokens = iter(text.split())
    tris = []
    try:
        if next(tokens).lower() != "solid":
            raise StlError("ASCII STL must start with 'solid'")
        tok = next(tokens)
        while tok.lower() != "facet":
            if tok.lower() == "endsolid":
                return np.zeros((0, 3, 3))
            tok = next(tokens)  # solid name
        while True:
            if tok.lower() == "endsolid":
                break
            if tok.lower() != "facet":
                raise StlError(f"expected 'facet', got {tok!r}")
            _expect(tokens, "normal")
            [next(tokens) for _ in range(3)]
            _expect(tokens, "outer")
            _expect(tokens, "loop")
            tri = []
            for _ in range(3):
                _expect(tokens, "vertex")
                tri.append([float(next(tokens)) for _ in range(3)])
            _expect(tokens, "endloop")
            _expect(tokens, "endfacet")
            tris.append(tri)
            tok = next(tokens, "endsolid")
    except StopIteration:
        raise StlError("truncated: ASCII STL ended inside a facet") from None
    except ValueError as exc:
        if isinstance(exc, StlError):
            raise
        raise StlError(f"bad number in ASCII STL: {exc}") from None
    return np.array(tris, dtype=np.float64).reshape(-1, 3, 3)


def _expect(tokens, word):
    tok = next(tokens)
    if tok.lower() != word:
        raise StlError(f"expected {word!r}, got {tok!r}")


def _from_soup(soup: np.ndarray, dedup_tol: float) -> TriangleMesh:
    if not np.all(np.isfinite(soup)):
        raise StlError("non-finite vertex coordinate")
    flat = soup.reshape(-1, 3)
    keys = np.round(flat / dedup_tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    # Keep vertices in first-seen order so output is stable across numpy versions.
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    verts = flat[first[order]]
    tris = rank[inverse.reshape(-1)].reshape(-1, 3)
    return TriangleMesh(verts, tris)


def stl_bytes(mesh: TriangleMesh, header: bytes = b"pbdev binary STL") -> bytes:
    """Serialise to binary STL (float32 coordinates, zero attribute)."""
    rec = np.zeros(len(mesh.triangles), dtype=_RECORD)
    rec["normal"] = mesh.face_normals
    rec["vertices"] = mesh.corners
    return header[:80].ljust(80, b"\0") + struct.pack("<I", len(rec)) + rec.tobytes()


def stl_ascii(mesh: TriangleMesh, name: str = "pbdev") -> str:
    lines = [f"solid {name}"]
    for n, tri in zip(mesh.face_normals, mesh.corners):
        lines.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        lines.append("    outer loop")
        lines += [f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}" for v in tri]
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return "\n".join(lines) + "\n"


def read_stl(path) -> TriangleMesh:
    return parse_stl(Path(path).read_bytes())


def write_stl(mesh: TriangleMesh, path, ascii: bool = False) -> None:
    path = Path(path)
    if ascii:
        path.write_text(stl_ascii(mesh), encoding="ascii")
    else:
        path.write_bytes(stl_bytes(mesh))
