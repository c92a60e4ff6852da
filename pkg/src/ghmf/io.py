"""Problem spec files, binary field files and solution output.

Problem spec grammar (UTF-8, one statement per line, ``#`` starts a
comment)::

    grid <d1> [<d2> [<d3>]]
    node <name> parent=<name|ROOT> [data=<path|const:<float>>] [smooth=<path|const:<float>>]

``grid`` must be the first statement. ``ROOT`` is the implicit source
node. Omitted data means no data term; omitted smooth means zero. Paths
are relative to the spec file. Ishikawa level specs use the same
conventions with ``level <i> [data=...] [smooth=...]`` statements.

Field files: ``b"GHMF"``, version byte 1, rank byte, one little-endian
u32 per axis, then little-endian float64 values in row-major order.
"""

from __future__ import annotations

import math
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .fields import GridGeometry
from .hierarchy import ROOT, HierarchyError, build_hierarchy
from .problem import GhmfProblem
from .reductions import IshikawaSpec, PottsSpec, ReconstructionMap
from .solver import Solution, threshold

MAGIC = b"GHMF"
VERSION = 1
PathLike = Union[str, os.PathLike]

_NAME = re.compile(r"[^\s=#]+$")


class FieldFileError(ValueError):
    pass


class BadMagic(FieldFileError):
    pass


class DimsMismatch(FieldFileError):
    pass


class Truncated(FieldFileError):
    pass


class ParseError(ValueError):
    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


# -- field files -------------------------------------------------------------


def encode_field(values: np.ndarray) -> bytes:
    values = np.asarray(values, dtype=np.float64)
    if not 1 <= values.ndim <= 3:
        raise ValueError(f"fields have rank 1 to 3, got {values.ndim}")
    header = MAGIC + struct.pack("<BB", VERSION, values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
    return header + np.ascontiguousarray(values, dtype="<f8").tobytes()


def decode_field(blob: bytes, geometry: Optional[GridGeometry] = None) -> np.ndarray:
    if len(blob) < 6:
        raise Truncated("field file shorter than its header")
    if blob[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {blob[:4]!r}")
    version, rank = struct.unpack_from("<BB", blob, 4)
    if version != VERSION:
        raise BadMagic(f"unsupported field file version {version}")
    if not 1 <= rank <= 3:
        raise FieldFileError(f"invalid rank {rank}")
    if len(blob) < 6 + 4 * rank:
        raise Truncated("field file shorter than its header")
    dims = struct.unpack_from(f"<{rank}I", blob, 6)
    if geometry is not None and tuple(dims) != geometry.dims:
        raise DimsMismatch(f"field file has dims {dims}, expected {geometry.dims}")
    start = 6 + 4 * rank
    expected = int(np.prod(dims)) * 8
    payload = blob[start:]
    if len(payload) < expected:
        raise Truncated(f"payload has {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise FieldFileError(f"payload has {len(payload) - expected} trailing bytes")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)


def write_field(values: np.ndarray, path: PathLike) -> None:
    Path(path).write_bytes(encode_field(values))


def read_field(path: PathLike, geometry: Optional[GridGeometry] = None) -> np.ndarray:
    return decode_field(Path(path).read_bytes(), geometry)


def write_pgm(label_map: np.ndarray, path: PathLike) -> None:
    """8-bit binary PGM; rows are the first grid axis."""
    label_map = np.asarray(label_map)
    if label_map.ndim != 2:
        raise ValueError("PGM output needs a 2-D map")
    if label_map.min(initial=0) < 0 or label_map.max(initial=0) > 255:
        raise ValueError("label ids do not fit in 8 bits")
    rows, cols = label_map.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + label_map.astype(np.uint8).tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(blob[-rows * cols:], dtype=np.uint8).reshape(rows, cols).astype(int)


# -- spec files ---------------------------------------------------------------


@dataclass
class _Statement:
    line: int
    keyword: str
    args: list[tuple[str, int]]  # (token, column)


def _statements(text: str) -> list[_Statement]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        tokens = [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", body)]
        if tokens:
            out.append(_Statement(lineno, tokens[0][0], tokens[1:]))
    return out


def _grid(stmts: list[_Statement]) -> GridGeometry:
    if not stmts or stmts[0].keyword != "grid":
        line = stmts[0].line if stmts else 1
        raise ParseError(line, 1, "the first statement must be 'grid <d1> [<d2> [<d3>]]'")
    g = stmts[0]
    if not 1 <= len(g.args) <= 3:
        raise ParseError(g.line, 1, "grid takes 1 to 3 extents")
    dims = []
    for tok, col in g.args:
        if not tok.isdigit() or int(tok) < 1:
            raise ParseError(g.line, col, f"grid extent must be a positive integer, got {tok!r}")
        dims.append(int(tok))
    for s in stmts[1:]:
        if s.keyword == "grid":
            raise ParseError(s.line, 1, "grid declared more than once")
    return GridGeometry(tuple(dims))


def _options(stmt: _Statement, start: int, allowed: tuple[str, ...]) -> dict[str, tuple[str, int]]:
    opts: dict[str, tuple[str, int]] = {}
    for tok, col in stmt.args[start:]:
        key, sep, value = tok.partition("=")
        if not sep or key not in allowed:
            raise ParseError(stmt.line, col, f"unexpected {tok!r}; expected one of " + ", ".join(f"{k}=..." for k in allowed))
        if key in opts:
            raise ParseError(stmt.line, col, f"{key} given twice")
        if not value:
            raise ParseError(stmt.line, col, f"{key} needs a value")
        opts[key] = (value, col + len(key) + 1)
    return opts


def _term(value: str, col: int, line: int, geometry: GridGeometry, base: Path, what: str) -> np.ndarray:
    if value.startswith("const:"):
        try:
            x = float(value[6:])
        except ValueError:
            raise ParseError(line, col, f"bad constant {value[6:]!r} for {what}") from None
        if not math.isfinite(x):
            raise ParseError(line, col, f"{what} constant must be finite")
        return geometry.full(x)
    path = base / value
    try:
        arr = read_field(path, geometry)
    except OSError as exc:
        raise ParseError(line, col, f"cannot read {what} file {value!r}: {exc.strerror or exc}") from None
    except FieldFileError as exc:
        raise ParseError(line, col, f"{what} file {value!r}: {exc}") from None
    if not np.all(np.isfinite(arr)):
        raise ParseError(line, col, f"{what} file {value!r} contains non-finite values")
    return arr


def _name(tok: str, col: int, line: int) -> str:
    if not _NAME.match(tok):
        raise ParseError(line, col, f"invalid label name {tok!r}")
    return tok


def parse_problem(text: str, base_dir: PathLike = ".") -> GhmfProblem:
    """Parse a problem spec; field paths resolve against ``base_dir``."""
    base = Path(base_dir)
    stmts = _statements(text)
    geometry = _grid(stmts)
    edges = []
    where: dict[str, _Statement] = {}
    data: dict[str, np.ndarray] = {}
    smooth: dict[str, np.ndarray] = {}
    for s in stmts[1:]:
        if s.keyword != "node":
            raise ParseError(s.line, 1, f"unknown statement {s.keyword!r}")
        if not s.args:
            raise ParseError(s.line, 1, "node needs a name")
        name = _name(*s.args[0], s.line)
        if name == ROOT:
            raise ParseError(s.line, s.args[0][1], f"{ROOT} is reserved for the source node")
        if name in where:
            raise ParseError(s.line, s.args[0][1], f"duplicate node {name!r} (first declared on line {where[name].line})")
        opts = _options(s, 1, ("parent", "data", "smooth"))
        if "parent" not in opts:
            raise ParseError(s.line, s.args[0][1], f"node {name!r} needs parent=<name|{ROOT}>")
        parent = _name(opts["parent"][0], opts["parent"][1], s.line)
        where[name] = s
        edges.append((name, parent))
        if "data" in opts:
            data[name] = _term(*opts["data"], s.line, geometry, base, "data")
        if "smooth" in opts:
            value, col = opts["smooth"]
            smooth[name] = _term(value, col, s.line, geometry, base, "smooth")
            if np.any(smooth[name] < 0):
                raise ParseError(s.line, col, "smoothness must be non-negative")
    if not edges:
        raise ParseError(stmts[0].line, 1, "no node statements")
    try:
        h = build_hierarchy(edges, ROOT)
    except HierarchyError as exc:
        stmt = where.get(exc.name) if exc.name else None
        if stmt is None:
            raise ParseError(stmts[-1].line, 1, str(exc)) from None
        col = next((c + 7 for t, c in stmt.args if t.startswith("parent=")), 1)
        raise ParseError(stmt.line, col, str(exc)) from None
    return GhmfProblem.from_terms(h, geometry, data=data, smooth=smooth)


def read_problem(path: PathLike) -> GhmfProblem:
    path = Path(path)
    return parse_problem(path.read_text(encoding="utf-8"), path.parent)


def _ref(values: Optional[np.ndarray], out_dir: Path, filename: str) -> Optional[str]:
    if values is None:
        return None
    flat = values.ravel()
    if np.all(flat == flat[0]):
        return f"const:{float(flat[0])!r}"
    write_field(values, out_dir / filename)
    return filename


def format_problem(problem: GhmfProblem, spec_path: PathLike) -> str:
    """Spec text for ``problem``; non-uniform fields are written next to ``spec_path``.

    The root is always written as the implicit ``ROOT``. A root data term
    is folded into the root's children, which leaves the energy of every
    admissible labeling unchanged.
    """
    spec_path = Path(spec_path)
    out_dir = spec_path.parent
    stem = spec_path.stem
    h = problem.hierarchy
    data = list(problem.data_terms)
    root_data = data[h.root]
    if root_data is not None and np.any(root_data):
        for c in h.children(h.root):
            data[c] = root_data.copy() if data[c] is None else data[c] + root_data
    lines = [f"grid {' '.join(str(d) for d in problem.geometry.dims)}"]
    # ids are assigned parents-first, so id order keeps them on reparse
    for label in range(len(h)):
        if label == h.root:
            continue
        name = h.name(label)
        if name == ROOT:
            raise ValueError(f"a non-root label may not be named {ROOT}")
        parent = h.parent(label)
        parts = [f"node {name}", f"parent={ROOT if parent == h.root else h.name(parent)}"]
        d = _ref(data[label], out_dir, f"{stem}_D_{name}.ghmf")
        if d is not None:
            parts.append(f"data={d}")
        parts.append(f"smooth={_ref(problem.smoothness_terms[label], out_dir, f'{stem}_S_{name}.ghmf')}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def write_problem(problem: GhmfProblem, spec_path: PathLike) -> Path:
    spec_path = Path(spec_path)
    spec_path.write_text(format_problem(problem, spec_path), encoding="utf-8")
    return spec_path


def parse_potts(text: str, base_dir: PathLike = ".") -> PottsSpec:
    """A flat problem spec: every node is a child of ROOT and all nodes
    share one smoothness field."""
    problem = parse_problem(text, base_dir)
    h = problem.hierarchy
    stmts = {s.args[0][0]: s for s in _statements(text)[1:]}
    names = [h.name(i) for i in h.children(h.root)]
    for i in h.non_root:
        if h.parent(i) != h.root:
            s = stmts[h.name(i)]
            raise ParseError(s.line, 1, f"Potts specs are flat; node {h.name(i)!r} is not a child of {ROOT}")
    shared = problem.smoothness_terms[h.id(names[0])]
    for name in names[1:]:
        if not np.array_equal(problem.smoothness_terms[h.id(name)], shared):
            raise ParseError(stmts[name].line, 1, "all Potts labels must share one smoothness field")
    data = tuple(problem.data(h.id(n)) for n in names)
    return PottsSpec(tuple(names), problem.geometry, data, shared)


def parse_ishikawa(text: str, base_dir: PathLike = ".") -> IshikawaSpec:
    base = Path(base_dir)
    stmts = _statements(text)
    geometry = _grid(stmts)
    data: dict[int, Optional[np.ndarray]] = {}
    smooth: dict[int, np.ndarray] = {}
    for s in stmts[1:]:
        if s.keyword != "level":
            raise ParseError(s.line, 1, f"unknown statement {s.keyword!r}")
        if not s.args or not s.args[0][0].isdigit():
            raise ParseError(s.line, s.args[0][1] if s.args else 1, "level needs a non-negative integer index")
        i = int(s.args[0][0])
        if i in data:
            raise ParseError(s.line, s.args[0][1], f"level {i} declared twice")
        opts = _options(s, 1, ("data", "smooth"))
        data[i] = _term(*opts["data"], s.line, geometry, base, "data") if "data" in opts else None
        smooth[i] = _term(*opts["smooth"], s.line, geometry, base, "smooth") if "smooth" in opts else geometry.full(0.0)
        if np.any(smooth[i] < 0):
            raise ParseError(s.line, opts["smooth"][1], "smoothness must be non-negative")
    n = max((i for i in data if i > 0), default=0)
    if n < 1:
        raise ParseError(stmts[0].line, 1, "an Ishikawa spec needs at least levels 1..N with N >= 1")
    missing = [i for i in range(1, n + 1) if i not in data]
    if missing:
        raise ParseError(stmts[-1].line, 1, f"missing level(s) {missing}")
    return IshikawaSpec(
        geometry,
        tuple(data.get(i) for i in range(n + 1)),
        tuple(smooth.get(i, geometry.full(0.0)) for i in range(n + 1)),
    )


def format_reconstruction(rmap: ReconstructionMap, root_as: str = ROOT) -> str:
    """Level table: ``level <i> <node>`` and ``dummy <i> <node>`` lines."""
    lines = []
    for i, label in enumerate(rmap.level_ids):
        lines.append(f"level {i} {root_as if i == 0 else rmap.names[label]}")
    for i, label in enumerate(rmap.dummy_ids, start=1):
        lines.append(f"dummy {i} {rmap.names[label]}")
    return "\n".join(lines) + "\n"


# -- solutions ----------------------------------------------------------------


def label_map_path(out_dir: PathLike, rank: int) -> Path:
    return Path(out_dir) / ("labels.pgm" if rank == 2 else "labels.ghmf")


def write_label_map(label_map: np.ndarray, out_dir: PathLike) -> Path:
    path = label_map_path(out_dir, np.ndim(label_map))
    if np.ndim(label_map) == 2:
        write_pgm(label_map, path)
    else:
        write_field(np.asarray(label_map, dtype=np.float64), path)
    return path


def format_summary(sol: Solution) -> str:
    return (
        f"energy={sol.energy:.12g}\n"
        f"dual_value={sol.dual_value:.12g}\n"
        f"gap={sol.gap:.12g}\n"
        f"iterations={sol.iterations}\n"
        f"converged={'true' if sol.converged else 'false'}\n"
    )


def write_solution(sol: Solution, out_dir: PathLike) -> list[Path]:
    """Leaf labelings ``u_<name>.ghmf``, the argmax label map and ``solution.txt``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = sol.hierarchy
    written = []
    for leaf in h.leaves:
        path = out / f"u_{h.name(leaf)}.ghmf"
        write_field(sol.labeling[leaf], path)
        written.append(path)
    written.append(write_label_map(threshold(sol), out))
    summary = out / "solution.txt"
    summary.write_text(format_summary(sol), encoding="utf-8")
    written.append(summary)
    return written


def read_summary(path: PathLike) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def read_leaf_labeling(problem: GhmfProblem, directory: PathLike) -> dict[str, np.ndarray]:
    """Leaf fields ``u_<name>.ghmf`` from a solution directory."""
    h = problem.hierarchy
    d = Path(directory)
    return {h.name(i): read_field(d / f"u_{h.name(i)}.ghmf", problem.geometry) for i in h.leaves}
