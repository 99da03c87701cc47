"""
Plain-text sparse exchange format for ConicProgram ("CONIC 1").

    CONIC 1
    dims <nvars> <neq> <nlin>
    blocks <count> <size_1> ... <size_count>
    sense <1|-1>
    offset <value>
    c <nnz>            then  <var> <value>
    eq <nnz>           then  <row> <var> <value>
    b <nnz>            then  <row> <value>
    psd <k> <nnz> <label>  then  <i> <j> <var> <value>   (i <= j, var 0 = constant)
    lin <nnz>          then  <row> <var> <value>
    h <nnz>            then  <row> <value>

Variables, rows, blocks and matrix indices are 1-based. Values use repr()
so a written file reads back to the same floating-point data.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import IO, Iterator

import numpy as np
import scipy.sparse as sp

from ..errors import ProblemFileError
from .conic import NONNEGATIVE, PSD, ConeBlock, ConicProgram

LOGGER = logging.getLogger(__name__)

MAGIC = "CONIC 1"


def _vector_lines(values: np.ndarray) -> list[str]:
    nonzero = np.flatnonzero(values)
    return [f"{i + 1} {float(values[i])!r}" for i in nonzero]


def _matrix_lines(matrix: sp.spmatrix) -> list[str]:
    coo = matrix.tocoo()
    order = np.lexsort((coo.col, coo.row))
    return [
        f"{coo.row[k] + 1} {coo.col[k] + 1} {float(coo.data[k])!r}"
        for k in order
        if coo.data[k] != 0
    ]


def dumps_conic(program: ConicProgram) -> str:
    psd = [c for c in program.cones if c.kind == PSD]
    lin = [c for c in program.cones if c.kind == NONNEGATIVE]
    nlin = sum(c.size for c in lin)
    lines = [
        MAGIC,
        f"dims {program.nvars} {program.neq} {nlin}",
        "blocks " + " ".join([str(len(psd))] + [str(c.size) for c in psd]),
        f"sense {program.sense}",
        f"offset {float(program.offset)!r}",
    ]

    def section(header: str, body: list[str]):
        lines.append(f"{header} {len(body)}")
        lines.extend(body)

    section("c", _vector_lines(program.c))
    section("eq", _matrix_lines(program.eq_matrix))
    section("b", _vector_lines(program.eq_rhs))
    for k, cone in enumerate(psd, start=1):
        n = cone.size
        body = []
        coo = cone.phi.tocoo()
        entries = np.column_stack([coo.row // n, coo.row % n, coo.col + 1])
        values = coo.data
        const_rows = np.flatnonzero(cone.const)
        entries = np.vstack(
            [entries, np.column_stack([const_rows // n, const_rows % n, np.zeros_like(const_rows)])]
        ) if const_rows.size else entries
        values = np.concatenate([values, cone.const[const_rows]])
        keep = (entries[:, 0] <= entries[:, 1]) & (values != 0)
        entries, values = entries[keep], values[keep]
        order = np.lexsort((entries[:, 2], entries[:, 1], entries[:, 0]))
        for idx in order:
            i, j, var = entries[idx]
            body.append(f"{i + 1} {j + 1} {var} {float(values[idx])!r}")
        label = cone.label.replace(" ", "_") or f"block{k}"
        lines.append(f"psd {k} {len(body)} {label}")
        lines.extend(body)
    if lin:
        g = sp.vstack([c.phi for c in lin]).tocsr()
        h = np.concatenate([c.const for c in lin])
    else:
        g = sp.csr_matrix((0, program.nvars))
        h = np.zeros(0)
    section("lin", _matrix_lines(g))
    section("h", _vector_lines(h))
    return "\n".join(lines) + "\n"


def write_conic(program: ConicProgram, target: str | Path | IO[str]) -> None:
    text = dumps_conic(program)
    if hasattr(target, "write"):
        target.write(text)
        return
    Path(target).write_text(text)
    LOGGER.info("Wrote conic program with %i variables to %s", program.nvars, target)


class _Lines:
    def __init__(self, text: str):
        self._lines: Iterator[tuple[int, str]] = (
            (n, line.strip())
            for n, line in enumerate(text.splitlines(), start=1)
            if line.strip() and not line.lstrip().startswith("#")
        )
        self.number = 0

    def next(self, expected: str | None = None) -> list[str]:
        try:
            self.number, line = next(self._lines)
        except StopIteration:
            raise ProblemFileError(
                f"line {self.number + 1}", f"unexpected end of file, expected {expected}"
            ) from None
        fields = line.split()
        if expected is not None and fields[0] != expected:
            raise ProblemFileError(
                f"line {self.number}", f"expected section {expected!r}, got {fields[0]!r}"
            )
        return fields

    def rows(self, count: int, width: int) -> list[list[str]]:
        rows = []
        for _ in range(count):
            fields = self.next()
            if len(fields) != width:
                raise ProblemFileError(
                    f"line {self.number}", f"expected {width} fields, got {len(fields)}"
                )
            rows.append(fields)
        return rows


def _vector(rows: list[list[str]], size: int) -> np.ndarray:
    out = np.zeros(size)
    for i, value in rows:
        out[int(i) - 1] = float(value)
    return out


def _matrix(rows: list[list[str]], shape: tuple[int, int]) -> sp.csr_matrix:
    if not rows:
        return sp.csr_matrix(shape)
    r = [int(row[0]) - 1 for row in rows]
    c = [int(row[1]) - 1 for row in rows]
    v = [float(row[2]) for row in rows]
    return sp.coo_matrix((v, (r, c)), shape=shape).tocsr()


def loads_conic(text: str) -> ConicProgram:
    lines = _Lines(text)
    try:
        if " ".join(lines.next()) != MAGIC:
            raise ProblemFileError("line 1", f"missing {MAGIC!r} header")
        _, nvars, neq, nlin = lines.next("dims")
        nvars, neq, nlin = int(nvars), int(neq), int(nlin)
        blocks = lines.next("blocks")
        sizes = [int(s) for s in blocks[2:]]
        if len(sizes) != int(blocks[1]):
            raise ProblemFileError(f"line {lines.number}", "block count does not match sizes")
        sense = int(lines.next("sense")[1])
        offset = float(lines.next("offset")[1])
        c = _vector(lines.rows(int(lines.next("c")[1]), 2), nvars)
        eq_matrix = _matrix(lines.rows(int(lines.next("eq")[1]), 3), (neq, nvars))
        eq_rhs = _vector(lines.rows(int(lines.next("b")[1]), 2), neq)
        cones = []
        for k, n in enumerate(sizes, start=1):
            header = lines.next("psd")
            if int(header[1]) != k:
                raise ProblemFileError(f"line {lines.number}", f"expected block {k}")
            label = header[3] if len(header) > 3 else ""
            r, col, v = [], [], []
            const = np.zeros(n * n)
            for i, j, var, value in lines.rows(int(header[2]), 4):
                i, j, var, value = int(i) - 1, int(j) - 1, int(var), float(value)
                positions = {i * n + j, j * n + i}
                for p in positions:
                    if var == 0:
                        const[p] += value
                    else:
                        r.append(p)
                        col.append(var - 1)
                        v.append(value)
            phi = sp.coo_matrix((v, (r, col)), shape=(n * n, nvars)).tocsr()
            cones.append(ConeBlock(PSD, n, phi, const, label))
        g = _matrix(lines.rows(int(lines.next("lin")[1]), 3), (nlin, nvars))
        h = _vector(lines.rows(int(lines.next("h")[1]), 2), nlin)
    except (ValueError, IndexError) as exc:
        raise ProblemFileError(f"line {lines.number}", str(exc)) from exc
    if nlin:
        cones.append(ConeBlock(NONNEGATIVE, nlin, g, h, "inequalities"))
    return ConicProgram(
        c=c,
        eq_matrix=eq_matrix,
        eq_rhs=eq_rhs,
        cones=tuple(cones),
        offset=offset,
        sense=sense,
    )


def read_conic(source: str | Path | IO[str]) -> ConicProgram:
    if hasattr(source, "read"):
        return loads_conic(source.read())
    return loads_conic(Path(source).read_text())
