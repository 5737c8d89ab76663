"""Sparse SDPA (``.dat-s``) reader and writer.

Layout::

    m
    nBlocks
    blockStruct
    c_1 ... c_m
    matno blkno i j value      (one line per upper-triangular nonzero)

``matno = 0`` is ``F0`` and ``matno = k`` is ``F_k``; block and entry indices
are 1-based. Entries are written in ``(matno, blkno, i, j)`` order and values
use the shortest round-tripping float representation, so export followed by
import reproduces the problem exactly.
"""

from __future__ import annotations

import re

import numpy as np

from ..errors import SdpFormatError
from .problem import SdpProblem


def _fmt(v: float) -> str:
    s = repr(float(v))
    if s.endswith(".0"):
        s = s[:-2]
    return "0" if s == "-0" else s


def export_sdpa(p: SdpProblem) -> str:
    lines = [str(p.m), str(p.num_blocks), " ".join(str(s) for s in p.block_sizes),
             " ".join(_fmt(v) for v in p.b)]
    for (k, blk) in sorted(p.mats):
        M = p.mats[(k, blk)]
        iu, ju = np.triu_indices(M.shape[0])
        for i, j in zip(iu, ju):
            v = M[i, j]
            if v != 0.0:
                lines.append(f"{k} {blk + 1} {i + 1} {j + 1} {_fmt(v)}")
    return "\n".join(lines) + "\n"


def write_sdpa(p: SdpProblem, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(export_sdpa(p))


def _numbers(line: str) -> list[str]:
    return [t for t in re.split(r"[\s,{}()]+", line.strip()) if t]


def import_sdpa(text: str) -> SdpProblem:
    raw = text.splitlines()
    # leading comment lines start with '"' or '*'
    pos = 0
    while pos < len(raw) and raw[pos].lstrip().startswith(('"', "*")):
        pos += 1
    body = raw[pos:]
    if len(body) < 3:
        raise SdpFormatError("file too short for an SDPA header")
    try:
        m = int(_numbers(body[0])[0])
        nblocks = int(_numbers(body[1])[0])
        sizes = [int(t) for t in _numbers(body[2])]
    except (IndexError, ValueError):
        raise SdpFormatError("malformed SDPA header") from None
    if len(sizes) != nblocks:
        raise SdpFormatError(f"expected {nblocks} block sizes, found {len(sizes)}")
    if any(s <= 0 for s in sizes):
        raise SdpFormatError("diagonal (LP) blocks are not supported")
    rest = body[3:]
    cvals: list[float] = []
    idx = 0
    while len(cvals) < m:
        if idx >= len(rest):
            raise SdpFormatError("cost vector is truncated")
        cvals.extend(float(t) for t in _numbers(rest[idx]))
        idx += 1
    if m == 0 and idx < len(rest) and not rest[idx].strip():
        idx += 1
    if len(cvals) != m:
        raise SdpFormatError(f"expected {m} cost entries, found {len(cvals)}")
    mats: dict[tuple[int, int], np.ndarray] = {}
    for lineno, line in enumerate(rest[idx:], start=pos + 4 + idx):
        toks = _numbers(line)
        if not toks:
            continue
        if len(toks) != 5:
            raise SdpFormatError(f"line {lineno}: expected 'matno blk i j value'")
        try:
            k, blk, i, j = (int(t) for t in toks[:4])
            v = float(toks[4])
        except ValueError:
            raise SdpFormatError(f"line {lineno}: malformed entry") from None
        if not (0 <= k <= m and 1 <= blk <= nblocks):
            raise SdpFormatError(f"line {lineno}: matrix or block index out of range")
        n = sizes[blk - 1]
        if not (1 <= i <= n and 1 <= j <= n):
            raise SdpFormatError(f"line {lineno}: entry index out of range")
        M = mats.setdefault((k, blk - 1), np.zeros((n, n)))
        M[i - 1, j - 1] = v
        M[j - 1, i - 1] = v
    return SdpProblem(tuple(sizes), np.array(cvals, dtype=float), mats)


def read_sdpa(path) -> SdpProblem:
    with open(path, encoding="ascii") as fh:
        return import_sdpa(fh.read())
