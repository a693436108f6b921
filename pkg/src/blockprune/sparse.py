"""Sparse storage formats, storage-cost accounting, and the block-sparse
matmul kernel.

Costs are counted in scalar slots, the unit that makes a 50%-sparse COO
matrix cost 1.5 slots per original cell: each COO nonzero is one value
slot plus two index slots. A retained block segment costs block_width
value slots plus two index slots (its group and block index). Byte-level
packing is deliberately out of scope.

The block-structured kernel accumulates rank-1 updates in ascending
contraction order while skipping zeroed segments, so its output is
bit-identical to `numerics.matmul` of the densified matrix. (The one
exception is the sign of an exactly-zero output entry, which cannot
occur with continuous random data.) Column-partitioned matrices are
stored as the row format of the transpose and multiplied through the
same path with an orientation switch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from statistics import median

import numpy as np

from .errors import CheckpointError, MaskError, ShapeError
from .numerics import COLUMN, ROW, as_matrix, matmul
from .pruner import PruneMask, prune_percentile, validate_block_structure
from .regularizer import BlockPartition, make_partition, oriented


@dataclass(frozen=True)
class CooMatrix:
    rows: int
    cols: int
    row_idx: np.ndarray  # (nnz,) int64, row-major order
    col_idx: np.ndarray
    values: np.ndarray  # (nnz,) float64, all nonzero

    @property
    def nnz(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class BlockStructuredMatrix:
    rows: int  # true matrix dims
    cols: int
    partition: BlockPartition
    retained: np.ndarray  # (n_ret, 2) int64 (group, block), sorted lex
    values: np.ndarray  # (n_ret, block_width) float64, retained order

    @property
    def retained_count(self) -> int:
        return int(self.retained.shape[0])


@dataclass(frozen=True)
class WholeBlockMatrix:
    """Storage-cost comparator for pruning whole square tiles."""

    rows: int
    cols: int
    tile_rows: int
    tile_cols: int
    retained_tiles: int


@dataclass(frozen=True)
class StorageReport:
    format_name: str
    value_units: int
    index_units: int

    @property
    def total_units(self) -> int:
        return self.value_units + self.index_units


def to_coo(w: np.ndarray) -> CooMatrix:
    w = as_matrix(w)
    r, c = np.nonzero(w)  # row-major for C-ordered arrays
    return CooMatrix(
        rows=w.shape[0], cols=w.shape[1],
        row_idx=r.astype(np.int64), col_idx=c.astype(np.int64),
        values=w[r, c].astype(np.float64),
    )


def densify_coo(m: CooMatrix) -> np.ndarray:
    out = np.zeros((m.rows, m.cols))
    out[m.row_idx, m.col_idx] = m.values
    return out


def to_block_structured(w: np.ndarray, mask: PruneMask) -> BlockStructuredMatrix:
    w = as_matrix(w)
    if w.shape != mask.bits.shape:
        raise ShapeError(
            f"matrix shape {w.shape} does not match mask {mask.bits.shape}"
        )
    validate_block_structure(mask)
    if np.any((w != 0.0) & (mask.bits == 0.0)):
        raise MaskError("matrix has nonzero entries outside the mask")
    part = mask.partition
    v = oriented(w, part)
    segs = v.reshape(part.extent_groups, part.blocks_per_group, part.block_width)
    keep = (
        oriented(mask.bits, part)
        .reshape(part.extent_groups, part.blocks_per_group, part.block_width)
        .sum(axis=2)
        > 0
    )
    gs, bs = np.nonzero(keep)  # row-major: (group, block) lexicographic
    retained = np.stack([gs, bs], axis=1).astype(np.int64)
    values = segs[gs, bs].astype(np.float64)
    return BlockStructuredMatrix(
        rows=w.shape[0], cols=w.shape[1], partition=part,
        retained=retained, values=values,
    )


def densify(m: BlockStructuredMatrix) -> np.ndarray:
    part = m.partition
    v = np.zeros((part.extent_groups, part.blocks_per_group * part.block_width))
    segs = v.reshape(part.extent_groups, part.blocks_per_group, part.block_width)
    segs[m.retained[:, 0], m.retained[:, 1]] = m.values
    return v if part.axis == ROW else v.T.copy()


def storage_cost(obj) -> StorageReport:
    """Scalar-slot cost of one stored matrix in the given format."""
    if isinstance(obj, CooMatrix):
        return StorageReport("coo", value_units=obj.nnz, index_units=2 * obj.nnz)
    if isinstance(obj, BlockStructuredMatrix):
        n = obj.retained_count
        return StorageReport(
            "block_structured",
            value_units=n * obj.partition.block_width,
            index_units=2 * n,
        )
    if isinstance(obj, WholeBlockMatrix):
        return StorageReport(
            "whole_block",
            value_units=obj.retained_tiles * obj.tile_rows * obj.tile_cols,
            index_units=2 * obj.retained_tiles,
        )
    if isinstance(obj, np.ndarray):
        m = as_matrix(obj)
        return StorageReport("dense", value_units=m.size, index_units=0)
    raise ShapeError(f"no storage model for {type(obj).__name__}")


def whole_block_prune(
    w: np.ndarray, tile_rows: int, tile_cols: int, target_sparsity: float
) -> tuple[np.ndarray, np.ndarray, WholeBlockMatrix]:
    """Zero whole tiles, smallest Frobenius norm first, floor rule.

    Returns (pruned, tile keep bits, comparator record). Comparator
    only; there is no dedicated kernel for this format.
    """
    w = as_matrix(w)
    rows, cols = w.shape
    if rows % tile_rows or cols % tile_cols:
        raise ShapeError(
            f"tiles {tile_rows}x{tile_cols} do not divide matrix {rows}x{cols}"
        )
    if not 0 <= target_sparsity < 1:
        raise ShapeError(f"target sparsity must be in [0, 1), got {target_sparsity}")
    gr, gc = rows // tile_rows, cols // tile_cols
    tiles = w.reshape(gr, tile_rows, gc, tile_cols).transpose(0, 2, 1, 3)
    norms = np.sqrt((tiles * tiles).sum(axis=(2, 3)))
    n_zero = int(np.floor(target_sparsity * norms.size))
    order = np.argsort(norms.ravel(), kind="stable")
    keep = np.ones(norms.size, dtype=bool)
    keep[order[:n_zero]] = False
    keep = keep.reshape(gr, gc)
    full = np.repeat(np.repeat(keep, tile_rows, axis=0), tile_cols, axis=1)
    record = WholeBlockMatrix(
        rows=rows, cols=cols, tile_rows=tile_rows, tile_cols=tile_cols,
        retained_tiles=int(keep.sum()),
    )
    return w * full, keep, record


def spmm(a: BlockStructuredMatrix, b: np.ndarray) -> np.ndarray:
    """a (rows, cols) block-sparse x b (cols, n) dense -> (rows, n)."""
    b = as_matrix(b)
    if a.cols != b.shape[0]:
        raise ShapeError(
            f"spmm shapes incompatible: {a.rows}x{a.cols} x {b.shape}"
        )
    part = a.partition
    width = part.block_width
    n = b.shape[1]
    if part.axis == ROW:
        out = np.zeros((a.rows, n))
        # ascending block order, ascending k inside each block, matching
        # the fixed contraction order of numerics.matmul
        for block in range(part.blocks_per_group):
            sel = a.retained[:, 1] == block
            if not sel.any():
                continue
            groups = a.retained[sel, 0]
            vals = a.values[sel]
            base = block * width
            if groups.size == part.extent_groups:
                for k in range(width):
                    out += vals[:, k : k + 1] * b[base + k]
            else:
                for k in range(width):
                    out[groups] += vals[:, k : k + 1] * b[base + k]
        return out
    # column axis: groups are columns of the true matrix, i.e. the
    # contraction index; walk them in ascending order
    out = np.zeros((a.rows, n))
    order = np.lexsort((a.retained[:, 1], a.retained[:, 0]))
    retained = a.retained[order]
    values = a.values[order]
    for (col, block), seg in zip(retained.tolist(), values):
        base = block * width
        out[base : base + width] += seg[:, None] * b[col]
    return out


def coo_spmm(a: CooMatrix, b: np.ndarray) -> np.ndarray:
    """Reference COO x dense multiply for the benchmark table."""
    b = as_matrix(b)
    if a.cols != b.shape[0]:
        raise ShapeError(f"spmm shapes incompatible: {a.rows}x{a.cols} x {b.shape}")
    out = np.zeros((a.rows, b.shape[1]))
    # entries are row-major, so each row's nonzeros are contiguous
    boundaries = np.flatnonzero(np.diff(a.row_idx)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [a.nnz]])
    for s, e in zip(starts, ends):
        if e > s:
            row = int(a.row_idx[s])
            out[row] = a.values[s:e] @ b[a.col_idx[s:e]]
    return out


# ---------------------------------------------------------------------------
# benchmark

def bench_spmm(
    sizes: list[int], sparsities: list[float], repetitions: int,
    num_blocks: int = 8, seed: int = 0,
) -> list[dict]:
    """Median wall-clock per (size, sparsity, format).

    Formats: dense (the fixed-order dense kernel), coo, block_structured.
    Inputs are generated deterministically from the seed; timing values
    are machine-dependent, everything else is reproducible.
    """
    if repetitions < 3:
        raise ShapeError(f"repetitions must be >= 3, got {repetitions}")
    rows = []
    for n in sizes:
        for s in sparsities:
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, n, int(round(s * 1000))])
            )
            w = rng.normal(size=(n, n))
            part = make_partition(n, n, ROW, num_blocks)
            pruned, mask = prune_percentile(w, part, s)
            b = rng.normal(size=(n, n))
            block = to_block_structured(pruned, mask)
            coo = to_coo(pruned)

            def run(fn, *args):
                times = []
                for _ in range(repetitions):
                    t0 = time.perf_counter()
                    fn(*args)
                    times.append(time.perf_counter() - t0)
                return median(times)

            rows.append(
                {
                    "size": n, "sparsity": s, "format": "dense",
                    "median_seconds": run(matmul, pruned, b),
                }
            )
            rows.append(
                {
                    "size": n, "sparsity": s, "format": "coo",
                    "median_seconds": run(coo_spmm, coo, b),
                }
            )
            rows.append(
                {
                    "size": n, "sparsity": s, "format": "block_structured",
                    "median_seconds": run(spmm, block, b),
                }
            )
    return rows


# ---------------------------------------------------------------------------
# block-structured file format: one text header, retained pairs as text,
# then a little-endian float64 blob of the packed values

MAGIC = "blockstructured v1"


def save_block_structured(m: BlockStructuredMatrix, path: str) -> None:
    part = m.partition
    header = (
        f"{MAGIC} {m.rows} {m.cols} {part.axis} "
        f"{part.blocks_per_group} {m.retained_count}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for g, b in m.retained.tolist():
            fh.write(f"{g} {b}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(m.values, dtype="<f8").tobytes())


def load_block_structured(path: str) -> BlockStructuredMatrix:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc

    def take_line(buf, start):
        end = buf.find(b"\n", start)
        if end < 0:
            raise CheckpointError(f"{path}: truncated text section")
        return buf[start:end].decode("ascii"), end + 1

    line, pos = take_line(raw, 0)
    parts = line.split()
    if len(parts) != 7 or " ".join(parts[:2]) != MAGIC:
        raise CheckpointError(f"{path}: bad header {line!r}")
    try:
        rows, cols = int(parts[2]), int(parts[3])
        axis = parts[4]
        num_blocks, n_ret = int(parts[5]), int(parts[6])
    except ValueError:
        raise CheckpointError(f"{path}: malformed header numbers") from None
    if axis not in (ROW, COLUMN):
        raise CheckpointError(f"{path}: bad axis {axis!r}")
    pairs = np.zeros((n_ret, 2), dtype=np.int64)
    for i in range(n_ret):
        line, pos = take_line(raw, pos)
        g_s, b_s = line.split()
        pairs[i] = (int(g_s), int(b_s))
    part = make_partition(rows, cols, axis, num_blocks)
    blob = raw[pos:]
    expect = n_ret * part.block_width * 8
    if len(blob) != expect:
        raise CheckpointError(
            f"{path}: value blob has {len(blob)} bytes, expected {expect}"
        )
    values = (
        np.frombuffer(blob, dtype="<f8")
        .astype(np.float64)
        .reshape(n_ret, part.block_width)
    )
    return BlockStructuredMatrix(
        rows=rows, cols=cols, partition=part, retained=pairs, values=values
    )
