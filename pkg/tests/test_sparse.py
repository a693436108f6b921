from dataclasses import replace

import numpy as np
import pytest

from blockprune.errors import CheckpointError, MaskError, ShapeError
from blockprune.numerics import COLUMN, ROW, matmul
from blockprune.pruner import mask_from_zeroed, prune_percentile
from blockprune.regularizer import make_partition
from blockprune.sparse import (
    bench_spmm,
    coo_spmm,
    densify,
    densify_coo,
    load_block_structured,
    save_block_structured,
    spmm,
    storage_cost,
    to_block_structured,
    to_coo,
    whole_block_prune,
)


def masked_matrix(rng, rows, cols, axis, k, s):
    w = rng.normal(size=(rows, cols))
    p = make_partition(rows, cols, axis, k, "w")
    _, mask = prune_percentile(w, p, s)
    return w * mask.bits, mask


class TestCoo:
    def test_roundtrip(self):
        rng = np.random.default_rng(70)
        w = rng.normal(size=(5, 7))
        w[w < 0.3] = 0.0
        assert np.array_equal(densify_coo(to_coo(w)), w)

    def test_entries_in_row_major_order(self):
        w = np.array([[0.0, 1.0], [2.0, 0.0], [0.0, 3.0]])
        m = to_coo(w)
        assert m.nnz == 3
        assert m.row_idx.tolist() == [0, 1, 2]
        assert m.col_idx.tolist() == [1, 0, 1]
        assert m.values.tolist() == [1.0, 2.0, 3.0]


class TestBlockStructured:
    def test_roundtrip_both_axes(self):
        rng = np.random.default_rng(71)
        for axis, shape, k in [(ROW, (8, 12), 4), (COLUMN, (12, 8), 4)]:
            w, mask = masked_matrix(rng, *shape, axis, k, 0.5)
            m = to_block_structured(w, mask)
            assert np.array_equal(densify(m), w)

    def test_retained_pairs_sorted(self):
        rng = np.random.default_rng(72)
        w, mask = masked_matrix(rng, 8, 8, ROW, 4, 0.6)
        m = to_block_structured(w, mask)
        pairs = [tuple(p) for p in m.retained]
        assert pairs == sorted(pairs)

    def test_nonzero_outside_mask_rejected(self):
        rng = np.random.default_rng(73)
        w, mask = masked_matrix(rng, 4, 8, ROW, 4, 0.5)
        w = w.copy()
        zi, zj = np.argwhere(mask.bits == 0)[0]
        w[zi, zj] = 1.0
        with pytest.raises(MaskError, match="outside"):
            to_block_structured(w, mask)

    def test_zero_inside_mask_is_fine(self):
        # a retained segment may legally contain zero values
        p = make_partition(2, 4, ROW, 2, "w")
        mask = mask_from_zeroed(p, [(0, 0)])
        w = np.zeros((2, 4))
        m = to_block_structured(w, mask)
        assert np.array_equal(densify(m), w)


class TestStorageCost:
    def test_fixture_arithmetic(self):
        """8x8 at 50% with width-4 row segments: COO 96, block 48."""
        rng = np.random.default_rng(74)
        w, mask = masked_matrix(rng, 8, 8, ROW, 2, 0.5)
        dense = storage_cost(w)
        coo = storage_cost(to_coo(w))
        block = storage_cost(to_block_structured(w, mask))
        assert dense.total_units == 64
        assert (coo.value_units, coo.index_units, coo.total_units) == (32, 64, 96)
        assert (block.value_units, block.index_units, block.total_units) \
            == (32, 16, 48)

    def test_unpruned_block_matrix_still_pays_index_overhead(self):
        p = make_partition(4, 8, ROW, 4, "w")
        mask = mask_from_zeroed(p, [])
        w = np.random.default_rng(75).normal(size=(4, 8))
        rep = storage_cost(to_block_structured(w, mask))
        assert rep.value_units == 32
        assert rep.index_units == 2 * 16

    def test_whole_block_cost(self):
        w = np.random.default_rng(76).normal(size=(8, 8))
        _, _, m = whole_block_prune(w, 4, 4, target_sparsity=0.5)
        rep = storage_cost(m)
        assert rep.value_units == 2 * 16
        assert rep.index_units == 2 * 2
        assert rep.total_units == 36

    def test_unknown_type_rejected(self):
        with pytest.raises(ShapeError):
            storage_cost("not a matrix")


class TestWholeBlockPrune:
    def test_zeroes_lowest_frobenius_tiles(self):
        w = np.ones((4, 4))
        w[:2, :2] = 0.1
        pruned, keep, m = whole_block_prune(w, 2, 2, target_sparsity=0.25)
        assert m.retained_tiles == 3
        assert not keep[0, 0]
        assert np.all(pruned[:2, :2] == 0.0)
        assert np.array_equal(pruned[2:, :], w[2:, :])

    def test_indivisible_tiles_rejected(self):
        with pytest.raises(ShapeError):
            whole_block_prune(np.ones((4, 6)), 2, 4, target_sparsity=0.5)


class TestSpmm:
    def test_bit_identical_to_dense_kernel(self):
        """Skipping zero segments must not change the summation order,
        so the product matches the dense kernel exactly."""
        rng = np.random.default_rng(77)
        for axis in (ROW, COLUMN):
            for s in (0.0, 0.3, 0.5, 0.8):
                w, mask = masked_matrix(rng, 16, 16, axis, 4, s)
                b = rng.normal(size=(16, 8))
                got = spmm(to_block_structured(w, mask), b)
                assert np.array_equal(got, matmul(w, b))

    def test_coo_close_to_dense(self):
        rng = np.random.default_rng(78)
        w, _ = masked_matrix(rng, 32, 16, ROW, 4, 0.5)
        b = rng.normal(size=(16, 8))
        got = coo_spmm(to_coo(w), b)
        np.testing.assert_allclose(got, w @ b, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(79)
        w, mask = masked_matrix(rng, 8, 8, ROW, 4, 0.5)
        with pytest.raises(ShapeError):
            spmm(to_block_structured(w, mask), np.zeros((7, 3)))


class TestBench:
    def test_row_structure(self):
        rows = bench_spmm([32], [0.5], repetitions=3, num_blocks=4, seed=1)
        formats = [r["format"] for r in rows]
        assert formats == ["dense", "coo", "block_structured"]
        for r in rows:
            assert r["size"] == 32
            assert r["sparsity"] == 0.5
            assert r["median_seconds"] > 0

    def test_too_few_repetitions(self):
        with pytest.raises(ShapeError, match="repetitions"):
            bench_spmm([32], [0.5], repetitions=2)

    def test_deterministic_inputs_per_seed(self):
        a = bench_spmm([16], [0.3], repetitions=3, seed=9)
        b = bench_spmm([16], [0.3], repetitions=3, seed=9)
        # timings differ between runs but the cells line up
        assert [(r["size"], r["sparsity"], r["format"]) for r in a] \
            == [(r["size"], r["sparsity"], r["format"]) for r in b]


class TestFileRoundtrip:
    def test_save_load_bit_exact(self, tmp_path):
        rng = np.random.default_rng(80)
        for axis, shape, k in [(ROW, (8, 12), 3), (COLUMN, (12, 8), 3)]:
            w, mask = masked_matrix(rng, *shape, axis, k, 0.5)
            m = to_block_structured(w, mask)
            path = tmp_path / f"{axis}.blk"
            save_block_structured(m, path)
            loaded = load_block_structured(path)
            assert np.array_equal(densify(loaded), w)
            # the file stores geometry only; layer names live in checkpoints
            assert loaded.partition == replace(m.partition, layer_name="")
            assert np.array_equal(loaded.retained, m.retained)

    def test_rewrite_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(81)
        w, mask = masked_matrix(rng, 8, 8, ROW, 4, 0.25)
        first = tmp_path / "a.blk"
        second = tmp_path / "b.blk"
        save_block_structured(to_block_structured(w, mask), first)
        save_block_structured(load_block_structured(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(82)
        w, mask = masked_matrix(rng, 8, 8, ROW, 4, 0.5)
        path = tmp_path / "m.blk"
        save_block_structured(to_block_structured(w, mask), path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(CheckpointError):
            load_block_structured(path)
