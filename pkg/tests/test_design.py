import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from corsem.design import BalancedDesign, align_rows, balance_indices


class TestBalanceIndices:
    def test_minority_retained_in_full(self):
        column = np.array([1, 1, 1, 1, 0, 0], dtype=float)
        design = balance_indices(column, seed=123, label="face")
        assert design.n_yes == design.n_no == 2
        assert design.n_kept == 4
        # both zero-rows (indices 4, 5) must be kept
        assert {4, 5} <= set(design.kept_row_indices.tolist())

    def test_already_balanced_is_noop(self):
        design = balance_indices(np.array([1.0, 0.0]), seed=0, label="x")
        assert design.kept_row_indices.tolist() == [0, 1]
        assert design.n_yes == design.n_no == 1

    def test_degenerate_column_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            balance_indices(np.ones(5), seed=0, label="face")
        with pytest.raises(ValueError, match="degenerate"):
            balance_indices(np.zeros(5), seed=0, label="face")

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="not binary"):
            balance_indices(np.array([0.0, 0.5, 1.0]), seed=0, label="face")

    def test_deterministic_under_fixed_seed(self):
        rng = np.random.default_rng(7)
        column = (rng.random(500) < 0.3).astype(float)
        d1 = balance_indices(column, seed=99, label="dog")
        d2 = balance_indices(column, seed=99, label="dog")
        assert np.array_equal(d1.kept_row_indices, d2.kept_row_indices)

    def test_different_label_different_subsample(self):
        rng = np.random.default_rng(8)
        column = (rng.random(500) < 0.3).astype(float)
        d1 = balance_indices(column, seed=99, label="dog")
        d2 = balance_indices(column, seed=99, label="cat")
        assert d1.n_kept == d2.n_kept
        assert not np.array_equal(d1.kept_row_indices, d2.kept_row_indices)

    def test_seeds_change_only_majority_choice(self):
        rng = np.random.default_rng(9)
        column = (rng.random(200) < 0.25).astype(float)
        minority = set(np.flatnonzero(column == 1.0).tolist())
        designs = [balance_indices(column, seed=s, label="x") for s in range(5)]
        for d in designs:
            assert minority <= set(d.kept_row_indices.tolist())
            assert d.n_kept == designs[0].n_kept

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 400), st.integers(0, 2 ** 32 - 1),
           st.floats(0.05, 0.95), st.integers(0, 2 ** 32 - 1))
    def test_balancing_law(self, n, column_seed, rate, seed):
        column = (np.random.default_rng(column_seed).random(n) < rate).astype(float)
        n_yes = int(column.sum())
        if n_yes == 0 or n_yes == n:
            return
        design = balance_indices(column, seed=seed, label="lab")
        kept = design.kept_row_indices
        kept_col = column[kept]
        assert design.n_yes == design.n_no == min(n_yes, n - n_yes)
        assert int(kept_col.sum()) == design.n_yes
        assert kept.size == 2 * design.n_yes
        assert (np.diff(kept) > 0).all()
        minority_value = 1.0 if n_yes <= n - n_yes else 0.0
        minority_idx = set(np.flatnonzero(column == minority_value).tolist())
        assert minority_idx <= set(kept.tolist())


class TestAlignRows:
    def test_row_selection(self):
        bold = np.arange(12, dtype=np.float32).reshape(3, 4)
        design = BalancedDesign(label="x", seed=0,
                                kept_row_indices=np.array([0, 2]), n_yes=1, n_no=1)
        out = align_rows(bold, design)
        assert np.array_equal(out, bold[[0, 2]])

    def test_identity_when_all_kept(self):
        bold = np.arange(8, dtype=np.float32).reshape(4, 2)
        design = BalancedDesign(label="x", seed=0,
                                kept_row_indices=np.arange(4), n_yes=2, n_no=2)
        assert np.array_equal(align_rows(bold, design), bold)

    def test_out_of_range_index(self):
        bold = np.zeros((3, 2), dtype=np.float32)
        design = BalancedDesign(label="x", seed=0,
                                kept_row_indices=np.array([0, 99]), n_yes=1, n_no=1)
        with pytest.raises(IndexError):
            align_rows(bold, design)


class TestBalancedDesign:
    def test_json_roundtrip(self, tmp_path):
        design = balance_indices(np.array([1, 1, 0, 0, 0, 0], float), 5, "cat")
        path = tmp_path / "design.json"
        design.save(path)
        back = BalancedDesign.load(path)
        assert back.label == "cat" and back.seed == 5
        assert np.array_equal(back.kept_row_indices, design.kept_row_indices)
        assert back.content_hash() == design.content_hash()

    def test_unbalanced_counts_rejected(self):
        with pytest.raises(ValueError, match="unbalanced"):
            BalancedDesign(label="x", seed=0,
                           kept_row_indices=np.array([0, 1, 2]), n_yes=2, n_no=1)
