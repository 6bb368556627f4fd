import numpy as np
import pytest

from trimix.data import (
    IGNORE,
    Interaction,
    SequenceDataset,
    batch_iter,
    build_windows,
    filter_dataset,
    load_interactions,
    load_processed,
    residual_report,
    save_processed,
)
from trimix.errors import ConfigError, DatasetError, IngestionError


class TestLoadInteractions:
    def test_basic_tsv_row(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("u1\ti9\t100\n")
        assert load_interactions(path) == [Interaction("u1", "i9", 100)]

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert load_interactions(path) == []

    def test_csv_format(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("u1,i2,5\nu1,i3,9\n")
        rows = load_interactions(path, fmt="csv")
        assert rows == [Interaction("u1", "i2", 5), Interaction("u1", "i3", 9)]

    def test_rating_column_skipped(self, tmp_path):
        """user/item/rating/timestamp logs load with the rating ignored."""
        path = tmp_path / "log.tsv"
        path.write_text("196\t242\t3\t881250949\n186\t302\t3\t891717742\n")
        rows = load_interactions(path, columns="user,item,_,time")
        assert rows[0] == Interaction("196", "242", 881250949)
        assert rows[1].timestamp == 891717742

    def test_trailing_extras_ignored(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("u1\ti1\t7\textra\tmore\n")
        assert load_interactions(path) == [Interaction("u1", "i1", 7)]

    def test_malformed_rows_listed_with_line_numbers(self, tmp_path):
        path = tmp_path / "log.tsv"
        lines = ["u1\ti1\t1"] + [f"u{k}\ti{k}\tnot-a-time" for k in range(15)]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(IngestionError) as err:
            load_interactions(path)
        message = str(err.value)
        assert "15 malformed" in message
        assert "line 2" in message and "line 11" in message
        assert "line 12" not in message  # only the first 10 are listed

    def test_missing_column_is_malformed(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("u1\ti1\n")
        with pytest.raises(IngestionError, match="line 1"):
            load_interactions(path)

    def test_skip_header(self, tmp_path):
        path = tmp_path / "log.csv"
        path.write_text("user,item,ts\nu1,i1,3\n")
        rows = load_interactions(path, fmt="csv", skip_header=True)
        assert rows == [Interaction("u1", "i1", 3)]

    def test_bad_columns_spec(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("u1\ti1\t1\n")
        with pytest.raises(ConfigError):
            load_interactions(path, columns="user,item")


def cycling_rows(user, count, items=12, start_ts=0):
    return [Interaction(user, f"i{(k % items) + 1}", start_ts + k) for k in range(count)]


class TestFilterDataset:
    def test_short_user_dropped_others_kept(self):
        rows = []
        for user in ("a", "b", "c"):
            rows += cycling_rows(user, 24)
        rows += cycling_rows("d", 5)
        ds = filter_dataset(rows, min_user=20, min_item=6)
        assert sorted(ds.users) == ["a", "b", "c"]
        assert ds.n_items == 12
        assert ds.interactions == 72

    def test_item_threshold_boundary(self):
        """'fewer than' semantics: 9 occurrences removed, 10 kept."""
        rows = [Interaction(f"u{k}", "nine", k) for k in range(9)]
        rows += [Interaction(f"u{k}", "ten", 100 + k) for k in range(10)]
        ds = filter_dataset(rows, min_user=1, min_item=10)
        assert ds.item_ids == ["ten"]

    def test_user_threshold_boundary(self):
        rows = cycling_rows("nineteen", 19) + cycling_rows("twenty", 20)
        ds = filter_dataset(rows, min_user=20, min_item=1)
        assert ds.users == ["twenty"]

    def test_chronological_with_stable_ties(self):
        rows = [
            Interaction("u", "late", 9),
            Interaction("u", "tie1", 5),
            Interaction("u", "tie2", 5),
            Interaction("u", "early", 1),
        ]
        ds = filter_dataset(rows, min_user=1, min_item=1)
        names = [ds.item_ids[i - 1] for i in ds.sequences[0]]
        assert names == ["early", "tie1", "tie2", "late"]

    def test_empty_after_filter_raises(self):
        rows = cycling_rows("u", 5)
        with pytest.raises(DatasetError, match="sparse"):
            filter_dataset(rows, min_user=20, min_item=10)

    def test_empty_input_raises(self):
        with pytest.raises(DatasetError):
            filter_dataset([])

    def test_stats_sparsity(self):
        rows = [Interaction("a", "x", 1), Interaction("a", "y", 2),
                Interaction("b", "x", 3), Interaction("b", "y", 4)]
        ds = filter_dataset(rows, min_user=2, min_item=2)
        stats = ds.stats()
        assert stats == {"users": 2, "items": 2, "interactions": 4, "sparsity": 0.0}

    def test_residual_report_detects_cascade(self):
        # "shared" passes the raw item filter only thanks to a user who is
        # then dropped, so a second pass would remove it
        rows = cycling_rows("a", 24) + cycling_rows("b", 24)
        rows.append(Interaction("a", "shared", 50))
        rows += [Interaction("weak", "shared", k) for k in range(3)]
        rows.append(Interaction("weak", "i1", 99))
        ds = filter_dataset(rows, min_user=5, min_item=4)
        assert "weak" not in ds.users
        report = residual_report(ds, min_user=5, min_item=4)
        assert report["rare_items"] == 1
        assert not report["stable"]

    def test_residual_report_stable_case(self):
        rows = cycling_rows("a", 24) + cycling_rows("b", 24)
        ds = filter_dataset(rows, min_user=20, min_item=2)
        assert residual_report(ds, 20, 2)["stable"]


class TestBuildWindows:
    def single_user_ds(self, n_interactions, items=200):
        seq = np.arange(1, n_interactions + 1, dtype=np.int64) % items + 1
        return SequenceDataset(["u"], [seq], items)

    def test_short_prefix_head_padded(self):
        ds = SequenceDataset(["u"], [np.array([4, 7, 2, 9], dtype=np.int64)], 9)
        split = build_windows(ds, n=5)
        assert np.array_equal(split.inputs[0], [0, 0, 4, 7, 2])
        assert split.test_cases[0].target == 9

    def test_backward_chunking_130_items(self):
        ds = self.single_user_ds(131)
        split = build_windows(ds, n=64)
        assert split.inputs.shape == (3, 64)
        # oldest window is the short one, head-padded
        assert (split.inputs[0] == 0).sum() == 62
        assert (split.inputs[1] == 0).sum() == 0
        assert (split.inputs[2] == 0).sum() == 0
        prefix = ds.sequences[0][:-1]
        rebuilt = np.concatenate([w[w != 0] for w in split.inputs])
        assert np.array_equal(rebuilt, prefix)

    def test_target_shift(self):
        ds = SequenceDataset(["u"], [np.array([5, 6, 7, 8], dtype=np.int64)], 8)
        split = build_windows(ds, n=4)
        assert np.array_equal(split.inputs[0], [0, 5, 6, 7])
        assert np.array_equal(split.targets[0], [IGNORE, 6, 7, IGNORE])

    def test_full_window_targets(self):
        ds = self.single_user_ds(65)
        split = build_windows(ds, n=64)
        window, targets = split.inputs[0], split.targets[0]
        assert np.array_equal(targets[:-1], window[1:])
        assert targets[-1] == IGNORE

    def test_pads_only_as_prefix(self):
        ds = self.single_user_ds(100)
        split = build_windows(ds, n=16)
        for window in split.inputs:
            nz = np.flatnonzero(window)
            if len(nz):
                assert np.all(window[nz[0]:] != 0)

    def test_pad_positions_never_counted(self):
        ds = self.single_user_ds(40)
        split = build_windows(ds, n=16)
        assert np.all(split.targets[split.inputs == 0] == IGNORE)

    def test_test_window_layout(self):
        """Last up-to-(n-1) prefix items end at position n-1; final slot empty."""
        ds = self.single_user_ds(100)
        split = build_windows(ds, n=16)
        case = split.test_cases[0]
        assert case.ids.shape == (16,)
        assert case.ids[-1] == 0  # reserved for the predicted item
        assert np.array_equal(case.ids[:-1], ds.sequences[0][-16:-1])

    def test_short_test_window_is_head_padded(self):
        ds = SequenceDataset(["u"], [np.array([4, 7, 2], dtype=np.int64)], 7)
        split = build_windows(ds, n=6)
        assert np.array_equal(split.test_cases[0].ids, [0, 0, 0, 4, 7, 0])

    def test_short_user_skipped_with_count(self):
        ds = SequenceDataset(["a", "b"], [np.array([3], dtype=np.int64),
                                          np.array([1, 2, 3], dtype=np.int64)], 3)
        split = build_windows(ds, n=4)
        assert split.skipped_users == 1
        assert len(split.test_cases) == 1

    def test_no_leakage_of_test_transition(self):
        ds = self.single_user_ds(50)
        split = build_windows(ds, n=8)
        target = split.test_cases[0].target
        prefix_last = ds.sequences[0][-2]
        for window, targets in zip(split.inputs, split.targets):
            positions = np.flatnonzero(window == prefix_last)
            for p in positions:
                if p == len(window) - 1:
                    assert targets[p] == IGNORE

    def test_window_too_short_rejected(self):
        ds = self.single_user_ds(10)
        with pytest.raises(ConfigError):
            build_windows(ds, n=1)


class TestBatchIter:
    def test_batch_sizes(self):
        ds = TestBuildWindows().single_user_ds(131)
        split = build_windows(ds, n=2)
        rng = np.random.default_rng(0)
        sizes = [len(inputs) for inputs, _ in batch_iter(split, 64, rng)]
        assert sizes == [64, 1]

    def test_same_seed_same_order(self):
        ds = TestBuildWindows().single_user_ds(80)
        split = build_windows(ds, n=8)
        a = [inp.tobytes() for inp, _ in batch_iter(split, 4, np.random.default_rng(5))]
        b = [inp.tobytes() for inp, _ in batch_iter(split, 4, np.random.default_rng(5))]
        assert a == b

    def test_epoch_is_exact_multiset(self):
        ds = TestBuildWindows().single_user_ds(100)
        split = build_windows(ds, n=8)
        seen = []
        for inputs, targets in batch_iter(split, 7, np.random.default_rng(1)):
            seen += [row.tobytes() for row in inputs]
        assert sorted(seen) == sorted(row.tobytes() for row in split.inputs)


class TestProcessedRoundTrip:
    def test_save_load(self, tmp_path):
        ds = SequenceDataset(["a", "b"], [np.array([1, 2, 3], dtype=np.int64),
                                          np.array([2, 2], dtype=np.int64)], 3)
        save_processed(ds, tmp_path)
        loaded = load_processed(tmp_path)
        assert loaded.users == ["a", "b"]
        assert loaded.n_items == 3
        assert all(np.array_equal(x, y) for x, y in zip(loaded.sequences, ds.sequences))

    def test_rewrite_is_byte_identical(self, tmp_path):
        ds = SequenceDataset(["a"], [np.array([1, 2], dtype=np.int64)], 2)
        first = save_processed(ds, tmp_path / "one")
        second = save_processed(ds, tmp_path / "two")
        assert open(first, "rb").read() == open(second, "rb").read()

    def test_missing_dir_raises(self, tmp_path):
        with pytest.raises(DatasetError):
            load_processed(tmp_path / "nope")
