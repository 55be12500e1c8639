"""Dataset ingestion, synthesis, and splitting contracts."""

import numpy as np
import pytest

from capstab.data import (
    Beat,
    Dataset,
    class_templates,
    load_csv,
    save_csv,
    split,
    synth_dataset,
)
from capstab.errors import DataError


class TestLoadCsv:
    def test_single_row(self, tmp_path):
        path = tmp_path / "one.csv"
        path.write_text("0,0.5,1,2\n")
        ds = load_csv(path)
        assert len(ds) == 1 and ds.signal_len == 3
        np.testing.assert_array_equal(ds.beats[0].signal, [0.0, 0.5, 1.0])
        assert ds.beats[0].label == 2

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(DataError):
            load_csv(path)

    def test_histogram_matches_manual_count(self, tmp_path):
        rows = ["0,1,0", "0.2,0.4,0", "1,0,1", "0.5,0.5,3", "0.1,0.9,3"]
        path = tmp_path / "five.csv"
        path.write_text("\n".join(rows) + "\n")
        ds = load_csv(path)
        assert ds.class_histogram() == [2, 1, 0, 2, 0]

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("0,0.5,1,2\n0,oops,1,2\n")
        with pytest.raises(DataError, match=":2:"):
            load_csv(path)

    def test_inconsistent_length_rejected(self, tmp_path):
        path = tmp_path / "ragged.csv"
        path.write_text("0,0.5,1,2\n0,0.5,3\n")
        with pytest.raises(DataError, match=":2:"):
            load_csv(path)

    def test_label_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "label.csv"
        path.write_text("0,0.5,1,7\n")
        with pytest.raises(DataError, match="label 7"):
            load_csv(path)

    def test_out_of_range_signal_is_minmax_normalized(self, tmp_path):
        path = tmp_path / "wide.csv"
        path.write_text("-2,0,2,1\n")
        ds = load_csv(path)
        np.testing.assert_allclose(ds.beats[0].signal, [0.0, 0.5, 1.0])

    def test_float_formatted_integer_labels_accepted(self, tmp_path):
        # the common public heartbeat CSV stores labels as floats
        path = tmp_path / "floatlabel.csv"
        path.write_text("0,0.5,1,4.0000000e+00\n")
        assert load_csv(path).beats[0].label == 4

    def test_round_trip_through_save_csv(self, tmp_path):
        ds = synth_dataset(n_per_class=3, length=32, noise_std=0.05, seed=9)
        path = tmp_path / "rt.csv"
        save_csv(ds, path)
        back = load_csv(path)
        assert len(back) == len(ds)
        for a, b in zip(ds.beats, back.beats):
            assert a.label == b.label
            np.testing.assert_array_equal(a.signal, b.signal)


class TestSynthDataset:
    def test_deterministic_per_seed(self):
        a = synth_dataset(5, 64, 0.05, seed=3)
        b = synth_dataset(5, 64, 0.05, seed=3)
        for x, y in zip(a.beats, b.beats):
            assert np.array_equal(x.signal, y.signal) and x.label == y.label

    def test_noise_free_signals_equal_templates(self):
        ds = synth_dataset(2, 48, 0.0, seed=1)
        templates = class_templates(48)
        for beat in ds.beats:
            np.testing.assert_array_equal(beat.signal, templates[beat.label])

    def test_balanced_histogram(self):
        ds = synth_dataset(10, 32, 0.05, seed=2)
        assert len(ds) == 50
        assert ds.class_histogram() == [10] * 5

    def test_nearest_template_classifier_is_perfect_without_noise(self):
        ds = synth_dataset(4, 40, 0.0, seed=5)
        templates = class_templates(40)
        for beat in ds.beats:
            distances = np.linalg.norm(templates - beat.signal, axis=1)
            assert int(np.argmin(distances)) == beat.label

    def test_values_in_unit_interval(self):
        ds = synth_dataset(5, 32, noise_std=0.5, seed=6)
        for beat in ds.beats:
            assert beat.signal.min() >= 0.0 and beat.signal.max() <= 1.0

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            synth_dataset(0, 32, 0.05, seed=0)
        with pytest.raises(ValueError):
            synth_dataset(5, 4, 0.05, seed=0)


class TestSplit:
    def test_even_split_counts(self):
        ds = synth_dataset(10, 32, 0.05, seed=7)
        train, test = split(ds, 0.8, seed=0)
        assert train.class_histogram() == [8] * 5
        assert test.class_histogram() == [2] * 5

    def test_deterministic(self):
        ds = synth_dataset(6, 32, 0.05, seed=8)
        t1, e1 = split(ds, 0.5, seed=4)
        t2, e2 = split(ds, 0.5, seed=4)
        for a, b in zip(t1.beats + e1.beats, t2.beats + e2.beats):
            assert np.array_equal(a.signal, b.signal)

    def test_partition_property(self):
        ds = synth_dataset(7, 24, 0.05, seed=9)
        train, test = split(ds, 0.6, seed=1)
        assert len(train) + len(test) == len(ds)
        all_rows = sorted(
            tuple(b.signal) + (b.label,) for b in train.beats + test.beats
        )
        original = sorted(tuple(b.signal) + (b.label,) for b in ds.beats)
        assert all_rows == original

    def test_fraction_bounds(self):
        ds = synth_dataset(4, 24, 0.05, seed=10)
        for bad in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                split(ds, bad, seed=0)


class TestInvariants:
    def test_beat_rejects_nan_and_bad_labels(self):
        with pytest.raises(DataError):
            Beat(signal=np.array([0.1, np.nan]), label=0)
        with pytest.raises(DataError):
            Beat(signal=np.array([0.1, 0.2]), label=5)
        with pytest.raises(DataError):
            Beat(signal=np.array([0.1, 1.2]), label=0)

    def test_dataset_rejects_mixed_lengths(self):
        beats = [
            Beat(signal=np.zeros(8), label=0),
            Beat(signal=np.zeros(9), label=1),
        ]
        with pytest.raises(DataError):
            Dataset(beats)
