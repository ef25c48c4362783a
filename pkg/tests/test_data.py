"""Dataset model, JSONL round trips, splits, norm stats, synthetic generator."""

from __future__ import annotations

import json

import numpy as np
import pytest

from kdq7 import data as D
from kdq7.errors import DataContractError, InvalidInput


def small_dataset():
    dps = []
    rng = np.random.default_rng(0)
    i = 0
    for animal in ("cow_a", "cow_b", "cow_c"):
        for label in (0, 1, 2, 0):
            dps.append(
                D.Datapoint(id=i, animal_id=animal, label=label, samples=rng.normal(size=(8, 3)))
            )
            i += 1
    return D.Dataset(
        num_classes=3,
        class_names=("grazing", "resting", "alia"),
        sequence_length=8,
        input_dim=3,
        datapoints=tuple(dps),
    )


class TestDatasetModel:
    def test_duplicate_ids_rejected(self):
        dp = D.Datapoint(id=1, animal_id="a", label=0, samples=np.zeros((4, 3)))
        with pytest.raises(DataContractError):
            D.Dataset(1, ("x",), 4, 3, (dp, dp))

    def test_label_out_of_range_rejected(self):
        dp = D.Datapoint(id=1, animal_id="a", label=5, samples=np.zeros((4, 3)))
        with pytest.raises(DataContractError):
            D.Dataset(3, ("x", "y", "z"), 4, 3, (dp,))

    def test_mixed_shapes_rejected(self):
        a = D.Datapoint(id=1, animal_id="a", label=0, samples=np.zeros((4, 3)))
        b = D.Datapoint(id=2, animal_id="a", label=0, samples=np.zeros((5, 3)))
        with pytest.raises(DataContractError):
            D.Dataset(1, ("x",), 4, 3, (a, b))

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInput):
            D.Datapoint(id=1, animal_id="a", label=0, samples=np.array([[np.nan, 0, 0]]))

    def test_gather_sorts_ids(self):
        ds = small_dataset()
        x, y, ids = ds.gather([5, 1, 3])
        assert ids == [1, 3, 5]
        assert x.shape == (3, 8, 3)
        np.testing.assert_array_equal(x[0], ds.by_id(1).samples)


class TestRoundTrip:
    def test_save_load_identical(self, tmp_path):
        ds = small_dataset()
        p = tmp_path / "ds.jsonl"
        D.save_dataset(ds, p)
        back = D.load_dataset(p)
        assert back.num_classes == ds.num_classes
        assert back.class_names == ds.class_names
        assert back.sequence_length == ds.sequence_length
        assert len(back) == len(ds)
        for dp in ds.datapoints:
            other = back.by_id(dp.id)
            assert other.animal_id == dp.animal_id
            assert other.label == dp.label
            np.testing.assert_array_equal(other.samples, dp.samples)

    def test_headerless_file_accepted(self, tmp_path):
        p = tmp_path / "bare.jsonl"
        recs = [
            {"id": 0, "animal": "a", "label": 0, "samples": [[0.1, 0.2, 0.3]] * 4},
            {"id": 1, "animal": "b", "label": 2, "samples": [[0.0, 0.0, 0.0]] * 4},
        ]
        p.write_text("".join(json.dumps(r) + "\n" for r in recs))
        ds = D.load_dataset(p)
        assert ds.num_classes == 3  # inferred from max label
        assert ds.class_names == ("class_0", "class_1", "class_2")

    def test_malformed_json_reports_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": 0, "animal": "a", "label": 0, "samples": [[0,0,0]]}\n{oops\n')
        with pytest.raises(DataContractError, match="line 2"):
            D.load_dataset(p)

    def test_missing_field_reports_line(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"id": 0, "animal": "a", "samples": [[0,0,0]]}\n')
        with pytest.raises(DataContractError, match="line 1.*label"):
            D.load_dataset(p)

    def test_label_out_of_header_range_rejected(self, tmp_path):
        ds = small_dataset()
        p = tmp_path / "ds.jsonl"
        D.save_dataset(ds, p)
        lines = p.read_text().splitlines()
        rec = json.loads(lines[1])
        rec["label"] = 7
        lines[1] = json.dumps(rec)
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataContractError):
            D.load_dataset(p)

    def test_mixed_window_length_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        recs = [
            {"id": 0, "animal": "a", "label": 0, "samples": [[0, 0, 0]] * 4},
            {"id": 1, "animal": "a", "label": 0, "samples": [[0, 0, 0]] * 5},
        ]
        p.write_text("".join(json.dumps(r) + "\n" for r in recs))
        with pytest.raises(DataContractError, match="line 2"):
            D.load_dataset(p)

    def test_duplicate_id_rejected(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        rec = {"id": 3, "animal": "a", "label": 0, "samples": [[0, 0, 0]] * 4}
        p.write_text(json.dumps(rec) + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(DataContractError, match="duplicate"):
            D.load_dataset(p)


class TestNormStats:
    def test_constant_axis_floors_std(self):
        dps = [
            D.Datapoint(id=0, animal_id="a", label=0, samples=np.full((6, 3), 2.5)),
            D.Datapoint(id=1, animal_id="b", label=0, samples=np.full((6, 3), 2.5)),
        ]
        ds = D.Dataset(1, ("x",), 6, 3, tuple(dps))
        st = D.compute_norm_stats(ds, [0, 1])
        np.testing.assert_allclose(st.mean, 2.5, rtol=1e-6)
        np.testing.assert_allclose(st.inv_std, 1e6, rtol=1e-3)

    def test_standard_normal_axis(self):
        rng = np.random.default_rng(123)
        dps = [
            D.Datapoint(id=i, animal_id="a", label=0, samples=rng.normal(size=(500, 3)))
            for i in range(70)
        ]
        ds = D.Dataset(1, ("x",), 500, 3, tuple(dps))
        st = D.compute_norm_stats(ds, range(70))
        assert np.all(np.abs(st.mean) < 0.02)
        assert np.all(np.abs(st.inv_std - 1.0) < 0.02)

    def test_single_datapoint_subset(self):
        ds = small_dataset()
        st = D.compute_norm_stats(ds, [3])
        s = ds.by_id(3).samples
        np.testing.assert_allclose(st.mean, s.mean(axis=0), rtol=1e-6)

    def test_permutation_invariant_bitwise(self):
        ds = small_dataset()
        a = D.compute_norm_stats(ds, [0, 3, 5, 7, 9])
        b = D.compute_norm_stats(ds, [9, 5, 0, 7, 3])
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.inv_std, b.inv_std)

    def test_empty_subset_rejected(self):
        with pytest.raises(InvalidInput):
            D.compute_norm_stats(small_dataset(), [])


class TestLoaoSplits:
    def test_one_fold_per_animal_partition(self):
        ds = small_dataset()
        folds = D.loao_splits(ds)
        assert len(folds) == 3
        all_val = [i for _, val in folds for i in val]
        assert sorted(all_val) == sorted(dp.id for dp in ds.datapoints)
        for train, val in folds:
            assert not set(train) & set(val)
            assert sorted(train + val) == sorted(dp.id for dp in ds.datapoints)

    def test_fold_order_lexicographic(self):
        ds = small_dataset()
        folds = D.loao_splits(ds)
        order = [ds.by_id(val[0]).animal_id for _, val in folds]
        assert order == sorted(order)

    def test_eight_animals_eight_folds(self):
        ds = D.synth_gen(num_animals=8, windows_per_animal=3, sequence_length=16, seed=1)
        assert len(D.loao_splits(ds)) == 8

    def test_single_animal_rejected(self):
        ds = D.synth_gen(num_animals=1, windows_per_animal=4, sequence_length=16, seed=1)
        with pytest.raises(InvalidInput):
            D.loao_splits(ds)


class TestSynthGen:
    def test_deterministic_bytes(self, tmp_path):
        a = D.synth_gen(3, 10, 32, seed=9)
        b = D.synth_gen(3, 10, 32, seed=9)
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        D.save_dataset(a, pa)
        D.save_dataset(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_different_seeds_differ(self):
        a = D.synth_gen(2, 5, 32, seed=1)
        b = D.synth_gen(2, 5, 32, seed=2)
        assert any(
            not np.array_equal(x.samples, y.samples)
            for x, y in zip(a.datapoints, b.datapoints)
        )

    def test_class_imbalance_50_35_15(self):
        ds = D.synth_gen(2, 40, 16, seed=3)
        labels = [dp.label for dp in ds.datapoints]
        # per animal: 20 / 14 / 6
        assert labels.count(0) == 40
        assert labels.count(1) == 28
        assert labels.count(2) == 12

    def test_geometry_and_names(self):
        ds = D.synth_gen(2, 4, 24, seed=0)
        assert ds.sequence_length == 24
        assert ds.input_dim == 3
        assert ds.class_names == ("grazing", "resting", "alia")
        assert len(ds) == 8

    def test_round_trip_exact(self, tmp_path):
        ds = D.synth_gen(2, 6, 16, seed=5)
        p = tmp_path / "ds.jsonl"
        D.save_dataset(ds, p)
        back = D.load_dataset(p)
        for dp in ds.datapoints:
            np.testing.assert_array_equal(back.by_id(dp.id).samples, dp.samples)

    def test_rejects_bad_counts(self):
        with pytest.raises(InvalidInput):
            D.synth_gen(0, 5, 16, seed=0)
        with pytest.raises(InvalidInput):
            D.synth_gen(2, 5, 4, seed=0)
