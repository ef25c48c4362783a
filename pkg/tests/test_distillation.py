"""Soft-label generation, the CSV form, and the distillation wrappers."""

import numpy as np
import pytest

from kdq7 import distillation as dist
from kdq7 import training as tr
from kdq7.data import Datapoint, Dataset, compute_norm_stats
from kdq7.errors import DataContractError, InvalidInput
from kdq7.metrics import confusion, mcc_multiclass
from kdq7.model import Architecture

from test_training import toy_dataset


def small_model(ds, seed=0, hidden=4):
    ids = [dp.id for dp in ds.datapoints]
    arch = Architecture(
        num_gru_layers=1, hidden_size=hidden,
        num_classes=ds.num_classes, sequence_length=ds.sequence_length,
    )
    return tr.init_model(arch, compute_norm_stats(ds, ids), seed=seed), arch, ids


def test_generate_matches_model_logits():
    ds = toy_dataset(per_class=3)
    model, arch, ids = small_model(ds)
    labels = dist.generate_soft_labels(model, ds, provenance="unit")
    x, _, sids = ds.gather(ids)
    want = tr.forward_batch_float(model, x)
    assert labels.ids() == sids
    for i, dp_id in enumerate(sids):
        assert np.array_equal(labels.records[dp_id], want[i])
    assert labels.provenance == "unit"


def test_generate_subset_and_callable_teacher():
    ds = toy_dataset(per_class=3)
    _, _, ids = small_model(ds)
    subset = ids[:5]

    def teacher(windows):
        return np.tile([1.0, -1.0], (len(windows), 1))

    labels = dist.generate_soft_labels(teacher, ds, ids=subset)
    assert labels.ids() == sorted(subset)
    assert np.array_equal(labels.records[subset[0]], np.array([1.0, -1.0], np.float32))


def test_generate_rejects_class_mismatch():
    ds = toy_dataset(per_class=2)
    ids = [dp.id for dp in ds.datapoints]
    arch = Architecture(num_gru_layers=1, hidden_size=4, num_classes=3, sequence_length=16)
    wrong = tr.init_model(arch, compute_norm_stats(ds, ids), seed=0)
    with pytest.raises(InvalidInput, match="classes"):
        dist.generate_soft_labels(wrong, ds)


def test_soft_label_validation():
    with pytest.raises(InvalidInput):
        dist.SoftLabelSet(num_classes=2, records={1: np.array([1.0, 2.0, 3.0])})
    with pytest.raises(InvalidInput):
        dist.SoftLabelSet(num_classes=2, records={1: np.array([np.inf, 0.0])})


def test_csv_round_trip_is_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    raw = rng.normal(0.0, 10.0, size=(7, 3)).astype(np.float32)
    raw[0] = [1e-30, -1e30, 3.14159]
    records = {i * 11: raw[i] for i in range(7)}
    labels = dist.SoftLabelSet(num_classes=3, records=records)
    path = tmp_path / "soft.csv"
    dist.save_soft_labels(labels, path)

    head = path.read_text().splitlines()[0]
    assert head == "id,logit_0,logit_1,logit_2"

    back = dist.load_soft_labels(path)
    assert back.num_classes == 3
    assert back.ids() == labels.ids()
    for dp_id in labels.ids():
        assert np.array_equal(back.records[dp_id], labels.records[dp_id])


def test_csv_malformed_rows(tmp_path):
    path = tmp_path / "soft.csv"
    path.write_text("id,logit_0,logit_1\n1,0.5\n")
    with pytest.raises(DataContractError, match="line 2"):
        dist.load_soft_labels(path)
    path.write_text("id,logit_0,logit_1\nseven,0.5,0.5\n")
    with pytest.raises(DataContractError, match="line 2"):
        dist.load_soft_labels(path)
    path.write_text("id,logit_0,logit_1\n1,0.5,0.5\n1,0.2,0.2\n")
    with pytest.raises(DataContractError, match="duplicate id"):
        dist.load_soft_labels(path)
    path.write_text("wrong,header\n")
    with pytest.raises(DataContractError, match="header"):
        dist.load_soft_labels(path)
    path.write_text("")
    with pytest.raises(DataContractError, match="empty"):
        dist.load_soft_labels(path)


def test_distill_alpha_one_is_plain_training():
    ds = toy_dataset(per_class=4)
    model, arch, ids = small_model(ds, seed=3)
    cfg = tr.TrainConfig(epochs=4, seed=2)
    labels = dist.generate_soft_labels(model, ds, provenance="any teacher")
    plain = tr.train(ds, ids, arch, cfg)
    kd = dist.distill(ds, ids, arch, cfg, tr.KdConfig(alpha=1.0, temperature=2.0), labels)
    assert np.array_equal(plain.mlp.w2, kd.mlp.w2)
    assert np.array_equal(plain.gru_layers[0].w_xn, kd.gru_layers[0].w_xn)


def test_distill_refuses_partial_coverage():
    ds = toy_dataset(per_class=2)
    model, arch, ids = small_model(ds)
    labels = dist.generate_soft_labels(model, ds, ids=ids[:-1])
    with pytest.raises(InvalidInput, match="missing"):
        dist.distill(ds, ids, arch, tr.TrainConfig(epochs=1, seed=0), tr.KdConfig(), labels)


def test_distill_rejects_class_mismatch():
    ds = toy_dataset(per_class=2)
    _, arch, ids = small_model(ds)
    labels = dist.SoftLabelSet(num_classes=5, records={i: np.zeros(5) for i in ids})
    with pytest.raises(InvalidInput, match="classes"):
        dist.distill(ds, ids, arch, tr.TrainConfig(epochs=1, seed=0), tr.KdConfig(), labels)


def test_random_teacher_with_pure_soft_loss_is_harmful():
    # negative control: matching an untrained teacher's logits while
    # ignoring hard labels must not solve the task
    ds = toy_dataset()
    ids = [dp.id for dp in ds.datapoints]
    arch = Architecture(num_gru_layers=1, hidden_size=6, num_classes=2, sequence_length=16)
    cfg = tr.TrainConfig(epochs=20, seed=0, learning_rate=5e-3, batch_size=8)
    x, y, _ = ds.gather(ids)

    plain = tr.train(ds, ids, arch, cfg)
    mcc_plain = mcc_multiclass(confusion(tr.predict_batch_float(plain, x), y, 2))

    rng = np.random.default_rng(9)
    noise = dist.SoftLabelSet(
        num_classes=2, records={i: rng.normal(0, 3, size=2) for i in ids}
    )
    misled = dist.distill(ds, ids, arch, cfg, tr.KdConfig(alpha=0.0, temperature=1.0), noise)
    mcc_misled = mcc_multiclass(confusion(tr.predict_batch_float(misled, x), y, 2))
    assert mcc_plain >= 0.95
    assert mcc_misled < mcc_plain - 0.2


def test_self_distill_deterministic_and_alpha_one_degenerate():
    ds = toy_dataset(per_class=4)
    _, arch, ids = small_model(ds, hidden=6)
    cfg = tr.TrainConfig(epochs=3, seed=5)

    a = dist.self_distill(ds, ids, arch, cfg, tr.KdConfig(alpha=0.1, temperature=3.0))
    b = dist.self_distill(ds, ids, arch, cfg, tr.KdConfig(alpha=0.1, temperature=3.0))
    assert np.array_equal(a.mlp.w2, b.mlp.w2)

    # alpha = 1: generation two ignores the teacher, so it equals plain training
    c = dist.self_distill(ds, ids, arch, cfg, tr.KdConfig(alpha=1.0, temperature=3.0))
    plain = tr.train(ds, ids, arch, cfg)
    assert np.array_equal(c.mlp.w2, plain.mlp.w2)
    assert np.array_equal(c.gru_layers[0].w_hr, plain.gru_layers[0].w_hr)
