import numpy as np
import pytest

from dora.errors import ConfigError
from dora.layers import KIND_ORDER, LayerId, MatrixKind
from dora.model import Encoder, TransformerConfig, encoder_forward, init_base, with_deltas
from dora.tasks import (ClassificationSpec, SyntheticDataset, TeacherSpec, evaluate,
                        make_classification_task, make_teacher_task, planted_delta)

CFG = TransformerConfig()
HOT = LayerId(1, MatrixKind.QUERY)


def teacher(seed=0, hot_rank=6, base_rank=1, n_train=64, n_valid=32):
    base = init_base(CFG, np.random.default_rng(seed))
    spec = TeacherSpec.heterogeneous(CFG, HOT, hot_rank, base_rank, 1.0, seed + 100)
    return base, make_teacher_task(CFG, base, spec, n_train, n_valid)


def test_planted_delta_has_exact_rank_and_flat_spectrum(rng):
    m = planted_delta(rng, (16, 32), 4, 0.7)
    sv = np.linalg.svd(m, compute_uv=False)
    assert np.allclose(sv[:4], 0.7, atol=1e-12)
    assert np.all(sv[4:] < 1e-12)


def test_planted_delta_rejects_oversized_rank(rng):
    with pytest.raises(ConfigError) as err:
        planted_delta(rng, (4, 8), 5, 1.0)
    assert err.value.key == "teacher_rank"


def test_teacher_scores_itself_perfectly():
    base, ds = teacher()
    model = Encoder(CFG, with_deltas(base, ds.deltas), adapter="none")
    assert evaluate(model, ds, "valid")["loss"] <= 1e-10
    assert evaluate(model, ds, "train")["loss"] <= 1e-10


def test_zero_rank_teacher_is_solved_by_frozen_base():
    base, ds = teacher(hot_rank=0, base_rank=0)
    model = Encoder(CFG, base, adapter="dora", rank=2, rng=np.random.default_rng(0))
    assert evaluate(model, ds, "valid")["loss"] <= 1e-20


def test_rank2_truncation_leaves_residual_only_at_hot_site():
    # best rank-2 fit of each planted delta (Eckart-Young): residual is the tail spectrum
    _, ds = teacher()
    for lid, delta in ds.deltas.items():
        sv = np.linalg.svd(delta, compute_uv=False)
        residual = float(np.sqrt(np.sum(sv[2:] ** 2)))
        if lid == HOT:
            assert residual == pytest.approx(2.0, rel=1e-9)  # four unit singular values left
        else:
            assert residual < 1e-12


def test_teacher_task_is_deterministic():
    _, a = teacher(seed=3)
    _, b = teacher(seed=3)
    assert np.array_equal(a.x_train, b.x_train) and np.array_equal(a.y_valid, b.y_valid)
    _, c = teacher(seed=4)
    assert not np.array_equal(a.x_train, c.x_train)


def test_teacher_targets_have_encoder_shape():
    _, ds = teacher(n_train=10, n_valid=5)
    assert ds.y_train.shape == (10, CFG.seq_len, CFG.d)
    assert ds.kind == "regression"


def test_dataset_save_load_roundtrip(tmp_path):
    _, ds = teacher(n_train=8, n_valid=4)
    ds.save(tmp_path / "d.npz")
    back = SyntheticDataset.load(tmp_path / "d.npz")
    assert np.array_equal(back.x_train, ds.x_train) and np.array_equal(back.y_valid, ds.y_valid)
    assert set(back.deltas) == set(ds.deltas)
    assert np.array_equal(back.deltas[HOT], ds.deltas[HOT])


def _lstsq_probe_accuracy(train_feats, y_train, valid_feats, y_valid, n_classes):
    aug = lambda f: np.c_[f, np.ones(len(f))]
    w, *_ = np.linalg.lstsq(aug(train_feats), np.eye(n_classes)[y_train], rcond=None)
    return float(np.mean((aug(valid_feats) @ w).argmax(axis=1) == y_valid))


def test_linear_probe_on_raw_features_is_perfect_at_zero_difficulty():
    ds = make_classification_task(CFG, ClassificationSpec(n_classes=3, seed=7), 400, 200)
    acc = _lstsq_probe_accuracy(ds.x_train.mean(axis=1), ds.y_train, ds.x_valid.mean(axis=1),
                                ds.y_valid, 3)
    assert acc == 1.0


def test_linear_probe_on_teacher_features_is_perfect_at_zero_difficulty():
    base = init_base(CFG, np.random.default_rng(0), n_classes=2)
    spec = TeacherSpec.heterogeneous(CFG, HOT, seed=5)
    ds = make_classification_task(CFG, ClassificationSpec(seed=5), 512, 256, base, spec)
    assert set(ds.deltas) == set(spec.ranks)
    enc = Encoder(CFG, with_deltas(base, ds.deltas), adapter="none")
    feats = lambda x: encoder_forward(enc, x).value.mean(axis=1)
    assert _lstsq_probe_accuracy(feats(ds.x_train), ds.y_train, feats(ds.x_valid), ds.y_valid, 2) == 1.0


def test_label_noise_rate_matches_difficulty():
    clean = make_classification_task(CFG, ClassificationSpec(2, 0.0, seed=1), 4000, 10)
    noisy = make_classification_task(CFG, ClassificationSpec(2, 0.25, seed=1), 4000, 10)
    # same seed draws the same inputs; only the flips differ
    assert np.array_equal(clean.x_train, noisy.x_train)
    assert np.mean(clean.y_train != noisy.y_train) == pytest.approx(0.25, abs=0.03)


def test_majority_baseline_equals_class_prior():
    ds = make_classification_task(CFG, ClassificationSpec(2, 0.0, seed=2), 100, 400)
    prior = np.bincount(ds.y_valid, minlength=2) / len(ds.y_valid)
    majority = np.full_like(ds.y_valid, prior.argmax())
    assert np.mean(majority == ds.y_valid) == pytest.approx(prior.max())


def test_classification_spec_validation():
    with pytest.raises(ConfigError):
        ClassificationSpec(n_classes=1)
    with pytest.raises(ConfigError):
        ClassificationSpec(difficulty=1.5)



def test_evaluate_accuracy_extremes(monkeypatch):
    import dora.tasks as tasks
    from dora import numerics as nx

    y = np.array([0, 1, 1, 0])
    ds = SyntheticDataset(np.zeros((4, 2, 2)), y, np.zeros((4, 2, 2)), y, "classification", 2)
    monkeypatch.setattr(tasks, "head_readout", lambda m, x: nx.Node(np.eye(2)[y] * 5.0))
    assert evaluate(None, ds)["accuracy"] == 1.0
    monkeypatch.setattr(tasks, "head_readout", lambda m, x: nx.Node(np.tile([1.0, 0.0], (4, 1))))
    assert evaluate(None, ds)["accuracy"] == 0.5


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_full_finetune_reaches_95_percent_in_500_steps(seed):
    from dora.config import RunConfig
    from dora.train import build_task, full_finetune

    cfg = RunConfig().replace(task="classification", seed=seed)
    base, ds = build_task(cfg)
    model = Encoder(cfg.model, base, adapter="none")
    full_finetune(model, ds, 500, seed=seed)
    assert evaluate(model, ds)["accuracy"] >= 0.95
    # the host weights are frozen again afterwards
    assert not any(p.requires_grad for p in model.base_params())
