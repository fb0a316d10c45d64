import json
import math

import numpy as np
import pytest

import apt_tuning as apt


@pytest.fixture(scope="module")
def bank():
    return apt.generate_synthetic_bank(intra_class_sigma=0.8, seed=1)


def test_bank_shape(bank):
    assert bank.num_classes == 4
    assert bank.dim == 16
    assert len(bank) == 128
    assert bank.tokens(0).shape == (5, 16)
    assert bank.text_embeddings.shape == (4, 16)
    assert len(bank.indices(apt.SplitTag.TEST)) == 40


def test_bank_round_trip(bank, tmp_path):
    path = tmp_path / "b.aptb"
    apt.save_bank(bank, path)
    assert apt.load_bank(path) == bank
    data = apt.encode_bank(bank)
    assert apt.encode_bank(apt.decode_bank(data)) == data
    with pytest.raises(apt.MalformedHeader):
        apt.decode_bank(b"XXXX" + data[4:])
    with pytest.raises(apt.AptError):
        apt.decode_bank(data[:10])


def test_block_identity_and_gradients():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 8))
    t = rng.normal(size=(5, 8))
    p = apt.init_params(8, 2, 32, seed=1)
    np.testing.assert_array_equal(apt.refine(p, w, t), w)
    for a in apt.attention(p, w, t):
        np.testing.assert_allclose(a.sum(axis=1), 1.0)
    assert apt.finite_diff_check(p, w, t, 1e-4) < 1e-4
    with pytest.raises(apt.DimMismatch):
        apt.init_params(8, 3, 32, seed=1)
    with pytest.raises(apt.InvalidEpsilon):
        apt.finite_diff_check(p, w, t, 0.0)


def test_classifier():
    p = apt.class_probabilities(np.eye(2), np.array([1.0, 0.0]), tau=1.0)
    np.testing.assert_allclose(p, [0.73106, 0.26894], atol=1e-5)
    assert apt.zero_shot_predict(np.eye(4), np.eye(4)[2]) == 2
    assert apt.cosine_similarity(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(1 / math.sqrt(2))


def test_train_predict_and_checkpoint(bank, tmp_path):
    episode = apt.sample_episode(bank, 4, seed=3)
    assert len(episode.train_indices) == 16
    cfg = apt.TrainConfig()
    cfg.shots = 4
    cfg.epochs = 5
    cfg.heads = 2
    cfg.seed = 3
    model = apt.train(bank, episode, cfg)
    assert len(model.history) == 5
    zs = apt.zero_shot_accuracy(bank, episode.val_indices)
    assert model.history[0][2] == zs
    acc = apt.evaluate_accuracy(model, bank, episode.test_indices)
    assert 0.0 <= acc <= 1.0
    apt.save_checkpoint(model, tmp_path / "m.aptc")
    back = apt.load_checkpoint(tmp_path / "m.aptc")
    assert back.params == model.params

    summaries = apt.mc_predict(model, bank, episode.test_indices, samples=10, seed=1)
    assert all(0.0 <= s["entropy"] <= math.log(4) + 1e-12 for s in summaries)
    again = apt.mc_predict(model, bank, episode.test_indices, samples=10, seed=1, jobs=2)
    for a, b in zip(summaries, again):
        np.testing.assert_array_equal(a["mean_probs"], b["mean_probs"])


def test_uq_and_analysis():
    value, rows = apt.ece([0.9, 0.8, 0.3, 0.2], [True, False, True, False], bins=2)
    assert value == pytest.approx(0.30, abs=1e-15)
    assert len(rows) == 2
    assert apt.entropy(np.full(4, 0.25)) == pytest.approx(math.log(4))
    assert apt.confidence(0.5, 1.0) == 0.5
    assert apt.harmonic_mean(43.74, 31.26) == pytest.approx(36.46, abs=0.01)
    assert apt.epochs_for_shots(16) == 150
    with pytest.raises(apt.UnsupportedShots):
        apt.epochs_for_shots(3)
    x = np.array([[0.0, 0, 0, 0], [2.0, 0, 0, 0]])
    assert apt.intra_class_variance(x, [0, 0]) == pytest.approx(0.25)


def test_cli(tmp_path):
    bank = str(tmp_path / "bank.aptb")
    code, _, _ = apt.cli(["synth", "--classes", "4", "--dim", "16", "--seed", "7", "-o", bank])
    assert code == 0
    code, out, _ = apt.cli(["zeroshot", "--bank", bank])
    assert code == 0 and out.startswith("accuracy: ")
    code, _, err = apt.cli(["train", "--shots", "3"])
    assert code == 2 and "16" in err
    run = str(tmp_path / "run")
    code, _, err = apt.cli(["uq", "--bank", bank, "--shots", "2", "--epochs", "2", "--mc-samples", "5", "--out", run])
    assert code == 0, err
    report = json.loads(apt.run_report(run))
    assert {"accuracy_mean", "accuracy_per_seed", "ece", "mean_entropy"} <= report.keys()
