import numpy as np
import pytest

from inkcheck.checkpoint import CheckpointError, decode_checkpoint, encode_checkpoint
from inkcheck.hwr import HwrConfig, HwrSchedule, Recognizer, extract_features, greedy_decode, train_hwr
from inkcheck.renderer import random_style_renderer
from inkcheck.textgen import Alphabet, build_dataset

from oracles import collapse

ABC = Alphabet()


def path_logits(path, n_classes=27):
    out = np.full((len(path), n_classes), -5.0)
    out[np.arange(len(path)), path] = 5.0
    return out


def test_greedy_collapse_rule():
    blank = ABC.blank_index
    assert greedy_decode(path_logits([0, 0, blank, 1]), ABC) == "ab"
    assert greedy_decode(path_logits([blank] * 6), ABC) == ""
    assert greedy_decode(path_logits([0, blank, 0]), ABC) == "aa"


def test_greedy_matches_collapse_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        logits = rng.normal(size=(rng.integers(1, 12), 27))
        expected = ABC.decode(collapse(tuple(logits.argmax(axis=1)), ABC.blank_index))
        assert greedy_decode(logits, ABC) == expected


def test_greedy_recovers_blank_interleaved_label():
    for word in ["letter", "a", "zzz", "spelling"]:
        path = []
        for c in ABC.encode(word):
            path += [c, ABC.blank_index]
        assert greedy_decode(path_logits(path), ABC) == word


def test_desk_config_shapes():
    cfg = HwrConfig()
    assert (cfg.time_steps, cfg.feature_dim) == (32, 64)
    assert cfg.rnn_input == 8 * 16
    model = Recognizer(cfg, seed=0)
    img = random_style_renderer()("shape", np.random.default_rng(0))
    feats = extract_features(img, model)
    assert feats.shape == (32, 64)
    assert np.all(np.isfinite(feats))
    assert feats.tobytes() == extract_features(img, model).tobytes()


def test_config_validation():
    with pytest.raises(ValueError):
        HwrConfig(width=100)
    with pytest.raises(ValueError):
        HwrConfig(pools=((2, 2),))
    with pytest.raises(ValueError):
        HwrConfig(cell="rnn")
    cfg = HwrConfig(width=128, pools=((2, 2), (2, 2)), cell="lstm")
    assert cfg.time_steps == 32
    assert HwrConfig.from_dict(cfg.to_dict()) == cfg


def test_features_plus_top_reproduce_logits():
    model = Recognizer(HwrConfig(), seed=3)
    rng = np.random.default_rng(1)
    imgs = np.stack([random_style_renderer()(w, rng) for w in ["one", "two", "three"]])
    full = model.logits(imgs).data
    feats = model.extract(imgs)
    np.testing.assert_array_equal(model.top(feats).data, full)
    assert model.read(feats) == [greedy_decode(l, ABC) for l in full]


def test_extract_leaves_parameters_trainable():
    model = Recognizer(HwrConfig(), seed=0)
    model.extract(np.zeros((1, 32, 256)))
    assert model.trainable


def test_one_word_memorized_and_reproducible():
    cfg = HwrConfig(width=64)
    ds = build_dataset(["cab"] * 8, 0.0, 1, random_style_renderer(32, 64), seed=0)
    sched = HwrSchedule(epochs=40, batch_size=8, learning_rate=1e-2, final_learning_rate=2e-3, patience=40)
    first = train_hwr(ds, ds, cfg, sched)
    assert first.history[-1]["val_cer"] == 0.0
    assert first.model.recognize(ds.images()) == ["cab"] * 8
    second = train_hwr(ds, ds, cfg, sched)
    assert [h["loss"] for h in first.history] == [h["loss"] for h in second.history]


def test_training_rejects_misspelled_examples():
    ds = build_dataset(["cab"] * 4, 1.0, 1, random_style_renderer(32, 64), seed=0)
    with pytest.raises(ValueError):
        train_hwr(ds, ds, HwrConfig(width=64))


def test_infeasible_labels_are_skipped(caplog):
    cfg = HwrConfig(width=64)  # 8 time steps
    ds = build_dataset(["ab", "abcdefghij"], 0.0, 1, None, seed=0)
    for e in ds:
        e.image = np.zeros((32, 64))
    result = train_hwr(ds, ds, cfg, HwrSchedule(epochs=1))
    assert result.skipped == 2
    assert "infeasible" in caplog.text


def test_checkpoint_round_trip(tmp_path):
    model = Recognizer(HwrConfig(), seed=5)
    digest = model.save(tmp_path / "m.ckpt")
    back = Recognizer.load(tmp_path / "m.ckpt", expected=HwrConfig())
    assert back.digest == digest
    for k, v in model.state().items():
        assert back.params[k].data.tobytes() == v.tobytes()
    assert Recognizer(HwrConfig(), seed=5).save(tmp_path / "n.ckpt") == digest


def test_checkpoint_config_mismatch(tmp_path):
    Recognizer(HwrConfig(), seed=0).save(tmp_path / "m.ckpt")
    with pytest.raises(CheckpointError):
        Recognizer.load(tmp_path / "m.ckpt", expected=HwrConfig(recurrent_hidden=16))


def test_checkpoint_corruption_detected():
    raw = encode_checkpoint("hwr", {"a": 1}, {"w": np.arange(3.0)})
    header, params = decode_checkpoint(raw)
    assert header["kind"] == "hwr" and params["w"].tolist() == [0.0, 1.0, 2.0]
    with pytest.raises(CheckpointError):
        decode_checkpoint(raw[:-8])
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"garbage" + raw)
    with pytest.raises(CheckpointError):
        decode_checkpoint(raw.replace(b'"a":1', b'"a":2'))
