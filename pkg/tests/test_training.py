import csv
import math

import numpy as np
import pytest

from conftest import tiny_config
from flap.audio import write_wav
from flap.config import ConfigError
from flap.manifest import CaptionRecord, Manifest
from flap.model import Parameter
from flap.numerics import NumericError, load_checkpoint
from flap.rng import make_rng
from flap.synthetic import nonsense_words, tone, tone_frequencies
from flap.training import OptimizerState, adam_step, caption_sampler, lr_at, train


def reference_adam(x0, grad_fn, lr, b1, b2, eps, steps):
    """Textbook Adam on a scalar, written out longhand."""
    x, m, v, path = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        path.append(x)
    return path


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Parameter(np.array([1.0, -2.0]))
        p.grad = np.zeros(2)
        adam_step({"p": p}, OptimizerState(), lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_moves_by_lr(self):
        p = Parameter(np.array([0.5]))
        p.grad = np.array([1.0])
        adam_step({"p": p}, OptimizerState(), lr=0.01, eps=0.0)
        assert p.data[0] == pytest.approx(0.49, abs=1e-15)

    def test_quadratic_matches_reference(self):
        p = Parameter(np.array([1.0]))
        state = OptimizerState()
        ours = []
        for _ in range(100):
            p.grad = 2 * p.data.copy()
            adam_step({"p": p}, state, lr=0.1, beta1=0.99, beta2=0.9)
            ours.append(p.data[0])
        ref = reference_adam(1.0, lambda x: 2 * x, 0.1, 0.99, 0.9, 1e-8, 100)
        np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-15)
        assert state.step == 100
        assert abs(ours[-1]) < 1.0

    def test_non_finite_gradient_names_parameter(self):
        p, q = Parameter(np.ones(2)), Parameter(np.ones(2))
        p.grad, q.grad = np.ones(2), np.array([np.nan, 0.0])
        with pytest.raises(NumericError, match="decoder.head"):
            adam_step({"a": p, "decoder.head": q}, OptimizerState(), lr=0.1)
        np.testing.assert_array_equal(p.data, 1.0)

    def test_frozen_parameter_untouched(self):
        p = Parameter(np.ones(1), requires_grad=False)
        p.grad = np.ones(1)
        adam_step({"p": p}, OptimizerState(), lr=0.1)
        assert p.data[0] == 1.0


class TestSchedule:
    def test_endpoints(self):
        assert lr_at(0, 1000, 1e-4, 50) == 0.0
        assert lr_at(50, 1000, 1e-4, 50) == 1e-4
        assert abs(lr_at(1000, 1000, 1e-4, 50)) <= 1e-12

    def test_continuous_at_junction(self):
        left = lr_at(49, 1000, 1e-4, 50) + 1e-4 / 50
        assert left == pytest.approx(lr_at(50, 1000, 1e-4, 50), rel=1e-12)

    def test_monotone_pieces(self):
        lrs = [lr_at(s, 200, 1.0, 10) for s in range(201)]
        assert all(a < b for a, b in zip(lrs[:10], lrs[1:11]))
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))

    def test_out_of_range(self):
        with pytest.raises(ConfigError):
            lr_at(11, 10, 1.0, 1)


class TestCaptionSampler:
    def test_single_caption(self):
        rec = CaptionRecord("a", "a.wav", ["only"])
        rng = make_rng(0)
        assert {caption_sampler(rec, rng) for _ in range(50)} == {"only"}

    def test_uniform_over_two(self):
        rec = CaptionRecord("a", "a.wav", ["x", "y"])
        rng = make_rng(0, "caption")
        draws = [caption_sampler(rec, rng) for _ in range(10_000)]
        assert abs(draws.count("x") / 10_000 - 0.5) <= 0.03

    def test_seeded(self):
        rec = CaptionRecord("a", "a.wav", list("abcdef"))
        a = [caption_sampler(rec, make_rng(3)) for _ in range(5)]
        b = [caption_sampler(rec, make_rng(3)) for _ in range(5)]
        assert a == b


@pytest.fixture
def tiny_corpus(tmp_path):
    """Eight short tones in the tiny config's 8-bin mel space."""
    records = []
    for i, (freq, word) in enumerate(zip(tone_frequencies(8, 300, 6000), nonsense_words(8))):
        write_wav(tmp_path / f"t{i}.wav", tone(freq, 0.2))
        records.append(CaptionRecord(f"t{i}", f"t{i}.wav", [word, f"{word} tone"]))
    return Manifest(records, root=str(tmp_path))


def run(manifest, directory, **overrides):
    cfg = tiny_config(reconstruction_weight=1.0)
    cfg.mask.strategy = "2d"
    cfg.mask.frame_ratio = 0.5
    cfg.audio.spec_augment = True
    cfg.audio.time_mask_max, cfg.audio.freq_mask_max = 2, 2
    cfg.train.batch_size = 3
    cfg.train.epochs = 2
    cfg.train.checkpoint_dir = str(directory)
    cfg.train.log_path = str(directory / "log.csv")
    for key, value in overrides.items():
        setattr(cfg.train, key, value)
    return train(manifest, cfg)


def test_same_seed_is_bit_identical(tiny_corpus, tmp_path):
    a = run(tiny_corpus, tmp_path / "a")
    b = run(tiny_corpus, tmp_path / "b")
    assert (tmp_path / "a" / "final.ckpt").read_bytes() == (tmp_path / "b" / "final.ckpt").read_bytes()
    assert (tmp_path / "a" / "log.csv").read_text() == (tmp_path / "b" / "log.csv").read_text()
    c = run(tiny_corpus, tmp_path / "c", seed=1)
    assert (tmp_path / "c" / "final.ckpt").read_bytes() != (tmp_path / "a" / "final.ckpt").read_bytes()
    assert len(a.history) == len(b.history) == 6


def test_log_and_checkpoint_retention(tiny_corpus, tmp_path):
    result = run(tiny_corpus, tmp_path, epochs=4)
    with open(tmp_path / "log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "epoch", "lr", "contrastive", "reconstruction", "total", "temperature"]
    assert len(rows) == 12 and rows[-1]["epoch"] == "3"
    for row in rows:
        assert float(row["total"]) == pytest.approx(float(row["contrastive"]) + float(row["reconstruction"]))
        assert float(row["temperature"]) >= 0.01
    assert sorted(p.name for p in tmp_path.glob("*.ckpt")) == ["epoch_0002.ckpt", "epoch_0003.ckpt", "final.ckpt"]
    saved = load_checkpoint(tmp_path / "final.ckpt")
    assert set(saved) == set(result.model.parameters())
    assert (tmp_path / "config.txt").exists() and (tmp_path / "vocab.txt").exists()


def test_masking_lowers_measured_encoder_cost(tiny_corpus, tmp_path):
    masked = run(tiny_corpus, tmp_path / "m", max_steps=2)
    full = tiny_config()
    full.train.batch_size = 3
    full.train.max_steps = 2
    plain = train(tiny_corpus, full)
    assert all(m.encoder_flops < p.encoder_flops for m, p in zip(masked.history, plain.history))


def test_unreadable_audio_is_skipped(tiny_corpus, tmp_path, caplog):
    (tmp_path / "t3.wav").write_bytes(b"not a wav")
    result = run(tiny_corpus, tmp_path / "out", max_steps=1)
    assert "t3" in caplog.text
    assert len(result.history) == 1


def test_warmup_must_precede_end(tiny_corpus, tmp_path):
    with pytest.raises(ConfigError):
        run(tiny_corpus, tmp_path, max_steps=3, warmup_steps=3)


def test_batch_of_one_warns(tiny_corpus, tmp_path):
    with pytest.warns(UserWarning, match="batch_size"):
        run(tiny_corpus, tmp_path, batch_size=1, max_steps=1)
