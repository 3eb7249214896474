import struct

import numpy as np
import pytest

from dora.allocator import allocation_report, enforce_budget
from dora.checkpoint import decode, encode, load_checkpoint, save_checkpoint
from dora.config import RunConfig
from dora.errors import CheckpointError
from dora.model import encoder_forward, head_readout
from dora.train import build_model, build_task, fit

CFG = RunConfig().replace(layers=2, n_train=64, n_valid=32, T=60, batch_size=16)


@pytest.fixture(scope="module")
def trained():
    return fit(CFG)


def test_round_trip_forward_is_bitwise(trained, tmp_path):
    save_checkpoint(tmp_path / "c.dora", trained.model, CFG, 60)
    cfg, model, header = load_checkpoint(tmp_path / "c.dora")
    x = np.random.default_rng(0).normal(size=(5, CFG.model.seq_len, CFG.model.d_feat))
    assert np.array_equal(encoder_forward(model, x).value, encoder_forward(trained.model, x).value)
    assert header["step"] == 60
    for a, b in zip(model.dora_layers(), trained.model.dora_layers()):
        assert np.array_equal(a.active, b.active) and np.array_equal(a.eligible, b.eligible)
        assert np.array_equal(a.smoothed, b.smoothed)


def test_round_trip_classification_head(tmp_path):
    cfg = CFG.replace(task="classification", T=20)
    run = fit(cfg)
    _, model, _ = decode(encode(run.model, cfg))
    x = np.random.default_rng(1).normal(size=(4, cfg.model.seq_len, cfg.model.d_feat))
    assert np.array_equal(head_readout(model, x).value, head_readout(run.model, x).value)


def test_round_trip_lora(tmp_path):
    cfg = CFG.replace(adapter="lora", T=20)
    run = fit(cfg)
    _, model, _ = decode(encode(run.model, cfg))
    x = np.random.default_rng(2).normal(size=(3, cfg.model.seq_len, cfg.model.d_feat))
    assert np.array_equal(encoder_forward(model, x).value, encoder_forward(run.model, x).value)


def test_encoding_is_deterministic(trained):
    assert encode(trained.model, CFG, 60, "abc") == encode(trained.model, CFG, 60, "abc")


def test_fresh_and_cap_zero_allocations():
    base, _ = build_task(CFG)
    model = build_model(CFG, base)
    _, back, _ = decode(encode(model, CFG))
    report = allocation_report(back.dora_layers(), 0)
    assert np.all(report.grid("active") == CFG.train.components_per_site)
    enforce_budget(model.dora_layers(), 0)
    _, back, _ = decode(encode(model, CFG))
    report = allocation_report(back.dora_layers(), 0)
    assert report.total_active == 0
    assert len(report.to_csv().strip().splitlines()) == 1 + CFG.model.layers * 6


def test_corruption_detected(trained):
    data = bytearray(encode(trained.model, CFG))
    data[200] ^= 0x01
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bytes(data))


def test_truncation_and_bad_magic(trained):
    data = encode(trained.model, CFG)
    with pytest.raises(CheckpointError):
        decode(data[:50])
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"NOPE" + data[4:])


def test_wrong_base_digest_detected(trained):
    # same layout, different seed: W0 rebuilt from the header seed no longer matches
    other = CFG.replace(seed=CFG.train.seed + 1)
    base, _ = build_task(other)
    model = build_model(other, base)
    data = bytearray(encode(model, other))
    good = encode(trained.model, CFG)
    # splice the first site's digest from the other model into a valid checkpoint
    hlen = struct.unpack("<I", good[8:12])[0]
    off = 12 + hlen + 4 + 16
    other_hlen = struct.unpack("<I", data[8:12])[0]
    other_off = 12 + other_hlen + 4 + 16
    patched = bytearray(good[:-4])
    patched[off:off + 32] = data[other_off:other_off + 32]
    import zlib
    patched += struct.pack("<I", zlib.crc32(bytes(patched)))
    with pytest.raises(CheckpointError, match="digest"):
        decode(bytes(patched))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.dora")
