import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ads3d import eegio


def make_set(n_trials=3, n_channels=2, n_samples=4, fill=0.0):
    data = np.full((n_trials, n_channels, n_samples), fill, dtype=np.float32)
    labels = np.arange(n_trials) % 4
    names = tuple(f"C{i}" for i in range(n_channels))
    return eegio.EpochSet(data=data, labels=labels, fs=500.0, channel_names=names)


def test_zero_epochset_file_size(tmp_path):
    path = tmp_path / "zero.ads3"
    eegio.write_epochset(make_set(1, 2, 4), path)
    header = 4 + 2 + 4 + 2 + 4 + 4
    expected = header + 1 + 2 * 8 + 1 * 2 * 4 * 4
    assert path.stat().st_size == expected
    back = eegio.read_epochset(path)
    assert np.array_equal(back.data, np.zeros((1, 2, 4), dtype=np.float32))


def test_large_roundtrip_checksum(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.standard_normal((200, 64, 1001)).astype(np.float32)
    es = eegio.EpochSet(data=data, labels=rng.integers(0, 4, 200),
                        fs=250.0, channel_names=[f"ch{i}" for i in range(64)])
    path = tmp_path / "big.ads3"
    eegio.write_epochset(es, path)
    back = eegio.read_epochset(path)
    assert hashlib.sha256(back.data.tobytes()).digest() == \
        hashlib.sha256(es.data.tobytes()).digest()
    assert back.channel_names == es.channel_names
    assert np.array_equal(back.labels, es.labels)
    assert back.fs == es.fs


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ads3"
    eegio.write_epochset(make_set(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(raw)
    with pytest.raises(eegio.FormatError, match="bad magic"):
        eegio.read_epochset(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "trunc.ads3"
    eegio.write_epochset(make_set(), path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(eegio.FormatError, match="truncated"):
        eegio.read_epochset(path)


def test_label_out_of_range_rejected():
    with pytest.raises(eegio.FormatError, match="labels"):
        eegio.EpochSet(data=np.zeros((1, 1, 1), dtype=np.float32),
                       labels=np.array([4]), fs=1.0, channel_names=("a",))


def test_duplicate_channel_names_rejected():
    with pytest.raises(eegio.FormatError, match="unique"):
        eegio.EpochSet(data=np.zeros((1, 2, 1), dtype=np.float32),
                       labels=np.array([0]), fs=1.0, channel_names=("A", "a"))


@settings(max_examples=25, deadline=None)
@given(
    n_trials=st.integers(1, 6),
    n_channels=st.integers(1, 8),
    n_samples=st.integers(1, 30),
    seed=st.integers(0, 2**31),
)
def test_epochset_roundtrip_property(tmp_path_factory, n_trials, n_channels,
                                     n_samples, seed):
    rng = np.random.default_rng(seed)
    es = eegio.EpochSet(
        data=rng.standard_normal((n_trials, n_channels, n_samples)).astype(np.float32),
        labels=rng.integers(0, 4, n_trials),
        fs=float(rng.uniform(1, 1000)),
        channel_names=[f"c{i}" for i in range(n_channels)],
    )
    path = tmp_path_factory.mktemp("rt") / "x.ads3"
    eegio.write_epochset(es, path)
    back = eegio.read_epochset(path)
    assert np.array_equal(back.data, es.data)
    assert np.array_equal(back.labels, es.labels)
    assert np.float32(es.fs) == np.float32(back.fs)


def test_empty_checkpoint_roundtrip(tmp_path):
    path = tmp_path / "empty.adsw"
    eegio.write_checkpoint(eegio.ModelCheckpoint(), path)
    back = eegio.read_checkpoint(path)
    assert back.entries == [] and back.metadata == {}


def test_table_sized_entry_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    values = rng.standard_normal(10 * 1 * 4 * 4 * 125).astype(np.float32)
    ckpt = eegio.ModelCheckpoint(
        entries=[("conv.a1.weight", (10, 1, 4, 4, 125), values)],
        metadata={"seed": "7", "loss": "0.25"},
    )
    path = tmp_path / "w.adsw"
    eegio.write_checkpoint(ckpt, path)
    back = eegio.read_checkpoint(path)
    name, dims, got = back.entries[0]
    assert name == "conv.a1.weight" and dims == (10, 1, 4, 4, 125)
    assert np.array_equal(got, values)
    assert back.metadata == {"seed": "7", "loss": "0.25"}


def test_dim_mismatch_rejected(tmp_path):
    ckpt = eegio.ModelCheckpoint(
        entries=[("w", (2, 3), np.zeros(5, dtype=np.float32))])
    with pytest.raises(eegio.FormatError, match="dims"):
        eegio.write_checkpoint(ckpt, tmp_path / "bad.adsw")


def test_unknown_checkpoint_version(tmp_path):
    path = tmp_path / "v.adsw"
    eegio.write_checkpoint(eegio.ModelCheckpoint(), path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(raw)
    with pytest.raises(eegio.FormatError, match="version"):
        eegio.read_checkpoint(path)


def test_files_are_little_endian(tmp_path):
    path = tmp_path / "le.ads3"
    es = make_set(1, 1, 1, fill=1.0)
    eegio.write_epochset(es, path)
    raw = path.read_bytes()
    # u32 n_trials immediately after magic+version
    assert raw[6:10] == (1).to_bytes(4, "little")
    # final f32 sample is 1.0 little-endian
    assert raw[-4:] == np.float32(1.0).tobytes()
