import json
import struct

import numpy as np
import pytest

from app import checkpoint
from app.activations import ActivationKind
from app.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from app.network import PARAM_ORDER, build
from tests.conftest import small_model


def test_roundtrip_is_bit_identical(tmp_path, model_config):
    net = build(model_config, seed=7)
    path = checkpoint.save(net, tmp_path / "run" / "model.ckpt")
    loaded = checkpoint.load(path)
    assert loaded.config == net.config
    assert loaded.seed == 7
    for name in PARAM_ORDER:
        assert loaded.params[name].dtype == np.float32
        np.testing.assert_array_equal(loaded.params[name], net.params[name])


def test_crelu_checkpoint_reproduces_logits(tmp_path, toy_dataset):
    net = build(small_model(activation=ActivationKind.CRELU), seed=2)
    before, _ = net.forward(toy_dataset.images)
    loaded = checkpoint.load(checkpoint.save(net, tmp_path / "crelu.ckpt"))
    after, _ = loaded.forward(toy_dataset.images)
    np.testing.assert_array_equal(before, after)


def test_layout_starts_with_magic_and_header(model_config):
    blob = checkpoint.encode(build(model_config, seed=0))
    assert blob.startswith(checkpoint.MAGIC)
    (length,) = struct.unpack_from("<Q", blob, len(checkpoint.MAGIC))
    header = json.loads(blob[16 : 16 + length])
    assert header["format_version"] == checkpoint.FORMAT_VERSION
    assert [t["name"] for t in header["tensors"]] == list(PARAM_ORDER)
    assert len(blob) == 16 + length + sum(t["nbytes"] for t in header["tensors"])


def test_float64_network_is_stored_as_float32(caplog):
    net = build(small_model(dtype="float64"), seed=0)
    loaded = checkpoint.decode(checkpoint.encode(net))
    assert "float32" in caplog.text
    assert loaded.params["conv1.weight"].dtype == np.float64
    np.testing.assert_allclose(
        loaded.params["conv1.weight"], net.params["conv1.weight"], rtol=1e-6
    )


@pytest.mark.parametrize("cut", [4, 20, -1])
def test_truncated_file(model_config, cut):
    blob = checkpoint.encode(build(model_config, seed=0))
    with pytest.raises(CheckpointCorruptError):
        checkpoint.decode(blob[:cut])


def test_trailing_bytes(model_config):
    blob = checkpoint.encode(build(model_config, seed=0))
    with pytest.raises(CheckpointCorruptError, match="trailing"):
        checkpoint.decode(blob + b"\0\0\0\0")


def test_bad_magic(model_config):
    blob = checkpoint.encode(build(model_config, seed=0))
    with pytest.raises(CheckpointCorruptError, match="magic"):
        checkpoint.decode(b"NOTACKPT" + blob[8:])


def rewrite_header(blob: bytes, edit) -> bytes:
    (length,) = struct.unpack_from("<Q", blob, 8)
    header = json.loads(blob[16 : 16 + length])
    edit(header)
    raw = json.dumps(header).encode()
    return blob[:8] + struct.pack("<Q", len(raw)) + raw + blob[16 + length :]


def test_unsupported_version(model_config):
    blob = checkpoint.encode(build(model_config, seed=0))
    with pytest.raises(CheckpointVersionError):
        checkpoint.decode(rewrite_header(blob, lambda h: h.update(format_version=99)))


def test_manifest_disagrees_with_model(model_config):
    blob = checkpoint.encode(build(model_config, seed=0))

    def swap_dims(header):
        header["tensors"][0]["dims"] = list(reversed(header["tensors"][0]["dims"]))

    with pytest.raises(CheckpointCorruptError, match="dims"):
        checkpoint.decode(rewrite_header(blob, swap_dims))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError, match="missing.ckpt"):
        checkpoint.load(tmp_path / "missing.ckpt")
