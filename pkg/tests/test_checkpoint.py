import numpy as np
import pytest

from hsstlab.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from hsstlab.errors import FormatError
from hsstlab.model import Arch, init_pair, init_params

SMALL = Arch(input_size=16, channels=(3, 4), embedding_dim=8)


def test_round_trip_pair(tmp_path):
    pair = init_pair(4, SMALL, ema_weight=0.99)
    path = save_checkpoint(tmp_path / "c.hsst", Checkpoint(pair.probe, pair.gallery, ema_weight=0.99,
                                                           meta={"steps": 3}))
    raw = path.read_bytes()
    assert raw[:8] == b"HSSTCKPT"
    back = load_checkpoint(path)
    assert back.probe.equal(pair.probe) and back.gallery.equal(pair.gallery)
    assert back.pair().ema_weight == 0.99 and back.meta == {"steps": 3}
    assert back.inference_params is back.probe


def test_round_trip_plain_with_classifier(tmp_path):
    w = np.random.default_rng(0).normal(size=(5, 8)).astype(np.float32)
    ck = Checkpoint(init_params(1, SMALL), classifier=w, kind="plain")
    back = load_checkpoint(save_checkpoint(tmp_path / "p.hsst", ck))
    np.testing.assert_array_equal(back.classifier, w)
    assert back.gallery is None and back.kind == "plain"
    with pytest.raises(FormatError):
        back.pair()


def test_corruption_detected(tmp_path):
    path = save_checkpoint(tmp_path / "c.hsst", Checkpoint(init_params(0, SMALL)))
    raw = path.read_bytes()
    for bad in (b"XXXXXXXX" + raw[8:], raw[:-8], raw + b"\0\0\0\0", raw[:10]):
        path.write_bytes(bad)
        with pytest.raises(FormatError):
            load_checkpoint(path)
