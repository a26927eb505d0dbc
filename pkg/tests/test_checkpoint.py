import numpy as np
import pytest

from picr import checkpoint as ck
from picr.config import toy
from picr.errors import CheckpointError
from picr.model import PICRNet
from picr.optim import Adam


@pytest.fixture(scope="module")
def model():
    return PICRNet(toy())


class TestRoundTrip:
    def test_save_load_save_byte_identical(self, model, tmp_path):
        opt = Adam(model.trainable_parameters())
        opt.t = 7
        for arr in opt.state().values():
            arr += 0.25
        ck.save(tmp_path / "a.ckpt", ck.from_model(model, opt))
        ck.save(tmp_path / "b.ckpt", ck.load(tmp_path / "a.ckpt"))
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_through_a_fresh_model(self, model, tmp_path):
        ck.save(tmp_path / "a.ckpt", ck.from_model(model))
        cfg = toy()
        cfg.seed = 99
        other = PICRNet(cfg)
        ck.apply_to_model(ck.load(tmp_path / "a.ckpt"), other)
        for (n, a), (_, b) in zip(model.named_parameters(), other.named_parameters()):
            assert a.data.tobytes() == b.data.tobytes(), n

    def test_header_layout(self, model):
        raw = ck.dumps(ck.from_model(model))
        assert raw[:4] == b"PICR"
        assert int.from_bytes(raw[4:8], "little") == ck.VERSION

    def test_optimizer_state_restored(self, model, tmp_path):
        opt = Adam(model.trainable_parameters())
        opt.t = 3
        first = next(iter(opt.m))
        opt.m[first] += 1.5
        ckpt = ck.loads(ck.dumps(ck.from_model(model, opt)))
        fresh = Adam(model.trainable_parameters())
        ck.apply_to_model(ckpt, model, fresh)
        assert fresh.t == 3
        np.testing.assert_array_equal(fresh.m[first], opt.m[first])


class TestRefusal:
    def test_config_mismatch_changes_nothing(self, model):
        raw = ck.dumps(ck.from_model(model))
        cfg = toy()
        cfg.model.cmpi_window = 3
        target = PICRNet(cfg)
        before = {n: p.data.copy() for n, p in target.named_parameters()}
        with pytest.raises(CheckpointError, match="cmpi_window"):
            ck.apply_to_model(ck.loads(raw), target)
        for n, p in target.named_parameters():
            np.testing.assert_array_equal(p.data, before[n])

    def test_shape_mismatch_is_total(self, model):
        ckpt = ck.loads(ck.dumps(ck.from_model(model)))
        last = list(ckpt.params)[-1]
        ckpt.params[last] = np.zeros(ckpt.params[last].shape + (2,), np.float32)
        target = PICRNet(toy())
        first_name, first = next(iter(target.named_parameters()))
        before = first.data.copy()
        ckpt.params[first_name] = before + 1
        with pytest.raises(CheckpointError):
            ck.apply_to_model(ckpt, target)
        np.testing.assert_array_equal(first.data, before)

    def test_optimizer_settings_do_not_block_loading(self, model):
        ckpt = ck.loads(ck.dumps(ck.from_model(model)))
        ckpt.config.optim.lr = 0.5
        ck.apply_to_model(ckpt, PICRNet(toy()))

    @pytest.mark.parametrize("mutate", [
        lambda b: b"NOPE" + b[4:],
        lambda b: b[:4] + (99).to_bytes(4, "little") + b[8:],
        lambda b: b[:-3],
        lambda b: b + b"\0",
    ])
    def test_corrupt_files(self, model, mutate):
        raw = ck.dumps(ck.from_model(model))
        with pytest.raises(CheckpointError):
            ck.loads(mutate(raw))
