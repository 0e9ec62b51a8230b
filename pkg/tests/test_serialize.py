import numpy as np
import pytest

from pearl.data import DataFormatError
from pearl.model import PearlConfig, init_params, transform
from pearl.preprocessing import (
    LdaProjector,
    lda_fit,
    pca_whiten_fit,
    standardizer_fit,
)
from pearl.serialize import (
    ModelCheckpoint,
    dump_checkpoint,
    dump_lda,
    dump_standardizer,
    dump_whitener,
    load_checkpoint,
    load_checkpoint_blob,
    load_lda_blob,
    load_standardizer_blob,
    load_whitener_blob,
    save_checkpoint,
)


def test_standardizer_round_trip():
    rng = np.random.default_rng(0)
    s = standardizer_fit(rng.normal(size=(20, 5)) * 3 + 1)
    back = load_standardizer_blob(dump_standardizer(s))
    assert np.array_equal(back.mean, s.mean)
    assert np.array_equal(back.std, s.std)
    assert back.epsilon == s.epsilon


def test_whitener_round_trip():
    rng = np.random.default_rng(1)
    w = pca_whiten_fit(rng.normal(size=(50, 6)))
    back = load_whitener_blob(dump_whitener(w))
    assert np.array_equal(back.mean, w.mean)
    assert np.array_equal(back.components, w.components)
    assert np.array_equal(back.eigenvalues, w.eigenvalues)
    assert back.eigen_floor == w.eigen_floor


def test_lda_round_trip():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 4))
    y = np.repeat([0, 1, 2], 10)
    p = lda_fit(x, y)
    back = load_lda_blob(dump_lda(p))
    assert isinstance(back, LdaProjector)
    assert np.array_equal(back.projection, p.projection)
    assert back.shrinkage_lambda == p.shrinkage_lambda


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    cfg = PearlConfig(seed=5, tau=0.2, w_ortho=0.25, batch_size=16).resolved(7)
    params = init_params(cfg, 7, 3)
    scaler = standardizer_fit(rng.normal(size=(40, 7)))
    path = tmp_path / "model.pear"
    save_checkpoint(ModelCheckpoint(cfg=cfg, params=params, scaler=scaler), path)
    ck = load_checkpoint(path)
    assert ck.cfg == cfg
    assert ck.params.layers.keys() == params.layers.keys()
    for k in params.layers:
        assert np.array_equal(ck.params.layers[k], params.layers[k])
    x = rng.normal(size=(9, 7))
    assert np.array_equal(transform(ck.params, ck.cfg, x), transform(params, cfg, x))


def test_kind_mismatch_rejected():
    rng = np.random.default_rng(4)
    s = standardizer_fit(rng.normal(size=(10, 3)))
    with pytest.raises(DataFormatError, match="byte offset 5"):
        load_whitener_blob(dump_standardizer(s))


def test_checkpoint_bad_magic():
    with pytest.raises(DataFormatError, match="byte offset 0"):
        load_checkpoint_blob(b"NOPE" + bytes(64))
