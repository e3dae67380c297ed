import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from robodiff.dataset import build_record, export_dataset, make_scene
from robodiff.estimator import ShapeRetentionDiffusion

TINY = dict(steps=5, batch=2, T=8, n_blocks=1, width=8, cond_dim=8, kernel_size=3, expansion=2)


@pytest.fixture(scope="module")
def rec():
    return build_record(make_scene(6, 32, 20, "line", seed=0, pixels_per_metre=1.0))


def test_params_round_trip():
    est = ShapeRetentionDiffusion(variant="pose", lr=1e-3, random_state=4)
    params = est.get_params()
    assert params["variant"] == "pose" and params["lr"] == 1e-3 and params["random_state"] == 4
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(width=16)
    assert est.width == 16


def test_fit_predict_score(rec):
    est = ShapeRetentionDiffusion(**TINY).fit(rec)
    assert est.loss_curve_.shape == (5,)
    frames = est.predict(rec, n_frames=2)
    assert frames.shape == (2, 3, 20, 32)
    assert np.all(np.abs(frames) <= 1)
    assert est.predict(rec, n_frames=0).shape == (0, 3, 20, 32)
    assert 0.0 <= est.score(rec, n_frames=2) <= 1.0


def test_fit_is_seeded(rec):
    a = ShapeRetentionDiffusion(**TINY, random_state=1).fit(rec)
    b = ShapeRetentionDiffusion(**TINY, random_state=1).fit(rec)
    assert np.array_equal(a.loss_curve_, b.loss_curve_)
    assert np.array_equal(a.predict(rec, 1), b.predict(rec, 1))


def test_fit_from_directory(rec, tmp_path):
    export_dataset(rec, tmp_path)
    est = ShapeRetentionDiffusion(**TINY, variant="none").fit(str(tmp_path))
    assert est.network_.cfg.variant == "none"


def test_errors(rec):
    est = ShapeRetentionDiffusion(**TINY)
    with pytest.raises(NotFittedError):
        est.predict(rec)
    with pytest.raises(TypeError):
        est.fit(np.zeros((3, 3)))
    est.fit(rec)
    other = build_record(make_scene(6, 40, 20, "line", seed=0, pixels_per_metre=1.0))
    with pytest.raises(ValueError):
        est.predict(other, 1)
