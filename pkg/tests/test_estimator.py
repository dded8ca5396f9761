import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from evfusion.estimator import LateFusionDetector, check_frames
from evfusion.fusion_net import dump_checkpoint, init_params
from evfusion.pipeline import PipelineConfig
from evfusion.synthetic import make_dataset


def test_params_round_trip():
    est = LateFusionDetector(conf_threshold=0.5, epochs=3)
    params = est.get_params()
    assert params["conf_threshold"] == 0.5 and params["nms_iou"] == 0.4
    assert set(params) == {f for f in PipelineConfig.__dataclass_fields__}
    c = clone(est)
    assert c.get_params() == params
    est.set_params(u_max=0.2)
    assert est.config().u_max == 0.2
    assert LateFusionDetector.from_config(est.config()).get_params() == est.get_params()


def test_predict_requires_fit():
    with pytest.raises(NotFittedError):
        LateFusionDetector().predict(make_dataset(1))


def test_fit_predict_score():
    frames = make_dataset(12, seed=4)
    est = LateFusionDetector(epochs=2, conf_threshold=0.0, u_max=1.0, seed=3).fit(frames[:8])
    assert len(est.loss_curve_) == 2 and est.n_skipped_frames_ == 0
    preds = est.predict(frames[8:])
    assert len(preds) == 4 and all(isinstance(p, list) for p in preds)
    assert sum(map(len, preds)) > 0
    s = est.score(frames[8:])
    assert 0.0 <= s <= 100.0
    again = LateFusionDetector(epochs=2, conf_threshold=0.0, u_max=1.0, seed=3).fit(frames[:8])
    assert again.to_checkpoint() == est.to_checkpoint()


def test_fit_with_explicit_labels():
    frames = make_dataset(3, seed=4)
    labels = [f.labels for f in frames]
    for f in frames:
        f.labels = None
    est = LateFusionDetector(epochs=1).fit(frames, labels)
    assert est.n_skipped_frames_ == 0
    with pytest.raises(ValueError):
        LateFusionDetector(epochs=1).fit(frames, labels[:1])


def test_init_and_checkpoint_models():
    est = LateFusionDetector(seed=5).init_model()
    assert est.to_checkpoint() == dump_checkpoint(init_params(5))
    other = LateFusionDetector().load_checkpoint(est.to_checkpoint())
    assert other.to_checkpoint() == est.to_checkpoint()
    with pytest.raises(ValueError):
        LateFusionDetector(classes=("Car", "Pedestrian")).set_model(init_params(0, 3))


def test_check_frames():
    frames = make_dataset(2)
    assert check_frames(frames[0], 3) == [frames[0]]
    with pytest.raises(TypeError):
        check_frames([object()], 3)
    with pytest.raises(ValueError):
        check_frames(frames, 2)
    frames[0].labels = None
    with pytest.raises(ValueError):
        check_frames(frames, 3, require_labels=True)


def test_predict_frame_matches_predict():
    frames = make_dataset(2, seed=9)
    est = LateFusionDetector(conf_threshold=0.0, u_max=1.0).init_model()
    a = est.predict(frames)[1]
    b = est.predict_frame(frames[1].dets3d, frames[1].dets2d, frames[1].calib)
    assert [d.score for d in a] == [d.score for d in b]
    assert all(np.array_equal(x.beliefs, y.beliefs) for x, y in zip(a, b))
