import numpy as np
import pytest

from shaperecon.camera import Intrinsics
from shaperecon.dataset import (
    ParamVector,
    build_dataset,
    default_ranges,
    denormalize_params,
    normalize_params,
    sample_parameters,
)
from shaperecon.geometry import PhantomConfig, make_phantom
from shaperecon.regressor import (
    RegressorHyper,
    build_regressor,
    grad_reconstruction,
    grad_reconstruction_fd,
    load_regressor,
    loss_parameter,
    loss_reconstruction,
    loss_total,
    predict_params,
    save_regressor,
    train_regressor,
)
from shaperecon.render import PerturbConfig

MODEL = make_phantom(PhantomConfig())
RANGES = default_ranges()


def random_param(rng):
    return ParamVector.from_array(rng.uniform(RANGES.low(), RANGES.high()))


def test_alignment_loss_zero_for_identical_params():
    p = random_param(np.random.default_rng(0))
    assert loss_reconstruction(p, p, MODEL) == 0.0


def test_alignment_loss_of_axis_camera_shift_is_exact():
    # camera on the z axis looking at the origin: its view axes are the
    # world axes, so retreating 3 mm shifts every vertex by exactly 3 mm
    true = ParamVector((0.0, 0.0, 100.0), (0.0, 0.0), 1.0)
    pred = ParamVector((0.0, 0.0, 103.0), (0.0, 0.0), 1.0)
    assert loss_reconstruction(pred, true, MODEL) == 3.0


def test_alignment_loss_of_view_axis_shift_general_pose():
    from shaperecon.camera import view_axes

    true = ParamVector((22.0, -14.0, 180.0), (6.0, -3.0), 1.1)
    _, _, z = view_axes(true.camera())
    shifted = ParamVector(tuple(np.array(true.cam_pos) + 3.0 * z), true.focus, 1.1)
    assert abs(loss_reconstruction(shifted, true, MODEL) - 3.0) < 1e-9


def test_alignment_loss_is_symmetric():
    rng = np.random.default_rng(1)
    for _ in range(10):
        a, b = random_param(rng), random_param(rng)
        assert loss_reconstruction(a, b, MODEL) == loss_reconstruction(b, a, MODEL)


def test_alignment_loss_matches_independent_recomputation():
    # separate code path: explicit look-at basis and per-vertex arithmetic
    rng = np.random.default_rng(2)
    for _ in range(10):
        a, b = random_param(rng), random_param(rng)

        def cam_space(p):
            verts = MODEL.base.vertices + MODEL.mean_disp \
                + p.collapse_weight * MODEL.disp_field
            eye = np.array(p.cam_pos)
            d = eye - np.array([p.focus[0], p.focus[1], 0.0])
            z = d / np.sqrt((d * d).sum())
            up = np.array([0.0, 1.0, 0.0])
            xr = np.cross(up, z)
            x = xr / np.sqrt((xr * xr).sum())
            y = np.cross(z, x)
            rel = verts - eye
            return np.stack([rel @ x, rel @ y, rel @ z], axis=1)

        want = float(np.mean(np.sqrt(((cam_space(b) - cam_space(a)) ** 2).sum(axis=1))))
        assert abs(loss_reconstruction(b, a, MODEL) - want) < 1e-9


def test_parameter_loss_cases():
    p = random_param(np.random.default_rng(3))
    assert loss_parameter(p, p, RANGES) == 0.0
    # unit offset in exactly one normalized dimension
    n = normalize_params(p, RANGES)
    n2 = n.copy()
    n2[2] += 1.0
    q = denormalize_params(n2, RANGES)
    assert abs(loss_parameter(q, p, RANGES) - 1.0 / 6.0) < 1e-12
    assert loss_parameter(q, p, RANGES) == loss_parameter(p, q, RANGES)


def test_total_loss_composition():
    rng = np.random.default_rng(4)
    a, b = random_param(rng), random_param(rng)
    lr_ = loss_reconstruction(b, a, MODEL)
    assert loss_total(b, a, MODEL, RANGES, param_loss_weight=0.0) == lr_
    assert loss_total(a, a, MODEL, RANGES) == 0.0
    l1 = loss_total(b, a, MODEL, RANGES, param_loss_weight=0.2)
    l2 = loss_total(b, a, MODEL, RANGES, param_loss_weight=0.8)
    mid = loss_total(b, a, MODEL, RANGES, param_loss_weight=0.5)
    assert abs(l1 + l2 - 2.0 * mid) < 1e-12


def test_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b = random_param(rng), random_param(rng)
        got = grad_reconstruction(b, a, MODEL)
        want = grad_reconstruction_fd(b, a, MODEL)
        denom = np.maximum(1e-8, np.abs(got) + np.abs(want))
        assert (np.abs(got - want) / denom).max() < 1e-6


def test_weight_gradient_matches_finite_differences_tightly():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a, b = random_param(rng), random_param(rng)
        got = grad_reconstruction(b, a, MODEL)[5]
        h = 1e-6
        up = ParamVector(b.cam_pos, b.focus, b.collapse_weight + h)
        dn = ParamVector(b.cam_pos, b.focus, b.collapse_weight - h)
        want = (loss_reconstruction(up, a, MODEL)
                - loss_reconstruction(dn, a, MODEL)) / (2 * h)
        assert abs(got - want) / max(1e-8, abs(got) + abs(want)) < 1e-6


def test_zeroed_head_predicts_range_centers():
    reg = build_regressor(width=24, height=16, dropout=0.0, chans=(2, 4, 4, 8), head=16)
    last = reg.net.layers[-1]
    for _, p in last.params():
        p.value[...] = 0.0
    img = np.random.default_rng(7).uniform(size=(16, 24))
    got = predict_params(reg, img, RANGES)
    assert np.array_equal(got.as_array(), RANGES.center.as_array())


def test_prediction_is_deterministic():
    reg = build_regressor(width=24, height=16, dropout=0.5, chans=(2, 4, 4, 8), head=16,
                          seed=1)
    img = np.random.default_rng(8).uniform(size=(16, 24))
    a = predict_params(reg, img, RANGES)
    b = predict_params(reg, img, RANGES)
    assert np.array_equal(a.as_array(), b.as_array())


def small_data(seed=0):
    k = Intrinsics(width=24, height=16)
    return build_dataset(MODEL, RANGES, 30, 10, PerturbConfig(), k, seed=seed)


def test_train_regressor_reduces_loss_and_is_deterministic(tmp_path):
    data = small_data()
    hyper = RegressorHyper(batch_size=10, epochs=12, dropout=0.2, seed=0)
    reg1, hist1 = train_regressor(data, MODEL, RANGES, "virtual", hyper=hyper)
    assert len(hist1) == 12
    assert hist1[-1][3] < hist1[0][3]
    reg2, hist2 = train_regressor(data, MODEL, RANGES, "virtual", hyper=hyper)
    assert hist1 == hist2
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_regressor(reg1, p1)
    save_regressor(reg2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_train_regressor_fd_mode_agrees_with_analytic():
    data = small_data()
    hyper_a = RegressorHyper(batch_size=10, epochs=2, dropout=0.0, seed=3)
    hyper_f = RegressorHyper(batch_size=10, epochs=2, dropout=0.0, seed=3,
                             analytic_gradients=False)
    _, hist_a = train_regressor(data, MODEL, RANGES, "virtual", hyper=hyper_a)
    _, hist_f = train_regressor(data, MODEL, RANGES, "virtual", hyper=hyper_f)
    assert np.allclose(np.array(hist_a), np.array(hist_f), rtol=1e-5)


def test_train_mode_validation():
    data = small_data()
    with pytest.raises(ValueError):
        train_regressor(data, MODEL, RANGES, "proposed", translator=None,
                        hyper=RegressorHyper(epochs=1))
    with pytest.raises(ValueError):
        train_regressor(data, MODEL, RANGES, "bogus", hyper=RegressorHyper(epochs=1))
    no_real = build_dataset(MODEL, RANGES, 5, 0, PerturbConfig(),
                            Intrinsics(width=24, height=16), seed=1)
    with pytest.raises(ValueError):
        train_regressor(no_real, MODEL, RANGES, "real_only",
                        hyper=RegressorHyper(epochs=1))


def test_regressor_checkpoint_round_trip(tmp_path):
    reg = build_regressor(width=24, height=16, chans=(2, 4, 4, 8), head=16, seed=5)
    path = tmp_path / "reg.ckpt"
    save_regressor(reg, path, {"mode": "virtual"})
    back = load_regressor(path)
    img = np.random.default_rng(11).uniform(size=(16, 24))
    assert np.array_equal(predict_params(back, img, RANGES).as_array(),
                          predict_params(reg, img, RANGES).as_array())
