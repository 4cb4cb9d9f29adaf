import numpy as np
import pytest
from hypothesis import given, strategies as st

from patmg.core import Grid, Medium, SensorArray
from patmg.evaluation import (max_intensity_projection, objective, relative_error, residual_norm,
                              threshold_image, time_reversal, visualize)
from patmg.fieldio import read_field
from patmg.measurement import Disc, PhantomSpec, make_phantom
from patmg.optim import LeastSquaresTV, ObjectiveConfig, ista
from patmg.wave import ForwardOperator


def test_relative_error_examples():
    truth = np.random.default_rng(0).random((8, 8)) + 0.1
    assert relative_error(truth, truth) == 0.0
    assert relative_error(np.zeros_like(truth), truth) == pytest.approx(100.0)
    assert relative_error(2 * truth, truth) == pytest.approx(100.0)
    with pytest.raises(ValueError):
        relative_error(truth, np.zeros_like(truth))


def test_relative_error_interpolates_between_grids():
    fine = Grid.from_cfl((48, 48), 1e-4, 1500.0, 10, cfl=0.3, pml_thickness=8)
    coarse = fine.coarsen()
    assert relative_error(np.ones(coarse.interior_shape), np.ones(fine.interior_shape),
                          coarse, fine) == pytest.approx(0.0, abs=1e-12)


def test_residual_norm_examples(lossy_op):
    rng = np.random.default_rng(1)
    x = rng.random(lossy_op.image_shape)
    data = lossy_op.apply(x)
    assert residual_norm(lossy_op, x, data) == 0.0
    p = rng.standard_normal(lossy_op.data_shape)
    assert residual_norm(lossy_op, np.zeros(lossy_op.image_shape), p) == pytest.approx(np.linalg.norm(p))
    x2 = rng.random(lossy_op.image_shape)
    assert residual_norm(lossy_op, x + x2, p) <= (residual_norm(lossy_op, x, p)
                                                  + np.linalg.norm(lossy_op.apply(x2)) + 1e-12)


def test_objective_examples(lossy_op):
    zero_img = np.zeros(lossy_op.image_shape)
    zero_data = np.zeros(lossy_op.data_shape)
    assert objective(lossy_op, zero_img, zero_data, 0.1) == 0.0
    rng = np.random.default_rng(2)
    x = rng.random(lossy_op.image_shape)
    p = rng.standard_normal(lossy_op.data_shape)
    assert objective(lossy_op, x, p, 0.0) == pytest.approx(0.5 * residual_norm(lossy_op, x, p) ** 2)
    assert objective(lossy_op, -x, p, 0.1) == np.inf


@given(st.integers(0, 2 ** 31))
def test_objective_convex_along_segments(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((12, 16))

    class Op:
        def apply(self, x):
            return A @ x.ravel()

    p = rng.standard_normal(12)
    a, b = rng.random((2, 4, 4))
    mid = objective(Op(), (a + b) / 2, p, 0.3)
    assert mid <= 0.5 * (objective(Op(), a, p, 0.3) + objective(Op(), b, p, 0.3)) + 1e-8


def test_objective_matches_solver_log(lossy_op):
    rng = np.random.default_rng(3)
    p = lossy_op.apply(rng.random(lossy_op.image_shape))
    prob = LeastSquaresTV(lossy_op, p, 1e-3, 5.0)
    log = {}
    ista(prob, ObjectiveConfig(lam=1e-3, max_iters=3, eps_d=-np.inf),
         callbacks=[lambda rec, x: log.setdefault(rec.k, (rec.F, x.copy()))])
    for F, x in log.values():
        assert objective(lossy_op, x, p, 1e-3) == pytest.approx(F, rel=1e-10)


def test_time_reversal_zero_data(lossy_op):
    assert not np.any(time_reversal(lossy_op, np.zeros(lossy_op.data_shape)))


def test_time_reversal_full_circle():
    g = Grid.from_cfl((64, 64), 1e-4, 1500.0, 160, cfl=0.3, pml_thickness=10)
    count = 128
    sensors = SensorArray.arc(0.45 * min(g.extent), count, 0.0, 2 * np.pi * (1 - 1 / count))
    op = ForwardOperator(g, Medium.homogeneous(g), sensors)
    truth = make_phantom(g, PhantomSpec([Disc((3e-4, -2e-4), 1.2e-3, 1.0)]))
    assert relative_error(time_reversal(op, op.apply(truth)), truth) < 30.0


def test_time_reversal_rejects_bad_shape(lossy_op):
    with pytest.raises(ValueError):
        time_reversal(lossy_op, np.zeros((3, 3)))


def test_threshold_examples():
    x = np.array([[5.0, 0.2], [0.1, -1.0]])
    out = threshold_image(x)
    assert out.max() == 2.0
    # rescaled entries 0.08, 0.04 and -0.4 all fall below 0.1
    assert out[0, 1] == 0.0 and out[1, 0] == 0.0 and out[1, 1] == 0.0
    assert threshold_image(np.array([1.0, 0.05]))[1] == 0.1
    with pytest.raises(ValueError):
        threshold_image(np.zeros(3))


def test_mip_single_voxel():
    v = np.zeros((5, 6, 7))
    v[1, 2, 3] = 4.0
    for ax in range(3):
        assert max_intensity_projection(v, ax).max() == 4.0


def test_visualize_writes_outputs(tmp_path):
    x = np.zeros((16, 16))
    x[4:8, 4:8] = 5.0
    shown = visualize(x, tmp_path / "img")
    assert shown.max() == 2.0
    assert (tmp_path / "img.png").stat().st_size > 0
    back, meta = read_field(tmp_path / "img.field")
    assert np.array_equal(back, shown) and meta["threshold"] == 0.1


def test_visualize_volume(tmp_path):
    v = np.zeros((6, 6, 6))
    v[2, 3, 4] = 1.0
    visualize(v, tmp_path / "vol")
    assert (tmp_path / "vol.png").exists()
