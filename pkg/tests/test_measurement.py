import hashlib
import math

import numpy as np
import pytest

from patmg.config import load_config
from patmg.core import Grid, SensorData
from patmg.measurement import (Disc, PhantomSpec, Vessel, add_awgn, layered_medium, make_phantom,
                               measured_snr_db, perturb_medium, resample_image,
                               vessel_phantom_spec)

from pathlib import Path

DESK = Path(__file__).resolve().parents[1] / "configs" / "2d-desk.ini"
# digest of the shipped vessel phantom on the 128x128 reconstruction grid
GOLDEN_PHANTOM = "5e30ec686b0b2332769b3cfca6f91e250669a37b87cc2cba8cb60ebce9aa3f17"


def grid(n=64, h=1e-4, pml=8):
    return Grid.from_cfl((n, n), h, 1500.0, 100, cfl=0.3, pml_thickness=pml)


def test_empty_spec_gives_zero_image():
    g = grid()
    assert not np.any(make_phantom(g, PhantomSpec()))


def test_disc_area_and_amplitude():
    g = grid(128, 5e-5)
    r = 1e-3
    image = make_phantom(g, {"discs": [{"center": [1e-4, -2e-4], "radius": r, "amplitude": 2.0}]})
    assert image.max() == 2.0
    area = np.count_nonzero(image)
    assert abs(area - math.pi * r * r / 5e-5 ** 2) <= 0.05 * math.pi * r * r / 5e-5 ** 2


def test_overlap_takes_maximum():
    g = grid()
    spec = PhantomSpec([Disc((0.0, 0.0), 5e-4, 1.0)], [Vessel((-1e-3, 0.0), (1e-3, 0.0), 2e-4, 3.0)])
    image = make_phantom(g, spec)
    assert set(np.unique(image)) == {0.0, 1.0, 3.0}


def test_primitive_outside_interior_rejected():
    with pytest.raises(ValueError):
        make_phantom(grid(), PhantomSpec([Disc((2.3e-3, 0.0), 5e-4)]))


def test_vessel_phantom_golden():
    cfg = load_config(DESK)
    image = cfg.phantom_on(cfg.recon_grid())
    assert hashlib.sha256(image.astype("<f8").tobytes()).hexdigest() == GOLDEN_PHANTOM
    assert image.max() == 2.0


def test_vessel_phantom_seeded():
    a = vessel_phantom_spec(5e-3, 1)
    assert a == vessel_phantom_spec(5e-3, 1)
    assert a != vessel_phantom_spec(5e-3, 2)
    assert all(math.hypot(*v.end) <= 0.9 * 5e-3 + 1e-15 for v in a.vessels)


def _signal(seed=0, shape=(200, 600)):
    rng = np.random.default_rng(seed)
    t = np.arange(shape[1])
    return np.sin(2 * np.pi * rng.uniform(0.01, 0.1, (shape[0], 1)) * t) * rng.uniform(0.5, 2, (shape[0], 1))


def test_awgn_infinite_snr_is_identity():
    data = SensorData(_signal(), 1e-8)
    out = add_awgn(data, math.inf, 0)
    assert np.array_equal(out.samples, data.samples) and out.dt == data.dt


def test_awgn_snr_statistics():
    clean = _signal()
    assert clean.size >= 1e5
    noisy = add_awgn(SensorData(clean, 1e-8), 30.0, 5).samples
    assert abs(measured_snr_db(clean, noisy) - 30.0) <= 0.5


def test_awgn_deterministic():
    clean = _signal()
    a = add_awgn(clean, 20.0, 3).samples
    assert np.array_equal(a, add_awgn(clean, 20.0, 3).samples)
    assert not np.array_equal(a, add_awgn(clean, 20.0, 4).samples)


def test_awgn_rejects_zero_signal():
    with pytest.raises(ValueError):
        add_awgn(np.zeros((3, 10)), 30.0, 0)


def _two_layer(g):
    return layered_medium(g, [{"radius": 5e-3, "c0": 1600.0, "rho0": 1100.0}],
                          {"c0": 1500.0, "rho0": 1000.0, "alpha0": 0.75})


def test_perturb_identity():
    g = grid()
    m = _two_layer(g)
    assert perturb_medium(m, g) is m


def _crossing(profile, coords, level):
    """Linearly interpolated position where a decreasing profile crosses level."""
    i = np.nonzero((profile[:-1] >= level) & (profile[1:] < level))[0][0]
    f = (profile[i] - level) / (profile[i] - profile[i + 1])
    return coords[i] + f * (coords[i + 1] - coords[i])


def test_perturb_shifts_interfaces():
    g = Grid.from_cfl((320, 320), 5e-5, 1500.0, 10, cfl=0.3, pml_thickness=8)
    m = _two_layer(g)
    shift = 0.02 * 11e-3
    shifted = perturb_medium(m, g, interface_shift=shift)
    x = g.axis_coordinates(0)
    j = g.dims[1] // 2
    half = x >= 0
    level = 1550.0
    before = _crossing(m.c0[half, j], x[half], level)
    after = _crossing(shifted.c0[half, j], x[half], level)
    assert after - before == pytest.approx(shift, abs=0.5 * 5e-5)
    assert np.allclose(shifted.alpha0, m.alpha0)


def test_perturb_noise_deterministic_and_scaled():
    g = grid()
    m = _two_layer(g)
    a = perturb_medium(m, g, awgn_db=35.0, seed=1)
    b = perturb_medium(m, g, awgn_db=35.0, seed=1)
    c = perturb_medium(m, g, awgn_db=35.0, seed=2)
    assert np.array_equal(a.c0, b.c0) and not np.array_equal(a.c0, c.c0)
    snr = 10 * np.log10(np.mean(m.c0 ** 2) / np.mean((a.c0 - m.c0) ** 2))
    assert abs(snr - 35.0) <= 0.5


def test_perturb_rejects_huge_shift():
    g = grid()
    with pytest.raises(ValueError):
        perturb_medium(_two_layer(g), g, interface_shift=1.0)


def test_resample_identity_and_constant():
    g = grid()
    image = np.random.default_rng(0).random(g.interior_shape)
    assert np.array_equal(resample_image(image, g, g), image)
    other = Grid.from_cfl((84, 84), 0.8e-4, 1500.0, 100, cfl=0.3, pml_thickness=12)
    assert np.allclose(resample_image(np.full(g.interior_shape, 3.0), g, other), 3.0)


def test_resample_down_up_bandlimited():
    fine = Grid.from_cfl((144, 144), 5e-5, 1500.0, 100, cfl=0.3, pml_thickness=8)
    coarse = fine.coarsen()
    x = fine.interior_coordinates(0)
    k = 2 * np.pi / (0.5 * fine.extent[0])
    image = 1 + np.add.outer(np.sin(k * x), np.cos(0.5 * k * x))
    back = resample_image(resample_image(image, fine, coarse), coarse, fine)
    assert np.linalg.norm(back - image) / np.linalg.norm(image) <= 0.05


def test_resample_rejects_extent_mismatch():
    with pytest.raises(ValueError):
        resample_image(np.zeros((48, 48)), grid(), grid(64, 2e-4))
