import json
import math
import subprocess
import sys

import numpy as np
import pytest

from patmg.cli import main, run_reconstruction, build_operator, simulate_experiment
from patmg.config import ConfigError, default_config_text, load_config, parse_config
from patmg.fieldio import read_field
from patmg.optim import read_records_csv

TINY = """
[experiment]
name = "tiny"
seed = 5

[grid]
dims = [48, 48]
spacing = 1e-4
pml_thickness = 8

[simulation]
dims = [32, 32]
spacing = 1.6e-4
pml_thickness = 6

[time]
nt = 120
cfl = 0.3

[medium]
background = {"c0": 1500.0, "rho0": 1000.0, "alpha0": 0.75}
layers = [{"radius": 1.0e-3, "c0": 1540.0}]

[perturbation]
awgn_db = 35
shift_fraction = 0.02

[phantom]
kind = "shapes"
discs = [{"center": [2e-4, -1e-4], "radius": 5e-4, "amplitude": 2.0}]

[sensors]
radius = 1.3e-3
count = 32
start_deg = 0
stop_deg = 348.75

[noise]
snr_db = 30

[optimizer]
lam = 1e-3
max_iters = 6
power_iters = 10
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY)
    return path


def test_parse_tiny(tiny):
    cfg = load_config(tiny)
    assert cfg.recon_grid().interior_shape == (32, 32)
    assert cfg.sim_grid().dt == cfg.recon_grid().dt
    assert cfg.multigrid.kappa == 0.25 and math.isinf(parse_config(TINY.replace("snr_db = 30", "")).noise.snr_db)
    assert cfg.objective_config("ista").step_scale == 2.0
    assert cfg.objective_config("fista").step_scale == 1.0


def test_shipped_configs_parse():
    from pathlib import Path
    for path in (Path(__file__).resolve().parents[1] / "configs").glob("*.ini"):
        cfg = load_config(path)
        assert cfg.sim_grid().dims != cfg.recon_grid().dims


def test_every_problem_is_reported():
    bad = TINY.replace("dims = [48, 48]", "dims = [47, 48]").replace("nt = 120", "nt = 121")
    bad = bad.replace("radius = 1.3e-3", "radius = 9e-3")
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    text = " ".join(err.value.problems)
    assert "even" in text and "nt" in text and "sensors" in text and len(err.value.problems) >= 3


def test_identical_grids_rejected():
    bad = TINY.replace("dims = [32, 32]\nspacing = 1.6e-4\npml_thickness = 6",
                       "dims = [48, 48]\nspacing = 1e-4\npml_thickness = 8")
    with pytest.raises(ConfigError, match="differ"):
        parse_config(bad)


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError) as err:
        parse_config(TINY + "\n[bogus]\nx = 1\n")
    assert any("bogus" in p for p in err.value.problems)
    with pytest.raises(ConfigError):
        parse_config(TINY.replace("count = 32", "count = 32\ncolour = 3"))


def test_missing_required_section():
    with pytest.raises(ConfigError, match="sensors"):
        parse_config(TINY.split("[sensors]")[0])


def test_default_text_lists_every_section():
    text = default_config_text()
    for name in ("grid", "simulation", "time", "multigrid", "optimizer"):
        assert f"[{name}]" in text


def test_simulate_is_deterministic(tiny, tmp_path):
    assert main(["simulate", "--config", str(tiny), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(tiny), "--out", str(tmp_path / "b")]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes(), f.name
    assert main(["simulate", "--config", str(tiny), "--out", str(tmp_path / "c"), "--seed", "9"]) == 0
    assert (tmp_path / "c" / "data.field").read_bytes() != (tmp_path / "a" / "data.field").read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["noisy"]


def test_simulate_without_noise_writes_clean_only(tiny, tmp_path):
    tiny.write_text(TINY.replace("[noise]\nsnr_db = 30\n", ""))
    assert main(["simulate", "--config", str(tiny), "--out", str(tmp_path / "a")]) == 0
    assert not (tmp_path / "a" / "data_clean.field").exists()
    assert not json.loads((tmp_path / "a" / "manifest.json").read_text())["noisy"]


def test_simulation_uses_perturbed_medium(tiny):
    bundle = simulate_experiment(load_config(tiny))
    true, pert = bundle.media["true"], bundle.media["perturbed"]
    assert not np.array_equal(true.c0, pert.c0)
    assert bundle.data.shape == (32, 120)


@pytest.fixture
def bundle_dir(tiny, tmp_path):
    out = tmp_path / "bundle"
    assert main(["simulate", "--config", str(tiny), "--out", str(out)]) == 0
    return out


@pytest.mark.parametrize("algo", ["tr", "ista", "fista", "mg-ista", "mg-fista"])
def test_reconstruct_outputs(tiny, bundle_dir, tmp_path, algo):
    out = tmp_path / algo
    assert main(["reconstruct", "--config", str(tiny), "--data", str(bundle_dir), "--out", str(out),
                 "--algo", algo, "--max-iters", "4"]) == 0
    image, _ = read_field(out / "image.field")
    assert image.shape == (32, 32) and np.all(np.isfinite(image))
    records = read_records_csv(out / "records.csv")
    assert 1 <= len(records) <= 4
    assert all(not math.isnan(r.RE) for r in records)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["algo"] == algo and (out / "config.ini").read_text() == TINY
    assert (out / "image_display.png").exists()


def test_power_cache_hit_recorded(tiny, bundle_dir, tmp_path):
    args = ["reconstruct", "--config", str(tiny), "--data", str(bundle_dir), "--algo", "ista",
            "--max-iters", "1"]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    first = json.loads((tmp_path / "r1" / "manifest.json").read_text())["lipschitz"]["fine"]
    second = json.loads((tmp_path / "r2" / "manifest.json").read_text())["lipschitz"]["fine"]
    assert not first["cache_hit"] and second["cache_hit"] and first["value"] == second["value"]


def test_oversized_kappa_logs_only_direct(tiny, bundle_dir, tmp_path):
    tiny.write_text(TINY + "\n[multigrid]\nkappa = 10.0\n")
    out = tmp_path / "mg"
    assert main(["reconstruct", "--config", str(tiny), "--data", str(bundle_dir), "--out", str(out),
                 "--algo", "mg-fista", "--max-iters", "4"]) == 0
    assert {r.kind for r in read_records_csv(out / "records.csv")} == {"direct"}


def test_geometry_mismatch_exit_code(tiny, bundle_dir, tmp_path, capsys):
    other = tmp_path / "other.ini"
    other.write_text(TINY.replace("count = 32", "count = 30"))
    code = main(["reconstruct", "--config", str(other), "--data", str(bundle_dir),
                 "--out", str(tmp_path / "x")])
    assert code == 2
    assert "data shape" in capsys.readouterr().err


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\ndims = [47, 48]\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "simulation" in capsys.readouterr().err


def test_divergence_exit_code(tiny, bundle_dir, tmp_path, monkeypatch):
    import patmg.cli as cli
    from patmg.core import DivergenceError

    def boom(*a, **k):
        raise DivergenceError("forced")
    monkeypatch.setattr(cli, "run_reconstruction", boom)
    assert main(["reconstruct", "--config", str(tiny), "--data", str(bundle_dir),
                 "--out", str(tmp_path / "d")]) == 3


def test_compare(tiny, bundle_dir, tmp_path):
    runs = []
    for algo in ("ista", "fista"):
        out = tmp_path / algo
        main(["reconstruct", "--config", str(tiny), "--data", str(bundle_dir), "--out", str(out),
              "--algo", algo, "--max-iters", "3"])
        runs.append(str(out))
    assert main(["compare", runs[0], runs[0], "--out", str(tmp_path / "self")]) == 0
    summary = json.loads((tmp_path / "self" / "summary.json").read_text())
    assert summary["runs"][0]["final_F"] == summary["runs"][1]["final_F"]
    assert main(["compare", *runs, "--out", str(tmp_path / "cmp")]) == 0
    assert (tmp_path / "cmp" / "F.png").exists() and (tmp_path / "cmp" / "compare.csv").exists()


def test_compare_rejects_different_data(tiny, bundle_dir, tmp_path):
    other = tmp_path / "bundle2"
    main(["simulate", "--config", str(tiny), "--out", str(other), "--seed", "11"])
    for b, name in ((bundle_dir, "a"), (other, "b")):
        main(["reconstruct", "--config", str(tiny), "--data", str(b), "--out", str(tmp_path / name),
              "--algo", "tr"])
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "c")]) == 2


def test_compare_skips_missing_re(tiny, bundle_dir, tmp_path):
    cfg = load_config(tiny)
    op = build_operator(cfg)
    from patmg.cli import write_result
    data, _ = read_field(bundle_dir / "data.field")
    manifest = json.loads((bundle_dir / "manifest.json").read_text())
    for name in ("a", "b"):
        res = run_reconstruction(cfg, op, data, "ista", max_iters=2)
        write_result(res, cfg, "ista", tmp_path / name, manifest, {})
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "c")]) == 0
    assert not (tmp_path / "c" / "RE.png").exists() and (tmp_path / "c" / "F.png").exists()


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "patmg.cli", "defaults"], capture_output=True, text=True)
    assert proc.returncode == 0 and "[multigrid]" in proc.stdout
