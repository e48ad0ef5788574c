import csv
import json

import numpy as np
import pytest
import torch

from pudm import harness
from pudm.errors import ValidationError
from pudm.harness import ShapeSpec, blob_radius, generate_shape, make_pairs
from pudm.metrics import chamfer
from pudm.network import UpsampleDenoiser, preset
from pudm.sampling import SamplerConfig
from pudm.schedule import build_schedule
from pudm.training import SamplePair


def test_sphere_on_surface():
    pts = generate_shape(ShapeSpec("sphere", n=1000, params={"radius": 2.0}))
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 2.0, atol=1e-9)


def test_torus_implicit_residual_and_area_uniformity():
    pts = generate_shape(ShapeSpec("torus", n=20_000, seed=1))
    R, r = 1.0, 0.3
    resid = (np.hypot(pts[:, 0], pts[:, 1]) - R) ** 2 + pts[:, 2] ** 2 - r ** 2
    assert np.abs(resid).max() < 1e-9
    # outer half (cos v > 0) carries (pi R + 2 r) / (2 pi R) of the area
    outer = np.mean(np.hypot(pts[:, 0], pts[:, 1]) > R)
    assert outer == pytest.approx(0.5 + r / (np.pi * R), abs=0.01)


def test_box_plane_blob_on_surface():
    box = generate_shape(ShapeSpec("box", n=3000))
    a = np.array([1.0, 0.7, 0.5])
    on_face = np.isclose(np.abs(box), a, atol=1e-12)
    assert np.all(on_face.any(axis=1)) and np.all(np.abs(box) <= a + 1e-12)
    # faces weighted by area: fraction on the two x faces = a_y a_z / sum
    areas = np.array([a[1] * a[2], a[0] * a[2], a[0] * a[1]])
    assert on_face[:, 0].mean() == pytest.approx(areas[0] / areas.sum(), abs=0.03)

    plane = generate_shape(ShapeSpec("plane-with-hole", n=2000))
    assert np.all(plane[:, 2] == 0) and np.all(np.hypot(plane[:, 0], plane[:, 1]) > 0.4)

    spec = ShapeSpec("gaussian-blob", n=2000)
    blob = generate_shape(spec)
    r = np.linalg.norm(blob, axis=1)
    np.testing.assert_allclose(r, blob_radius(spec, blob / r[:, None]), atol=1e-9)


def test_deterministic_and_validation():
    s = ShapeSpec("torus", n=100, seed=4)
    assert generate_shape(s).tobytes() == generate_shape(s).tobytes()
    with pytest.raises(ValidationError):
        generate_shape(ShapeSpec("klein-bottle"))
    with pytest.raises(ValidationError):
        generate_shape(ShapeSpec("sphere", n=4))


@pytest.mark.parametrize("sparse_n,rate", [(64, 4), (256, 4)])
def test_make_pairs_sizes_and_subset(sparse_n, rate):
    pairs = make_pairs(ShapeSpec("box", n=4096), sparse_n, rate, 2, seed=0)
    for p in pairs:
        assert p.c.shape == (sparse_n, 3) and p.x0.shape == (sparse_n * rate, 3) and p.rate == rate
        rows = {tuple(r) for r in p.x0}
        assert all(tuple(r) in rows for r in p.c)
        assert np.linalg.norm(p.c, axis=1).max() == pytest.approx(1.0)
    assert pairs[0].c.tobytes() != pairs[1].c.tobytes()


def test_make_pairs_insufficient_density():
    with pytest.raises(ValidationError):
        make_pairs(ShapeSpec("sphere", n=100), 64, 4, 1)


def test_synthetic_pairs_round_robin():
    pairs = harness.synthetic_pairs(["sphere", "torus"], 16, [2, 4], 6, seed=0)
    assert len(pairs) == 6
    assert [(p.name.split("-")[0], p.rate) for p in pairs[:4]] == [("sphere", 2), ("sphere", 4), ("torus", 2), ("torus", 4)]


def test_baselines():
    pairs = make_pairs(ShapeSpec("sphere"), 32, 4, 3, seed=0)
    mid = harness.baseline_midpoint_eval(pairs)
    noise = harness.baseline_noise_eval(pairs)
    assert len(mid.table()) == 4 and mid.table()[-1][0] == "mean"
    assert mid.cd < noise.cd
    # rate 1: the midpoint baseline is the sparse cloud itself
    one = [SamplePair(p.c, p.c, 1, name="id") for p in pairs]
    assert harness.baseline_midpoint_eval(one).cd == 0.0


def test_line_midpoints_nearly_exact():
    t = np.linspace(-1, 1, 256)
    x0 = np.stack([t, 0 * t, 0 * t], axis=1)
    c = x0[::4]
    rep = harness.baseline_midpoint_eval([SamplePair(c, x0, 4)], k=2)
    assert rep.cd < 1e-4


@pytest.fixture(scope="module")
def tiny_model():
    torch.manual_seed(0)
    return UpsampleDenoiser(preset("desk"))


def test_noise_sweep_zero_row_equals_clean(tiny_model):
    pairs = make_pairs(ShapeSpec("sphere"), 32, 2, 2, seed=0)
    sched = build_schedule()
    cfg = SamplerConfig(interval=200)
    reports = harness.noise_sweep(tiny_model, pairs, [0.0, 0.05], "gaussian", sched, cfg)
    clean, _ = harness.evaluate_model(tiny_model, pairs, sched, cfg)
    assert reports[0.0].rows == clean.rows
    assert reports[0.05].rows != clean.rows


def test_reports_manifest_plot(tmp_path, tiny_model):
    pairs = make_pairs(ShapeSpec("sphere"), 32, 2, 2, seed=0)
    reports = {0.0: harness.baseline_midpoint_eval(pairs), 0.1: harness.baseline_noise_eval(pairs)}
    paths = harness.write_reports(reports, tmp_path, "noise")
    assert [p.name for p in paths] == ["noise_0.0.csv", "noise_0.1.csv"]
    rows = list(csv.reader(paths[0].open()))
    assert rows[0] == ["sample", "cd", "hd", "p2f"] and rows[-1][0] == "mean"
    harness.write_manifest(tmp_path / "manifest.json", "desk", 3, "abc", [0.0, 0.1], 2)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert {"preset", "seed", "checkpoint_sha256", "tau_grid", "rate"} <= set(doc)
    harness.plot_curves(reports, tmp_path / "p.png", "tau")
    assert (tmp_path / "p.png").read_bytes()[:4] == b"\x89PNG"


def test_rate_label_override_changes_only_conditioning(tiny_model):
    pairs = make_pairs(ShapeSpec("torus"), 32, 2, 1, seed=0)
    sched = build_schedule()
    cfg = SamplerConfig(interval=500)
    _, a = harness.evaluate_model(tiny_model, pairs, sched, cfg)
    _, b = harness.evaluate_model(tiny_model, pairs, sched, cfg, rate_label=8)
    assert a[0].shape == b[0].shape == (64, 3)
    assert chamfer(a[0], b[0]) >= 0
