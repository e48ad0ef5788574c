"""Synthetic shapes, training pairs and evaluation drivers."""
import json
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import geometry
from .errors import ValidationError
from .io import atomic_write
from .metrics import MetricReport, evaluate
from .sampling import SamplerConfig, upsample_batch
from .training import SamplePair

SHAPE_DEFAULTS = {
    "sphere": {"radius": 1.0},
    "torus": {"R": 1.0, "r": 0.3},
    "box": {"half_extents": (1.0, 0.7, 0.5)},
    "gaussian-blob": {"radius": 1.0, "amp": 0.5, "width": 0.4},
    "plane-with-hole": {"half_size": 1.0, "hole": 0.4},
}


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    n: int = 2048
    seed: int = 0
    params: dict = field(default_factory=dict)

    def resolved(self):
        if self.kind not in SHAPE_DEFAULTS:
            raise ValidationError(f"unknown shape kind {self.kind!r}; choose from {sorted(SHAPE_DEFAULTS)}")
        return {**SHAPE_DEFAULTS[self.kind], **self.params}


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rejection(rng, n, propose):
    # propose(rng, m) -> (candidates, accept_mask); loop until n accepted
    out, have = [], 0
    while have < n:
        cand, ok = propose(rng, max(2 * (n - have), 64))
        out.append(cand[ok])
        have += int(ok.sum())
    return np.concatenate(out)[:n]


def _sphere(rng, n, radius):
    return radius * _unit_vectors(rng, n)


def _torus(rng, n, R, r):
    def propose(rng, m):
        u = rng.uniform(0, 2 * np.pi, m)
        v = rng.uniform(0, 2 * np.pi, m)
        # area element is proportional to R + r cos v
        ok = rng.uniform(0, R + r, m) < R + r * np.cos(v)
        ring = R + r * np.cos(v)
        pts = np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(v)], axis=1)
        return pts, ok

    return _rejection(rng, n, propose)


def _box(rng, n, half_extents):
    a = np.asarray(half_extents, dtype=np.float64)
    pairs = [(1, 2), (0, 2), (0, 1)]  # in-plane axes for faces normal to x, y, z
    areas = np.array([a[j] * a[k] for j, k in pairs])
    face = rng.choice(3, size=n, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], size=n)
    pts = rng.uniform(-1, 1, (n, 3)) * a
    pts[np.arange(n), face] = sign * a[face]
    return pts


def _blob(rng, n, radius, amp, width):
    axis = np.array([0.0, 0.0, 1.0])
    peak_slope = radius * amp / width ** 2
    rmax = radius * (1 + amp)
    bound = rmax * np.sqrt(rmax ** 2 + peak_slope ** 2)

    def propose(rng, m):
        u = _unit_vectors(rng, m)
        cos = u @ axis
        g = np.exp(-(1 - cos) / width ** 2)
        r = radius * (1 + amp * g)
        # surface area per solid angle for a radial graph r(u): r * sqrt(r^2 + |grad r|^2)
        slope = radius * amp * g * np.sqrt(np.maximum(0.0, 1 - cos ** 2)) / width ** 2
        jac = r * np.sqrt(r ** 2 + slope ** 2)
        return u * r[:, None], rng.uniform(0, bound, m) < jac

    return _rejection(rng, n, propose)


def _plane_hole(rng, n, half_size, hole):
    def propose(rng, m):
        xy = rng.uniform(-half_size, half_size, (m, 2))
        pts = np.concatenate([xy, np.zeros((m, 1))], axis=1)
        return pts, np.hypot(xy[:, 0], xy[:, 1]) > hole

    return _rejection(rng, n, propose)


_GENERATORS = {
    "sphere": _sphere,
    "torus": _torus,
    "box": _box,
    "gaussian-blob": _blob,
    "plane-with-hole": _plane_hole,
}


def blob_radius(spec, directions):
    """Ideal radius of the gaussian blob along unit ``directions``."""
    p = spec.resolved()
    g = np.exp(-(1 - directions[:, 2]) / p["width"] ** 2)
    return p["radius"] * (1 + p["amp"] * g)


def generate_shape(spec):
    """Uniform-area sample of the ideal surface, deterministic in ``spec.seed``."""
    params = spec.resolved()
    if spec.n < 8:
        raise ValidationError(f"shapes need at least 8 points, got {spec.n}")
    rng = np.random.default_rng(spec.seed)
    return _GENERATORS[spec.kind](rng, spec.n, **params)


def make_pairs(shape, sparse_n, rate, count, seed=0, reference_factor=16):
    """Pairs drawn from randomly rotated samples of one shape kind.

    The dense cloud is an FPS subset of the shape sample, the sparse cloud an
    FPS subset of the dense one; all three clouds (plus a dense surface proxy
    for P2F) share the sparse cloud's normalisation frame.
    """
    dense_n = rate * sparse_n
    if shape.n < dense_n:
        raise ValidationError(f"shape has {shape.n} points, fewer than the {dense_n} dense points requested")
    pairs = []
    for j, ss in enumerate(np.random.SeedSequence(seed).spawn(count)):
        rng = np.random.default_rng(ss)
        pts = generate_shape(replace(shape, seed=int(rng.integers(2 ** 31))))
        ref = generate_shape(replace(shape, n=reference_factor * dense_n, seed=int(rng.integers(2 ** 31))))
        rot = Rotation.random(random_state=rng).as_matrix()
        pts, ref = pts @ rot.T, ref @ rot.T
        x0 = pts[geometry.farthest_point_sample(pts, dense_n, seed=int(rng.integers(len(pts))))]
        c = x0[geometry.farthest_point_sample(x0, sparse_n, seed=0)]
        _, rec = geometry.normalize(c)
        pairs.append(SamplePair(rec.apply(c), rec.apply(x0), rate, rec.apply(ref), f"{shape.kind}-{j:03d}"))
    return pairs


def synthetic_pairs(kinds, sparse_n, rates, count, seed=0):
    """``count`` pairs spread round-robin over every (kind, rate) combination."""
    combos = [(k, r) for k in kinds for r in rates]
    if not combos or count < 1:
        raise ValidationError("synthetic_pairs needs at least one kind, one rate and count >= 1")
    share = [count // len(combos) + (j < count % len(combos)) for j in range(len(combos))]
    lists = []
    for j, ((kind, rate), m) in enumerate(zip(combos, share)):
        if m == 0:
            continue
        n = max(2048, 2 * rate * sparse_n)
        sub_seed = int(np.random.SeedSequence([seed, j]).generate_state(1)[0])
        lists.append(make_pairs(ShapeSpec(kind, n=n), sparse_n, rate, m, seed=sub_seed))
    out = []
    for row in range(max(len(l) for l in lists)):
        out.extend(l[row] for l in lists if row < len(l))
    return out


def _report(pairs, preds):
    rep = MetricReport()
    for p, pred in zip(pairs, preds):
        rep.add(p.name, *evaluate(pred, p.x0, p.reference))
    return rep


def baseline_midpoint_eval(pairs, k=8):
    return _report(pairs, [geometry.midpoint_interpolate(p.c, p.rate, k=k) for p in pairs])


def baseline_noise_eval(pairs, seed=0):
    """White-noise clouds with the dense cardinality, scored like a model output."""
    rng = np.random.default_rng(seed)
    return _report(pairs, [rng.standard_normal(p.x0.shape) for p in pairs])


def _grouped(pairs):
    groups = OrderedDict()
    for j, p in enumerate(pairs):
        groups.setdefault((len(p.c), p.rate), []).append(j)
    return groups


def model_outputs(model, pairs, schedule, config=SamplerConfig(), clouds=None, rate_label=None):
    clouds = [p.c for p in pairs] if clouds is None else clouds
    preds = [None] * len(pairs)
    for (_, rate), idx in _grouped(pairs).items():
        outs = upsample_batch([clouds[j] for j in idx], rate, model, schedule, config, rate_label=rate_label)
        for j, o in zip(idx, outs):
            preds[j] = o
    return preds


def evaluate_model(model, pairs, schedule, config=SamplerConfig(), rate_label=None):
    preds = model_outputs(model, pairs, schedule, config, rate_label=rate_label)
    return _report(pairs, preds), preds


def noise_sweep(model, pairs, taus, kind, schedule, config=SamplerConfig(), seed=0):
    """Perturb each sparse cloud, upsample, score against the clean dense cloud."""
    reports = OrderedDict()
    for tau in taus:
        noisy = [
            geometry.perturb(p.c, tau, kind, np.random.default_rng([seed, j])) for j, p in enumerate(pairs)
        ]
        reports[tau] = _report(pairs, model_outputs(model, pairs, schedule, config, clouds=noisy))
    return reports


def rate_sweep(model, pairs_by_rate, schedule, config=SamplerConfig()):
    return OrderedDict((r, evaluate_model(model, pairs, schedule, config)[0]) for r, pairs in pairs_by_rate.items())


def write_reports(reports, out_dir, stem):
    paths = []
    for key, rep in reports.items():
        path = out_dir / f"{stem}_{key}.csv"
        with atomic_write(path) as fh:
            rep.write_csv(fh)
        paths.append(path)
    return paths


def write_manifest(path, preset, seed, checkpoint_sha256, tau_grid=None, rate=None, **extra):
    doc = {
        "preset": preset,
        "seed": seed,
        "checkpoint_sha256": checkpoint_sha256,
        "tau_grid": list(tau_grid) if tau_grid is not None else None,
        "rate": rate,
        **extra,
    }
    with atomic_write(path) as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def plot_curves(reports, path, xlabel):
    """Metric-vs-parameter curves (CD, HD, P2F, all x1e3) as a static image."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = list(reports)
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, j, name in zip(axes, range(3), ("CD", "HD", "P2F")):
        ax.plot(xs, [rep.mean()[j] * 1e3 for rep in reports.values()], marker="o")
        ax.set_xlabel(xlabel)
        ax.set_title(f"{name} x1e-3")
    fig.tight_layout()
    with atomic_write(path, "wb") as fh:
        fig.savefig(fh, format="png", dpi=100)
    plt.close(fig)
