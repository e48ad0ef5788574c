"""Chamfer, Hausdorff and point-to-surface distances plus CSV reports."""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import as_cloud

REPORT_SCALE = 1e3


def _nn_dists(src, dst):
    # unsquared distance from every src point to its nearest dst point
    d, _ = cKDTree(dst).query(src, k=1)
    return d


def chamfer(a, b):
    """Half the sum of both directed mean squared nearest-neighbour distances."""
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    return 0.5 * (float(np.mean(_nn_dists(a, b) ** 2)) + float(np.mean(_nn_dists(b, a) ** 2)))


def hausdorff(a, b):
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    return max(float(_nn_dists(a, b).max()), float(_nn_dists(b, a).max()))


def p2f_proxy(pred, dense_reference):
    """Mean distance from predicted points to a densely sampled surface proxy."""
    pred = as_cloud(pred, "pred")
    ref = as_cloud(dense_reference, "dense_reference")
    return float(np.mean(_nn_dists(pred, ref)))


@dataclass
class MetricReport:
    """Per-sample raw (unscaled) metric rows; scaling happens only on output."""

    rows: list = field(default_factory=list)

    def add(self, name, cd, hd, p2f):
        self.rows.append((str(name), float(cd), float(hd), float(p2f)))

    def mean(self):
        if not self.rows:
            return (float("nan"),) * 3
        arr = np.array([r[1:] for r in self.rows], dtype=np.float64)
        return tuple(float(v) for v in arr.mean(axis=0))

    @property
    def cd(self):
        return self.mean()[0]

    @property
    def hd(self):
        return self.mean()[1]

    @property
    def p2f(self):
        return self.mean()[2]

    def table(self):
        """Rows scaled by 1e3, mean row last."""
        out = [(n, cd * REPORT_SCALE, hd * REPORT_SCALE, p * REPORT_SCALE) for n, cd, hd, p in self.rows]
        m = self.mean()
        out.append(("mean",) + tuple(v * REPORT_SCALE for v in m))
        return out

    def write_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "cd", "hd", "p2f"])
        for name, cd, hd, p in self.table():
            w.writerow([name, f"{cd:.6g}", f"{hd:.6g}", f"{p:.6g}"])


def evaluate(pred, truth, reference=None):
    ref = truth if reference is None else reference
    return chamfer(pred, truth), hausdorff(pred, truth), p2f_proxy(pred, ref)
