"""End-to-end validation of one correspondence set, and summary reports.

``validate_correspondences`` chains residuals, lidar scales, the noise
regression, standardization and the normality tests into a
:class:`ValidationRecord`. ``write_report`` turns a list of records into
a CSV table, histogram counts and a static SVG overview.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, EmptyInput
from .geometry import residuals as compute_residuals, stack_correspondences
from .gof import DEFAULT_TESTS, GofTest, TestReport, validate
from .noise import DEFAULT_DELTA, IRLSConfig, fit_noise, lidar_scales_array, standardize
from .sim import coverage as hull_area

SCHEMA = "calvalid.validation/1"
ZERO_RESIDUAL_TOL = 1e-9  # px
HIST_EDGES = np.linspace(-5.0, 5.0, 41)
CSV_COLUMNS = ("set_id", "coverage", "empirical_std", "predicted_std", "ks_p", "dap_p", "sw_p",
               "decisions")


@dataclass(frozen=True)
class ValidationRecord:
    set_id: str
    coverage: float
    empirical_std: float
    predicted_std: float
    reports: list
    warnings: list = field(default_factory=list)
    n_inliers: int = 0
    sigma_d2: float = 0.0
    sigma_l2: float = 0.0
    irls_iterations: int = 0
    histogram: list = field(default_factory=list)  # counts over HIST_EDGES

    def report(self, test):
        test = GofTest.parse(test)
        for r in self.reports:
            if r.test is test:
                return r
        return None

    @property
    def decision_report(self):
        """The KS report when present, else the first one."""
        return self.report(GofTest.KS) or self.reports[0]

    @property
    def rejected(self):
        return self.decision_report.reject_h0

    def to_dict(self):
        return {
            "schema": SCHEMA,
            "set_id": self.set_id,
            "coverage": self.coverage,
            "empirical_std": self.empirical_std,
            "predicted_std": self.predicted_std,
            "n_inliers": self.n_inliers,
            "sigma_d2": self.sigma_d2,
            "sigma_l2": self.sigma_l2,
            "irls_iterations": self.irls_iterations,
            "reports": [r.to_dict() for r in self.reports],
            "decision": "reject" if self.rejected else "accept",
            "warnings": list(self.warnings),
            "histogram": {"edges": [float(e) for e in HIST_EDGES],
                          "counts": [int(c) for c in self.histogram]},
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported record schema {d.get('schema')!r}")
        return cls(set_id=str(d["set_id"]), coverage=float(d["coverage"]),
                   empirical_std=float(d["empirical_std"]),
                   predicted_std=float(d["predicted_std"]),
                   reports=[TestReport.from_dict(r) for r in d["reports"]],
                   warnings=list(d.get("warnings", [])), n_inliers=int(d.get("n_inliers", 0)),
                   sigma_d2=float(d.get("sigma_d2", 0.0)), sigma_l2=float(d.get("sigma_l2", 0.0)),
                   irls_iterations=int(d.get("irls_iterations", 0)),
                   histogram=list(d.get("histogram", {}).get("counts", [])))


def histogram_counts(values):
    """Counts over ``HIST_EDGES``; values outside the range land in the end bins."""
    v = np.clip(np.asarray(values, dtype=float), HIST_EDGES[0], HIST_EDGES[-1])
    return np.histogram(v, bins=HIST_EDGES)[0]


def validate_correspondences(model, corrs, scales=None, set_id="set", alpha=0.05,
                             tests=DEFAULT_TESTS, delta=DEFAULT_DELTA, irls=None,
                             lidar_origin=(0.0, 0.0, 0.0), lidar_up=(0.0, 1.0, 0.0)):
    """Validate ``model`` against ``corrs``.

    ``scales`` (one row per correspondence, inliers and outliers alike)
    are used when given; otherwise they are computed from the model with
    :func:`calvalid.noise.lidar_scales_array`.
    """
    res = compute_residuals(model, corrs)
    _, X3d, inlier = stack_correspondences(corrs)
    if scales is not None:
        scales = np.asarray(scales, dtype=float)
        if scales.shape != (len(corrs), 2):
            raise AlignmentError(f"scales shape {scales.shape} does not match "
                                 f"{len(corrs)} correspondences")
        a = scales[res.index]
    else:
        a = lidar_scales_array(model, X3d[res.index], delta=delta, origin=lidar_origin,
                               up=lidar_up)

    warnings = []
    if np.all(model.theta == 0.0):
        warnings.append("zero_distortion")
    eps = res.eps
    x2d = np.array([corrs[i].x2d for i in res.index])
    cov = hull_area(x2d)
    empirical = float(np.std(eps))

    if np.max(np.abs(eps)) <= ZERO_RESIDUAL_TOL:
        # exact fit: nothing to standardize, report as a perfect accept
        warnings.append("zero_residuals")
        wanted = {GofTest.parse(t) for t in tests}
        if not wanted:
            raise EmptyInput("no tests requested")
        n = 2 * res.count
        reports = [TestReport(test=t, statistic=1.0 if t is GofTest.SW else 0.0, p_value=1.0,
                              alpha=float(alpha), reject_h0=False, n=n)
                   for t in DEFAULT_TESTS if t in wanted]
        return ValidationRecord(set_id=set_id, coverage=cov, empirical_std=empirical,
                                predicted_std=math.sqrt(IRLSConfig().floor), reports=reports,
                                warnings=warnings, n_inliers=res.count,
                                sigma_d2=IRLSConfig().floor, histogram=list(
                                    histogram_counts(np.zeros(n))))

    fit = fit_noise(res, a, irls or IRLSConfig())
    if fit.degenerate:
        warnings.append("degenerate_noise_system")
    if not fit.converged:
        warnings.append("irls_not_converged")
    z = standardize(res, fit)
    reports = validate(z, alpha=alpha, tests=tests)
    return ValidationRecord(set_id=set_id, coverage=cov, empirical_std=empirical,
                            predicted_std=fit.predicted_std, reports=reports, warnings=warnings,
                            n_inliers=res.count, sigma_d2=fit.sigma_d2, sigma_l2=fit.sigma_l2,
                            irls_iterations=fit.iterations,
                            histogram=[int(c) for c in histogram_counts(z.values)])


# -- reports ----------------------------------------------------------------

def sort_records(records):
    return sorted(records, key=lambda r: (r.coverage, r.set_id))


def _p(record, test):
    r = record.report(test)
    return "" if r is None else repr(r.p_value)


def records_csv(records):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in sort_records(records):
        decisions = ";".join(f"{rep.test.value}={'reject' if rep.reject_h0 else 'accept'}"
                             for rep in r.reports)
        writer.writerow([r.set_id, repr(r.coverage), repr(r.empirical_std),
                         repr(r.predicted_std), _p(r, GofTest.KS), _p(r, GofTest.DAP),
                         _p(r, GofTest.SW), decisions])
    return out.getvalue()


def histogram_csv(records):
    """Per-record histogram rows plus the expected standard-normal count per bin."""
    from statistics import NormalDist

    cdf = NormalDist().cdf
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("set_id", "bin_lo", "bin_hi", "count", "normal_expected"))
    for r in sort_records(records):
        n = sum(r.histogram)
        for k, c in enumerate(r.histogram):
            lo, hi = HIST_EDGES[k], HIST_EDGES[k + 1]
            # end bins absorb the tails, as the counts do
            p_lo = 0.0 if k == 0 else cdf(lo)
            p_hi = 1.0 if k == len(r.histogram) - 1 else cdf(hi)
            writer.writerow((r.set_id, repr(float(lo)), repr(float(hi)), c,
                             format(n * (p_hi - p_lo), ".6f")))
    return out.getvalue()


def _polyline(points, color, width=1.5):
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>'


def records_svg(records):
    """Static overview: std curves, one accept/reject strip per test, pooled histogram."""
    recs = sort_records(records)
    n = len(recs)
    W, left, right = 720, 70, 20
    plot_w = W - left - right
    std_h, strip_h, hist_h, gap = 180, 22, 160, 30
    tests = [t for t in DEFAULT_TESTS if any(r.report(t) for r in recs)]
    H = 20 + std_h + gap + len(tests) * (strip_h + 8) + gap + hist_h + 40
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
             f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">',
             f'<rect width="{W}" height="{H}" fill="white"/>']

    def xpos(i):
        return left + (i + 0.5) * plot_w / n

    top = 20
    emp = [r.empirical_std for r in recs]
    pred = [r.predicted_std for r in recs]
    ymax = max(max(emp), max(pred)) * 1.1 or 1.0
    parts.append(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{std_h}" fill="none" '
                 f'stroke="#444"/>')
    parts.append(f'<text x="{left}" y="{top - 6}">residual std [px] vs sets sorted by '
                 f'coverage (empirical: black, predicted: red)</text>')
    for frac in (0.0, 0.5, 1.0):
        y = top + std_h * (1 - frac)
        parts.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">'
                     f'{ymax * frac:.3g}</text>')
    parts.append(_polyline([(xpos(i), top + std_h * (1 - v / ymax)) for i, v in enumerate(emp)],
                           "black"))
    parts.append(_polyline([(xpos(i), top + std_h * (1 - v / ymax)) for i, v in enumerate(pred)],
                           "#c00000"))

    y = top + std_h + gap
    cell = plot_w / n
    for t in tests:
        parts.append(f'<text x="{left - 6}" y="{y + strip_h * 0.7:.2f}" text-anchor="end">'
                     f'{t.value}</text>')
        for i, r in enumerate(recs):
            rep = r.report(t)
            color = "#dddddd" if rep is None else ("#c00000" if rep.reject_h0 else "#2e7d32")
            parts.append(f'<rect x="{left + i * cell:.2f}" y="{y}" width="{cell:.2f}" '
                         f'height="{strip_h}" fill="{color}" stroke="white" stroke-width="0.5"/>')
        y += strip_h + 8
    parts.append(f'<text x="{left}" y="{y + 4}">green: H0 not rejected, red: rejected</text>')

    y += gap
    counts = np.sum([r.histogram for r in recs if r.histogram], axis=0)
    total = float(np.sum(counts)) or 1.0
    widths = np.diff(HIST_EDGES)
    density = counts / total / widths
    centers = 0.5 * (HIST_EDGES[:-1] + HIST_EDGES[1:])
    normal = np.exp(-0.5 * centers**2) / math.sqrt(2 * math.pi)
    dmax = max(float(np.max(density)), float(np.max(normal))) * 1.1
    parts.append(f'<text x="{left}" y="{y - 6}">pooled standardized residuals with N(0,1) '
                 f'density</text>')
    parts.append(f'<rect x="{left}" y="{y}" width="{plot_w}" height="{hist_h}" fill="none" '
                 f'stroke="#444"/>')
    span = HIST_EDGES[-1] - HIST_EDGES[0]
    for k, d in enumerate(density):
        x0 = left + (HIST_EDGES[k] - HIST_EDGES[0]) / span * plot_w
        bw = widths[k] / span * plot_w
        bh = d / dmax * hist_h
        parts.append(f'<rect x="{x0:.2f}" y="{y + hist_h - bh:.2f}" width="{bw:.2f}" '
                     f'height="{bh:.2f}" fill="#90a4ae"/>')
    parts.append(_polyline([(left + (c - HIST_EDGES[0]) / span * plot_w,
                             y + hist_h - v / dmax * hist_h) for c, v in zip(centers, normal)],
                           "#c00000"))
    for e in (-4, -2, 0, 2, 4):
        x = left + (e - HIST_EDGES[0]) / span * plot_w
        parts.append(f'<text x="{x:.2f}" y="{y + hist_h + 14}" text-anchor="middle">{e}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_report(records, out_dir):
    """Write ``summary.csv``, ``histograms.csv`` and ``summary.svg``; returns the paths."""
    if not records:
        raise EmptyInput("no records to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "summary.csv", "histograms": out / "histograms.csv",
             "svg": out / "summary.svg"}
    paths["csv"].write_text(records_csv(records), encoding="utf-8")
    paths["histograms"].write_text(histogram_csv(records), encoding="utf-8")
    paths["svg"].write_text(records_svg(records), encoding="utf-8")
    return paths
