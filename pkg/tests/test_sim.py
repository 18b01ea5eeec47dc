import numpy as np
import pytest

from calvalid.errors import ConfigInvalid
from calvalid.geometry import CameraModel, project_points
from calvalid.gof import ks_test
from calvalid.sim import (
    DEFAULT_THETA,
    SimConfig,
    convex_hull,
    coverage,
    distance_schedule,
    fill_fraction,
    gen_poly_example,
    gen_sets,
    grid_points,
    perturb_on_sphere,
    resolve_sigma_3d,
    sphere_scales,
)


class TestCoverage:
    def test_unit_square(self):
        assert coverage([[0, 0], [1, 0], [1, 1], [0, 1]]) == 1.0

    def test_collinear(self):
        assert coverage([[0, 0], [1, 1], [2, 2], [3, 3]]) == 0.0

    def test_too_few(self):
        assert coverage([[0, 0], [1, 1]]) == 0.0

    def test_full_grid(self):
        t = np.linspace(0, 1400, 15)
        gx, gy = np.meshgrid(t, t)
        assert coverage(np.column_stack([gx.ravel(), gy.ravel()])) == pytest.approx(1.96e6)

    def test_hull_is_ccw_without_interior(self, rng):
        pts = rng.uniform(size=(200, 2))
        hull = np.array(convex_hull(pts))
        x, y = hull[:, 0], hull[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert signed > 0
        assert len(hull) < 200

    def test_matches_scipy_hull(self, rng):
        from scipy.spatial import ConvexHull

        pts = rng.normal(size=(300, 2))
        assert coverage(pts) == pytest.approx(ConvexHull(pts).volume, rel=1e-12)


class TestConfig:
    def test_defaults(self):
        cfg = SimConfig()
        assert (cfg.f, cfg.theta, cfg.grid, cfg.image_size) == (800.0, DEFAULT_THETA, 15,
                                                                (1600, 1600))
        assert (cfg.sigma_d, cfg.rot_range_deg, cfg.n_sets) == (0.03, 15.0, 56)

    @pytest.mark.parametrize("kw", [dict(grid=1), dict(sigma_d=-1.0), dict(image_size=(0, 10)),
                                    dict(n_sets=0), dict(sigma_3d=-0.1), dict(f=0.0),
                                    dict(theta=(0.1, 0.2))])
    def test_invalid(self, kw):
        with pytest.raises(ConfigInvalid):
            SimConfig(**kw)

    def test_to_dict_round_trip(self):
        cfg = SimConfig(seed=4, sigma_3d=0.01)
        assert SimConfig(**cfg.to_dict()) == cfg


class TestGenSets:
    def test_default_count_and_coverage_order(self):
        cfg = SimConfig()
        sched = distance_schedule(cfg)
        assert len(sched) == 56
        assert np.all(np.diff(sched) < 0)
        assert fill_fraction(cfg, sched[0]) == pytest.approx(cfg.far_fill, rel=1e-9)
        assert fill_fraction(cfg, sched[-1]) == pytest.approx(cfg.near_fill, rel=1e-9)
        sets = gen_sets(cfg, indices=range(0, 56, 5))
        cov = [s.coverage for s in sets]
        assert np.all(np.diff(cov) > 0)
        w, h = cfg.image_size
        assert all(0 <= c <= w * h for c in cov)

    def test_noiseless_round_trip(self, noiseless_sets):
        for s in noiseless_sets:
            x2d = np.array([c.x2d for c in s.corrs])
            X3d = np.array([c.X3d for c in s.corrs])
            assert np.max(np.abs(x2d - project_points(s.truth, X3d))) < 1e-9

    def test_determinism(self):
        a = gen_sets(SimConfig(n_sets=4, seed=9))
        b = gen_sets(SimConfig(n_sets=4, seed=9))
        for sa, sb in zip(a, b):
            assert all(np.array_equal(ca.x2d, cb.x2d) and np.array_equal(ca.X3d, cb.X3d)
                       for ca, cb in zip(sa.corrs, sb.corrs))
            assert np.array_equal(sa.scales, sb.scales)

    def test_subset_matches_full_run(self):
        cfg = SimConfig(n_sets=5, seed=2)
        full = gen_sets(cfg)
        part = gen_sets(cfg, indices=[3, 1])
        for s in part:
            ref = full[s.index]
            assert np.array_equal(s.truth.R, ref.truth.R)
            assert all(np.array_equal(c.X3d, r.X3d) for c, r in zip(s.corrs, ref.corrs))

    def test_different_seeds_differ(self):
        a = gen_sets(SimConfig(n_sets=1, seed=0))[0]
        b = gen_sets(SimConfig(n_sets=1, seed=1))[0]
        assert not np.array_equal(a.corrs[0].x2d, b.corrs[0].x2d)

    def test_grid_is_planar(self):
        X = grid_points(SimConfig())
        assert np.max(np.abs(X[:, 2])) <= 1e-12
        assert len(X) == 225

    def test_sphere_constraint(self, default_sets):
        for s in default_sets:
            X_obs = np.array([c.X3d for c in s.corrs])
            r_true = np.linalg.norm(s.X_true - s.truth.center, axis=1)
            r_obs = np.linalg.norm(X_obs - s.truth.center, axis=1)
            assert np.allclose(r_obs, r_true, rtol=1e-9, atol=0)
            assert not np.allclose(X_obs, s.X_true)

    def test_rotation_range(self):
        cfg = SimConfig(n_sets=20)
        for s in gen_sets(cfg):
            angle = np.arccos(np.clip((np.trace(s.truth.R) - 1) / 2, -1, 1))
            # three angles each within 15 degrees
            assert angle <= np.deg2rad(15) * np.sqrt(3) + 1e-12

    def test_default_sigma_3d(self):
        cfg = SimConfig()
        far = distance_schedule(cfg)[0]
        assert resolve_sigma_3d(cfg) == pytest.approx(cfg.lidar_px * far / cfg.f)
        assert resolve_sigma_3d(SimConfig(sigma_3d=0.5)) == 0.5


class TestSphereNoise:
    def test_anisotropy(self):
        truth = CameraModel(800, 800, 800, 800, theta=(0, 0, 0), t=(0, 0, 10.0))
        X = np.tile([0.01, 0.01, 0.0], (20_000, 1))
        rng = np.random.default_rng(0)
        s3d = 0.01
        pan = rng.normal(size=len(X)) * s3d / 10.0
        tilt = rng.normal(size=len(X)) * 0.1 * s3d / 10.0
        d = project_points(truth, perturb_on_sphere(truth, X, pan, tilt)) \
            - project_points(truth, X)
        ratio = np.std(d[:, 1]) / np.std(d[:, 0])
        assert ratio == pytest.approx(0.1, rel=0.05)

    def test_scales_predict_displacement(self, default_sets):
        s = default_sets[1]
        rng = np.random.default_rng(1)
        X = s.X_true[:20]
        rho = np.linalg.norm(X - s.truth.center, axis=1)
        s3d = 1e-3
        disp = []
        for _ in range(2000):
            pan = rng.normal(size=20) * s3d / rho
            tilt = rng.normal(size=20) * 0.1 * s3d / rho
            disp.append(project_points(s.truth, perturb_on_sphere(s.truth, X, pan, tilt))
                        - project_points(s.truth, X))
        emp = np.std(np.array(disp), axis=0) / s3d
        assert np.allclose(emp, s.scales[:20], rtol=0.08)

    def test_scales_match_helper(self, default_sets):
        s = default_sets[0]
        assert np.allclose(sphere_scales(s.truth, s.X_true, 0.1), s.scales)


class TestPolyExample:
    def test_noiseless_true_model(self):
        _, _, r = gen_poly_example(100, 0.0, "true_model")
        assert np.array_equal(r, np.zeros(100))

    def test_shapes_and_range(self):
        xs, ys, r = gen_poly_example(50, 0.1, "bad_model", seed=3)
        assert xs.shape == ys.shape == r.shape == (50,)
        assert np.all(np.abs(xs) <= 1)
        assert np.allclose(r, ys - xs - 0.5 * xs**5)

    def test_true_model_passes_ks(self):
        ok = sum(not ks_test(gen_poly_example(500, 0.1, seed=s)[2] / 0.1).reject_h0
                 for s in range(30))
        assert ok >= 25

    def test_bad_model_rejected(self):
        _, _, r = gen_poly_example(500, 0.1, "bad_model", seed=0)
        assert ks_test(r / 0.1).reject_h0

    @pytest.mark.parametrize("args", [(5, 0.1, "true_model"), (50, -1.0, "true_model"),
                                      (50, 0.1, "other")])
    def test_invalid(self, args):
        with pytest.raises(ConfigInvalid):
            gen_poly_example(*args)
