import json

import numpy as np
import pytest

from filamentlab.errors import ValidationError
from filamentlab.geometry import (
    AlignResult,
    FrameField,
    Grid1D,
    RigidMotion,
    SampledCurve,
    align,
    curve_from_dict,
    curve_from_tangent,
    curve_to_dict,
    frame_from_dict,
    frame_phase_rotate,
    frame_to_dict,
    frenet_integrate,
    load_curve_csv,
    load_frame_csv,
    parallel_integrate,
    rotation_about_axis,
    save_curve_csv,
    save_frame_csv,
    tangent_of_curve,
)


def helix_points(x, r=0.6, pitch=0.8):
    om = 1.0 / np.hypot(r, pitch)
    return np.stack([r * np.cos(om * x), r * np.sin(om * x), pitch * om * x], axis=1)


class TestGrid1D:
    def test_staggered_excludes_zero(self):
        g = Grid1D.staggered_symmetric(4.0, 1e-2)
        assert np.min(np.abs(g.x)) == pytest.approx(5e-3)
        assert g.n_nodes == 800

    def test_uniform_spacing_enforced(self):
        with pytest.raises(ValidationError):
            Grid1D(np.array([0.0, 1.0, 3.0]))

    def test_too_few_nodes(self):
        with pytest.raises(ValidationError):
            Grid1D(np.array([0.0, 1.0]))


class TestFrenetIntegrate:
    def test_zero_curvature_constant_frame(self):
        g = Grid1D.regular(-2.0, 2.0, 101)
        fr = frenet_integrate(np.zeros(101), np.zeros(101), np.eye(3), g)
        assert np.allclose(fr.T, [1, 0, 0], atol=1e-14)
        assert np.allclose(fr.N.real, [0, 1, 0], atol=1e-14)
        assert np.allclose(fr.N.imag, [0, 0, 1], atol=1e-14)

    def test_unit_circle_closes(self):
        g = Grid1D.regular(0.0, 2 * np.pi, 6284)
        ones = np.ones(g.n_nodes)
        fr = frenet_integrate(ones, 0 * ones, np.eye(3), g)
        assert np.linalg.norm(fr.T[-1] - fr.T[0]) < 1e-6
        curve = curve_from_tangent(fr.T, g)
        gap = np.linalg.norm(curve.points[-1] - curve.points[0])
        assert gap < 1e-6

    def test_rejects_bad_anchor_frame(self):
        g = Grid1D.regular(0.0, 1.0, 11)
        ones = np.ones(11)
        with pytest.raises(ValidationError):
            frenet_integrate(ones, ones, 2 * np.eye(3), g)

    def test_rejects_nan_fields(self):
        g = Grid1D.regular(0.0, 1.0, 11)
        c = np.ones(11)
        c[3] = np.nan
        with pytest.raises(ValidationError):
            frenet_integrate(c, np.zeros(11), np.eye(3), g)

    def test_selfsimilar_far_field_mean(self):
        # c = a, tau = s/2 from the canonical frame: far-field first component
        # of T approaches exp(-pi a^2/2)
        a = 0.5
        g = Grid1D.staggered_symmetric(40.0, 2e-3)
        fr = frenet_integrate(np.full(g.n_nodes, a), g.x / 2, np.eye(3), g)
        sel = np.abs(g.x) > 36.0
        assert fr.T[sel, 0].mean() == pytest.approx(np.exp(-np.pi * a**2 / 2), abs=2e-4)

    def test_orthonormality_under_strong_fields(self):
        # reorthonormalization keeps the defect tiny even for violent fields
        g = Grid1D.staggered_symmetric(1.0, 1e-3)
        c = 1e3 * (1.0 + np.abs(g.x))
        tau = 1e3 * g.x
        fr = frenet_integrate(c, tau, np.eye(3), g)
        assert fr.orthonormality_defect() <= 1e-6


class TestParallelIntegrate:
    def test_zero_field_constant(self):
        g = Grid1D.staggered_symmetric(2.0, 1e-2)
        psi = np.zeros(g.n_nodes, dtype=complex)
        anchor = (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]) + 1j * np.array([0, 0, 1.0]))
        fr = parallel_integrate(psi, g, anchor)
        assert np.allclose(fr.T, [1, 0, 0], atol=1e-14)

    def test_real_psi_matches_frenet(self):
        g = Grid1D.staggered_symmetric(3.0, 1e-3)
        c = 0.8
        psi = np.full(g.n_nodes, c, dtype=complex)
        anchor = (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]) + 1j * np.array([0, 0, 1.0]))
        fr_par = parallel_integrate(psi, g, anchor)
        fr_fre = frenet_integrate(np.full(g.n_nodes, c), np.zeros(g.n_nodes), np.eye(3), g)
        assert np.max(np.abs(fr_par.T - fr_fre.T)) < 1e-8
        assert np.max(np.abs(fr_par.N - fr_fre.N)) < 1e-8

    def test_selfsimilar_psi_matches_frenet_after_phase(self):
        # psi_a(1,x) = a e^{i x^2/4} gives the parallel frame of the
        # (c, tau) = (a, x/2) Frenet frame rotated by e^{i int tau}
        a = 0.7
        g = Grid1D.staggered_symmetric(6.0, 1e-3)
        psi = a * np.exp(1j * g.x**2 / 4)
        anchor = (np.array([1.0, 0, 0]), np.array([0, 1.0, 0]) + 1j * np.array([0, 0, 1.0]))
        fr_par = parallel_integrate(psi, g, anchor)
        fr_fre = frenet_integrate(np.full(g.n_nodes, a), g.x / 2, np.eye(3), g)
        rotated = frame_phase_rotate(fr_fre, g.x**2 / 4)
        assert np.max(np.abs(fr_par.T - rotated.T)) < 1e-6
        assert np.max(np.abs(fr_par.N - rotated.N)) < 1e-6


class TestCurveFromTangent:
    def test_straight_segment(self):
        g = Grid1D.regular(0.0, 1.0, 51)
        T = np.tile([1.0, 0.0, 0.0], (51, 1))
        curve = curve_from_tangent(T, g, basepoint=(0, 0, 0), anchor=0.0)
        assert np.allclose(curve.points[:, 0], g.x, atol=1e-14)

    def test_integrate_differentiate_roundtrip(self):
        g = Grid1D.regular(0.0, 10.0, 2001)
        pts = helix_points(g.x)
        curve = SampledCurve(g, pts)
        T = tangent_of_curve(curve)
        T /= np.linalg.norm(T, axis=1)[:, None]
        rebuilt = curve_from_tangent(T, g, basepoint=pts[0], anchor=g.x[0])
        err = np.max(np.linalg.norm(rebuilt.points - pts, axis=1))
        assert err < 20 * g.h**4 / g.h  # O(h^4) cumulative over 1/h intervals

    def test_rejects_non_unit_tangent(self):
        g = Grid1D.regular(0.0, 1.0, 11)
        with pytest.raises(ValidationError):
            curve_from_tangent(2 * np.ones((11, 3)), g)


class TestAlign:
    def test_identity(self):
        g = Grid1D.regular(0.0, 10.0, 201)
        curve = SampledCurve(g, helix_points(g.x))
        res = align(curve, curve)
        assert res.rms < 1e-12
        assert np.allclose(res.motion.rotation, np.eye(3), atol=1e-12)
        assert not res.degenerate

    def test_recovers_known_rotation(self):
        g = Grid1D.regular(0.0, 10.0, 201)
        pts = helix_points(g.x)
        R = rotation_about_axis([0, 0, 1.0], np.pi)
        moved = SampledCurve(g, pts @ R.T + np.array([1.0, -2.0, 3.0]))
        res = align(SampledCurve(g, pts), moved)
        assert res.rms < 1e-10
        assert np.max(np.abs(res.motion.rotation - R)) < 1e-10

    def test_flags_collinear(self):
        g = Grid1D.regular(0.0, 1.0, 11)
        line = np.outer(g.x, [1.0, 0, 0])
        res = align(SampledCurve(g, line), SampledCurve(g, line))
        assert res.degenerate


class TestRigidMotion:
    def test_rejects_non_orthogonal(self):
        with pytest.raises(ValidationError):
            RigidMotion(np.eye(3) + 1e-6, np.zeros(3))

    def test_compose(self):
        Ra = rotation_about_axis([0, 0, 1], 0.3)
        Rb = rotation_about_axis([1, 0, 0], -0.8)
        ma = RigidMotion(Ra, np.array([1.0, 0, 0]))
        mb = RigidMotion(Rb, np.array([0, 2.0, 0]))
        p = np.array([[0.3, -0.2, 0.9]])
        assert np.allclose(ma.compose(mb).apply(p), ma.apply(mb.apply(p)))


class TestSerialization:
    def test_curve_csv_roundtrip(self, tmp_path):
        g = Grid1D.staggered_symmetric(2.0, 1e-2)
        curve = SampledCurve(g, helix_points(g.x))
        path = tmp_path / "curve.csv"
        save_curve_csv(curve, path)
        back = load_curve_csv(path)
        assert np.array_equal(back.points, curve.points)
        assert np.array_equal(back.grid.x, curve.grid.x)

    def test_curve_json_bit_exact(self):
        g = Grid1D.staggered_symmetric(2.0, 1e-2)
        curve = SampledCurve(g, helix_points(g.x))
        blob = json.dumps(curve_to_dict(curve))
        back = curve_from_dict(json.loads(blob))
        assert np.array_equal(back.points, curve.points)
        assert np.array_equal(back.grid.x, curve.grid.x)

    def test_frame_csv_and_json_roundtrip(self, tmp_path):
        g = Grid1D.regular(0.0, 2 * np.pi, 401)
        ones = np.ones(g.n_nodes)
        fr = frenet_integrate(ones, 0.3 * ones, np.eye(3), g)
        path = tmp_path / "frame.csv"
        save_frame_csv(fr, path)
        back = load_frame_csv(path)
        assert np.array_equal(back.T, fr.T)
        assert np.array_equal(back.N, fr.N)
        blob = json.dumps(frame_to_dict(fr))
        back2 = frame_from_dict(json.loads(blob))
        assert np.array_equal(back2.N, fr.N)
