import numpy as np
import pytest

from filamentlab.errors import ValidationError
from filamentlab.selfsimilar import (
    build_profile,
    corner_half_angle_sin,
    evaluate_selfsimilar,
    extract_A,
    origin_trajectory,
)

from conftest import cached_profile


class TestBuildProfile:
    def test_zero_curvature_limit_is_line(self):
        prof = build_profile(1e-6, L=30.0, h=2e-3)
        line = np.outer(prof.grid.x, [1.0, 0.0, 0.0])
        assert np.max(np.linalg.norm(prof.profile.points - line, axis=1)) < 1e-4
        assert np.linalg.norm(prof.A_plus - [1, 0, 0]) < 1e-4

    def test_corner_anchored_at_2a_e3(self, profile_half):
        anchored = profile_half.profile.evaluate(0.0)
        assert np.allclose(anchored, [0, 0, 2 * 0.5], atol=1e-6)

    def test_first_component_identity(self, profile_half):
        target = corner_half_angle_sin(0.5)
        assert abs(profile_half.A_plus[0] - target) < 1e-3
        assert abs(profile_half.A_minus[0] - target) < 1e-3

    def test_A_antisymmetry(self, profile_half):
        assert abs(profile_half.A_plus[1] + profile_half.A_minus[1]) < 1e-3
        assert abs(profile_half.A_plus[2] + profile_half.A_minus[2]) < 1e-3

    def test_L_too_small_rejected(self):
        with pytest.raises(ValidationError):
            build_profile(0.5, L=5.0)


class TestExtractA:
    def test_tiny_a_returns_e1(self):
        prof = build_profile(1e-6, L=30.0, h=2e-3)
        A = extract_A(prof.frame, 1e-6, +1)
        assert np.linalg.norm(A - [1, 0, 0]) < 1e-5

    @pytest.mark.parametrize("a", [0.25, 0.5, 1.0])
    def test_corner_angle_law(self, a):
        prof = cached_profile(a)
        assert abs(np.sin(prof.corner_angle / 2) - corner_half_angle_sin(a)) < 1e-3

    def test_dot_product_identity_a1(self):
        # cos(theta) = 1 - 2 sin^2(theta/2) applied to the angle law at a=1:
        # A+ . A- = 2 e^{-pi} - 1 (expected value from the trig identity)
        prof = cached_profile(1.0)
        expected = 2.0 * np.exp(-np.pi) - 1.0
        assert abs(float(prof.A_plus @ prof.A_minus) - expected) < 1e-3


class TestExtractB:
    def test_unit_real_imag_parts(self, profile_half):
        for B in (profile_half.B_plus, profile_half.B_minus):
            assert abs(np.linalg.norm(B.real) - 1) < 1e-2
            assert abs(np.linalg.norm(B.imag) - 1) < 1e-2

    def test_sign_pattern(self, profile_half):
        Bp, Bm = profile_half.B_plus, profile_half.B_minus
        assert abs(Bp[0] + Bm[0]) < 1e-2
        assert abs(Bp[1] - Bm[1]) < 1e-2
        assert abs(Bp[2] - Bm[2]) < 1e-2

    def test_orthogonal_to_A(self, profile_half):
        A, B = profile_half.A_plus, profile_half.B_plus
        assert abs(A @ B.real) < 1e-2
        assert abs(A @ B.imag) < 1e-2


class TestAsymptoticRemainders:
    def test_tangent_remainder_scaled_by_s2(self, profile_half):
        prof = profile_half
        s = prof.grid.x
        b = prof.frame.N.imag
        sel = s > prof.grid.x_max / 10
        rem = prof.frame.T[sel] - prof.A_plus + (2 * prof.a / s[sel])[:, None] * b[sel]
        scaled = np.linalg.norm(rem, axis=1) * s[sel] ** 2
        assert np.all(np.isfinite(scaled))
        assert scaled.max() <= 4.0 * max(np.median(scaled), 1e-3)

    def test_profile_remainder_scaled_by_s2(self, profile_half):
        prof = profile_half
        s = prof.grid.x
        sel = s > prof.grid.x_max / 10
        model = (s[sel] + 2 * prof.a**2 / s[sel])[:, None] * prof.A_plus
        rem = prof.profile.points[sel] - model
        scaled = np.linalg.norm(rem, axis=1) * s[sel] ** 2
        assert np.all(np.isfinite(scaled))
        assert scaled.max() <= 4.0 * max(np.median(scaled), 1e-3)

    def test_profile_normal_correction_improves_fit(self, profile_half):
        # the -(4a/s^2) n term carries the next order: subtracting it must
        # shrink the window-averaged remainder in every dyadic outer window
        # (the pointwise s^3-scaled remainder oscillates, so we average)
        prof = profile_half
        s = prof.grid.x
        L = prof.grid.x_max
        n = prof.frame.N.real
        R = prof.profile.points - (s + 2 * prof.a**2 / s)[:, None] * prof.A_plus
        rho = R + (4 * prof.a / s**2)[:, None] * n
        for k in range(3):
            w = (s > L / 2 ** (k + 1)) & (s <= L / 2**k)
            assert (np.linalg.norm(rho[w], axis=1).mean()
                    < np.linalg.norm(R[w], axis=1).mean())

    def test_normal_remainder_scaled_by_s(self, profile_half):
        prof = profile_half
        s = prof.grid.x
        sel = s > prof.grid.x_max / 10
        phase = np.exp(1j * (s[sel] ** 2 / 4 + prof.a**2 * np.log(np.abs(s[sel]))))
        model = np.conj(prof.B_plus)[None, :] * phase[:, None]
        rem = np.conj(prof.frame.N[sel]) - model
        scaled = np.linalg.norm(rem, axis=1) * np.abs(s[sel])
        assert np.all(np.isfinite(scaled))
        assert scaled.max() <= 4.0 * max(np.median(scaled), 1e-3)


class TestEvaluate:
    def test_t_equals_one_returns_profile(self, profile_half):
        x = np.array([-3.0, -1.0, 0.5, 2.0])
        vals = evaluate_selfsimilar(profile_half, 1.0, x)
        assert np.allclose(vals, profile_half.profile.evaluate(x), atol=1e-12)

    def test_t_zero_gives_rays(self, profile_half):
        assert np.allclose(evaluate_selfsimilar(profile_half, 0.0, 1.0),
                           profile_half.A_plus)
        assert np.allclose(evaluate_selfsimilar(profile_half, 0.0, -2.0),
                           -2.0 * profile_half.A_minus)

    @pytest.mark.parametrize("t", [0.01, 0.04, 0.25])
    def test_corner_formation_rate(self, profile_half, t):
        # sup_x |chi(t,x) - chi(0,x)| <= 2 a sqrt(t), with equality at x=0
        # where chi(t,0) = 2 a sqrt(t) e3; the sharp constant is 2a.
        prof = profile_half
        L = prof.grid.x_max
        x = np.linspace(-0.98 * L * np.sqrt(t), 0.98 * L * np.sqrt(t), 4001)
        diff = evaluate_selfsimilar(prof, t, x) - evaluate_selfsimilar(prof, 0.0, x)
        sup = np.max(np.linalg.norm(diff, axis=1))
        assert sup <= 2.0 * prof.a * np.sqrt(t) * (1 + 1e-6)
        assert sup >= 1.9 * prof.a * np.sqrt(t)

    def test_out_of_range_rejected(self, profile_half):
        with pytest.raises(ValidationError):
            evaluate_selfsimilar(profile_half, 1e-6, 30.0)


class TestOriginTrajectory:
    def test_zero_time(self, profile_half):
        assert np.allclose(origin_trajectory(profile_half, 0.0), 0.0)

    def test_positive_time(self, profile_half):
        assert np.allclose(origin_trajectory(profile_half, 4.0), [0, 0, 2.0])

    def test_negative_time_matches_explicit_rotation(self, profile_half):
        u = profile_half.A_plus - profile_half.A_minus
        u = u / np.linalg.norm(u)
        R = 2 * np.outer(u, u) - np.eye(3)  # rotation by pi about u
        expected = 2 * 0.5 * 2.0 * (R @ [0, 0, 1.0])
        assert np.allclose(origin_trajectory(profile_half, -4.0), expected, atol=1e-12)
