"""The one-parameter family of self-similar binormal-flow solutions.

For each a > 0 there is a unique solution chi_a(t,x) = sqrt(t) G_a(x/sqrt(t))
whose Frenet frame at x=0 is the canonical basis; its curvature and torsion
are a/sqrt(t) and x/2t.  At t=0 the curve degenerates to two rays A^+ x and
A^- x meeting at a corner whose half-angle satisfies
sin(theta/2) = exp(-pi a^2 / 2).

This module builds the profile G_a on an arclength grid, extracts the
asymptotic corner directions A^+- and complex normal limits B^+-, and
evaluates chi_a at arbitrary (t, x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ValidationError
from .geometry import (
    FrameField,
    Grid1D,
    SampledCurve,
    curve_from_tangent,
    frenet_integrate,
    rotation_about_axis,
)

__all__ = [
    "SelfSimilarProfile",
    "build_profile",
    "extract_A",
    "extract_B",
    "evaluate_selfsimilar",
    "origin_trajectory",
    "corner_half_angle_sin",
]


def corner_half_angle_sin(a: float) -> float:
    """sin of the corner half-angle, exp(-pi a^2 / 2)."""
    return float(np.exp(-np.pi * a * a / 2.0))


@dataclass(frozen=True)
class SelfSimilarProfile:
    """Profile G_a with extracted asymptotic data.

    The frame is stored in the Frenet convention (N = n + i b) on the s-grid;
    B^+- follow the t=1 limit convention
    B = lim (n+ib)(1,s) e^{i s^2/4} e^{i a^2 log|s|},
    recorded in ``b_convention``.
    """

    a: float
    profile: SampledCurve
    frame: FrameField
    A_plus: np.ndarray
    A_minus: np.ndarray
    B_plus: np.ndarray
    B_minus: np.ndarray
    corner_angle: float
    residuals: dict = field(default_factory=dict)
    b_convention: str = "(n+ib) e^{i int tau} e^{i a^2 log|x|} at t=1"

    @property
    def grid(self) -> Grid1D:
        return self.profile.grid

    def rotation_to_negative_times(self) -> np.ndarray:
        """Rotation by pi about A^+ - A^- (continues the family to t < 0)."""
        return rotation_about_axis(self.A_plus - self.A_minus, np.pi)


def _side_mask(s: np.ndarray, side: int, lo: float, hi: float) -> np.ndarray:
    if side > 0:
        return (s > lo) & (s <= hi)
    return (s < -lo) & (s >= -hi)


def extract_A(frame: FrameField, a: float, side: int) -> np.ndarray:
    """Corner direction A^+- from the far field of a self-similar frame.

    Uses the expansion T(s) = A - (2a/s) b(s) + O(1/s^2): the estimator
    T + (2a/s) b is averaged over three dyadic outer windows and Richardson
    extrapolated in the window scale (orders 2 then 3).  Frame must use the
    Frenet convention (b = Im N).
    """
    s = frame.grid.x
    L = float(np.max(np.abs(s)))
    if L < 20.0 * max(1.0, a):
        raise ValidationError("grid too short for asymptotic extraction "
                              f"(need |s| up to {20.0 * max(1.0, a)}, have {L})")
    estimator = frame.T + (2.0 * a / s)[:, None] * frame.N.imag
    means = []
    for k in range(3):
        sel = _side_mask(s, side, L / 2 ** (k + 1), L / 2 ** k)
        if not np.any(sel):
            raise ValidationError("empty extraction window")
        means.append(estimator[sel].mean(axis=0))
    m0, m1, m2 = means
    r0 = m0 + (m0 - m1) / 3.0
    r1 = m1 + (m1 - m2) / 3.0
    if np.linalg.norm(r0 - r1) > 1e-2:
        raise NumericalError(
            "corner-direction extrapolation not converged: successive "
            f"estimates differ by {np.linalg.norm(r0 - r1):.3e}")
    A = r0 + (r0 - r1) / 7.0
    return A / np.linalg.norm(A)


def extract_B(frame: FrameField, a: float, side: int, t: float = 1.0,
              window_fraction: float = 0.10) -> np.ndarray:
    """Complex normal limit B^+- of a self-similar frame at time t.

    Removes the oscillatory phase e^{i s^2/4t} e^{i a^2 log|s|} (and the
    e^{-i a^2 log sqrt(t)} factor for t != 1) from n + i b and averages over
    the outer fraction of nodes on the requested side.
    """
    s = frame.grid.x
    L = float(np.max(np.abs(s)))
    if L < 20.0 * max(1.0, a):
        raise ValidationError("grid too short for asymptotic extraction")
    phase = s * s / (4.0 * t) + a * a * np.log(np.abs(s)) - a * a * np.log(np.sqrt(t))
    values = frame.N * np.exp(1j * phase)[:, None]
    sel = _side_mask(s, side, (1.0 - window_fraction) * L, L)
    B = values[sel].mean(axis=0)
    oscillation = float(np.max(np.abs(values[sel] - B)))
    if oscillation > 1e-1:
        raise NumericalError(
            f"phase removal left residual oscillation {oscillation:.3e} > 1e-1")
    return B


def build_profile(a: float, L: float | None = None, h: float = 1e-3) -> SelfSimilarProfile:
    """Construct the self-similar profile for parameter a.

    The frame solves the Frenet system with c = a, tau(s) = s/2 and the
    canonical basis at s=0; the curve is G_a(s) = 2a e3 + int_0^s T.
    L defaults to 40 max(1, a); it must be at least 20 max(1, a) for the
    asymptotic extraction to converge.
    """
    if a <= 0:
        raise ValidationError("a must be positive")
    if L is None:
        L = 40.0 * max(1.0, a)
    if L < 20.0 * max(1.0, a):
        raise ValidationError(
            f"L = {L} too small for asymptotic extraction; need >= {20.0 * max(1.0, a)}")
    grid = Grid1D.staggered_symmetric(L, h)
    c = np.full(grid.n_nodes, a)
    tau = grid.x / 2.0
    frame = frenet_integrate(c, tau, np.eye(3), grid, anchor=0.0)
    curve = curve_from_tangent(frame.T, grid, basepoint=(0.0, 0.0, 2.0 * a), anchor=0.0)

    A_plus = extract_A(frame, a, +1)
    A_minus = extract_A(frame, a, -1)
    B_plus = extract_B(frame, a, +1)
    B_minus = extract_B(frame, a, -1)

    cos_angle = float(np.clip(np.dot(A_plus, -A_minus), -1.0, 1.0))
    corner_angle = float(np.arccos(cos_angle))

    target = corner_half_angle_sin(a)
    residuals = {
        "angle_law": abs(np.sin(corner_angle / 2.0) - target),
        "A1_identity": max(abs(A_plus[0] - target), abs(A_minus[0] - target)),
        "A_antisymmetry": float(max(abs(A_plus[1] + A_minus[1]),
                                    abs(A_plus[2] + A_minus[2]))),
        "B_sign_pattern": float(max(abs(B_plus[0] + B_minus[0]),
                                    abs(B_plus[1] - B_minus[1]),
                                    abs(B_plus[2] - B_minus[2]))),
        "B_unit_norms": float(max(abs(np.linalg.norm(B_plus.real) - 1.0),
                                  abs(np.linalg.norm(B_plus.imag) - 1.0),
                                  abs(np.linalg.norm(B_minus.real) - 1.0),
                                  abs(np.linalg.norm(B_minus.imag) - 1.0))),
        "A_perp_B": float(max(abs(np.dot(A_plus, B_plus.real)),
                              abs(np.dot(A_plus, B_plus.imag)),
                              abs(np.dot(A_minus, B_minus.real)),
                              abs(np.dot(A_minus, B_minus.imag)))),
        "ReB_dot_ImB": float(max(abs(np.dot(B_plus.real, B_plus.imag)),
                                 abs(np.dot(B_minus.real, B_minus.imag)))),
    }
    if residuals["A_perp_B"] > 1e-2 or residuals["B_unit_norms"] > 1e-2:
        raise NumericalError(f"extracted B vectors violate structure: {residuals}")

    return SelfSimilarProfile(
        a=a, profile=curve, frame=frame,
        A_plus=A_plus, A_minus=A_minus, B_plus=B_plus, B_minus=B_minus,
        corner_angle=corner_angle, residuals=residuals,
    )


def evaluate_selfsimilar(profile: SelfSimilarProfile, t: float, x) -> np.ndarray:
    """chi_a(t, x) = sqrt(t) G_a(x / sqrt(t)); at t=0 the two rays A^+- x.

    Negative times are served by the continuation module.
    """
    if t < 0:
        raise ValidationError("t must be >= 0 here; use the continuation module")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if t == 0.0:
        out = np.where((x >= 0)[:, None],
                       x[:, None] * profile.A_plus[None, :],
                       x[:, None] * profile.A_minus[None, :])
    else:
        s = x / np.sqrt(t)
        g = profile.grid
        if np.any(s < g.x_min) or np.any(s > g.x_max):
            raise ValidationError("x/sqrt(t) falls outside the profile grid")
        out = np.sqrt(t) * profile.profile.evaluate(s)
    return out[0] if scalar else out


def origin_trajectory(profile: SelfSimilarProfile, t: float) -> np.ndarray:
    """Trajectory of the corner point: two half-lines meeting at the origin.

    2a sqrt(t) e3 for t >= 0 and 2a sqrt(|t|) rho(e3) for t < 0, where rho
    is the rotation by pi about A^+ - A^-.
    """
    a = profile.a
    e3 = np.array([0.0, 0.0, 1.0])
    if t >= 0:
        return 2.0 * a * np.sqrt(t) * e3
    rho = profile.rotation_to_negative_times()
    return 2.0 * a * np.sqrt(-t) * (rho @ e3)
