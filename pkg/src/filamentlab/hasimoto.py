"""Filament function, pseudo-conformal transform, and curve reconstruction.

The filament function psi = c e^{i int_0^x tau} turns the binormal flow into
a cubic Schrodinger equation; the pseudo-conformal transform

    psi(t, x) = e^{i x^2/4t} / sqrt(t) * conj(v)(1/t, x/t)

exchanges the singular time t=0 with infinite time for the transformed field
v.  Reconstruction goes back from a filament function to a curve through the
parallel-frame system (never Frenet, which needs non-vanishing curvature).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .geometry import (
    FrameField,
    Grid1D,
    SampledCurve,
    curve_from_tangent,
    parallel_integrate,
    save_json,
)

__all__ = [
    "FilamentField",
    "filament_function",
    "torsion_phase",
    "pseudo_conformal",
    "nls_residual",
    "reconstruct_curve",
    "selfsimilar_filament",
    "save_filament_csv",
]


@dataclass(frozen=True)
class FilamentField:
    """Complex scalar field on a 1-d grid at a fixed time.

    kind is one of "psi" (filament function of a curve), "v" (pseudo-conformal
    companion) or "u" (perturbation, v = a + u).  metadata records choices
    such as the A(t) normalization of the governing equation.
    """

    grid: Grid1D
    values: np.ndarray
    time: float
    kind: str = "psi"
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=complex)
        if vals.shape != (self.grid.n_nodes,):
            raise ValidationError("values must be a node field on the grid")
        if not np.all(np.isfinite(vals)):
            raise ValidationError("filament field values must be finite")
        if self.kind not in ("psi", "v", "u"):
            raise ValidationError(f"unknown field kind {self.kind!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def interpolate(self, x):
        """Cubic interpolation at arbitrary coordinates inside the grid."""
        x = np.asarray(x, dtype=float)
        g = self.grid
        if np.any(x < g.x[0]) or np.any(x > g.x[-1]):
            raise ValidationError("requested coordinates outside the field grid")
        re = CubicSpline(g.x, self.values.real)
        im = CubicSpline(g.x, self.values.imag)
        return re(x) + 1j * im(x)


def torsion_phase(tau, grid: Grid1D) -> np.ndarray:
    """int_0^x tau by cumulative trapezoid, started from the staggered
    node pair bracketing x=0 (tau at 0 is the mean of the two)."""
    tau = np.asarray(tau, dtype=float)
    x = grid.x
    pos = x > 0
    neg = ~pos
    theta = np.empty(grid.n_nodes)
    h = grid.h
    tau0 = 0.5 * (tau[pos][0] + tau[neg][-1]) if np.any(pos) and np.any(neg) else 0.0

    if np.any(pos):
        tp = tau[pos]
        xp = x[pos]
        seg = np.concatenate(([0.5 * (tau0 + tp[0]) * xp[0]],
                              0.5 * (tp[:-1] + tp[1:]) * h))
        theta[pos] = np.cumsum(seg)
    if np.any(neg):
        tn = tau[neg][::-1]
        xn = x[neg][::-1]
        seg = np.concatenate(([0.5 * (tau0 + tn[0]) * xn[0]],
                              -0.5 * (tn[:-1] + tn[1:]) * h))
        theta[neg] = np.cumsum(seg)[::-1]
    return theta


def filament_function(c, tau, grid: Grid1D, time: float = 1.0,
                      metadata: dict | None = None) -> FilamentField:
    """psi = c e^{i int_0^x tau} on the grid."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0):
        raise ValidationError("curvature must be nonnegative")
    theta = torsion_phase(tau, grid)
    return FilamentField(grid, c * np.exp(1j * theta), time, "psi",
                         dict(metadata or {}))


def selfsimilar_filament(a: float, t: float, grid: Grid1D) -> FilamentField:
    """psi_a(t, x) = a e^{i x^2/4t} / sqrt(t), the self-similar filament
    function, with A(t) = a^2/t recorded in metadata."""
    if t <= 0:
        raise ValidationError("t must be positive")
    vals = a * np.exp(1j * grid.x**2 / (4.0 * t)) / np.sqrt(t)
    return FilamentField(grid, vals, t, "psi", {"A": "a^2/t", "a": a})


def pseudo_conformal(v: FilamentField, t: float, grid_out: Grid1D | None = None,
                     out_kind: str | None = None) -> FilamentField:
    """Pseudo-conformal transform: psi(t,x) = e^{ix^2/4t}/sqrt(t) conj(v)(1/t, x/t).

    The input field must live at time 1/t.  With the default output grid
    (the input grid scaled by t) the map is an exact involution: applying it
    again with target time 1/t returns the original samples.
    """
    if t <= 0:
        raise ValidationError("t must be positive")
    if not np.isclose(v.time, 1.0 / t, rtol=1e-9, atol=0):
        raise ValidationError(
            f"input field is at time {v.time}, expected 1/t = {1.0 / t}")
    if grid_out is None:
        grid_out = Grid1D(v.grid.x * t, periodic=v.grid.periodic)
        inner = v.values
    else:
        y = grid_out.x / t
        if np.any(y < v.grid.x[0]) or np.any(y > v.grid.x[-1]):
            raise ValidationError("x/t falls outside the input field grid")
        inner = v.interpolate(y)
    phase = np.exp(1j * grid_out.x**2 / (4.0 * t))
    vals = phase / np.sqrt(t) * np.conj(inner)
    if out_kind is None:
        out_kind = "psi" if v.kind in ("v", "u") else "v"
    return FilamentField(grid_out, vals, t, out_kind, dict(v.metadata))


def nls_residual(fields: list[FilamentField], A) -> np.ndarray:
    """Pointwise residual of i psi_t + psi_xx + (psi/2)(|psi|^2 - A(t)).

    fields are >= 3 slices equispaced in time on one grid; derivatives use
    centered differences (2nd order in t and x).  Returns the complex
    residual on (interior times) x (interior nodes).
    """
    if len(fields) < 3:
        raise ValidationError("need at least 3 consecutive time slices")
    grid = fields[0].grid
    times = np.array([f.time for f in fields])
    dts = np.diff(times)
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValidationError("time slices must be equispaced")
    for f in fields:
        if f.grid != grid:
            raise ValidationError("all slices must share one grid")
    dt = dts[0]
    h = grid.h
    vals = np.stack([f.values for f in fields])
    psi_t = (vals[2:, 1:-1] - vals[:-2, 1:-1]) / (2.0 * dt)
    mid = vals[1:-1]
    psi_xx = (mid[:, 2:] - 2.0 * mid[:, 1:-1] + mid[:, :-2]) / h**2
    At = np.array([A(t) for t in times[1:-1]])[:, None]
    core = mid[:, 1:-1]
    return 1j * psi_t + psi_xx + 0.5 * core * (np.abs(core) ** 2 - At)


def reconstruct_curve(psi: FilamentField, anchor_frame, anchor_point,
                      anchor: float = 0.0) -> tuple[SampledCurve, FrameField]:
    """Curve and parallel frame with filament function psi.

    anchor_frame is (T0, N0) at the anchor coordinate; the curve passes
    through anchor_point there.  Reconstruction always goes through the
    parallel (T, N) system so vanishing curvature is harmless.
    """
    frame = parallel_integrate(psi.values, psi.grid, anchor_frame, anchor=anchor)
    curve = curve_from_tangent(frame.T, psi.grid, basepoint=anchor_point,
                               anchor=anchor)
    return curve, frame


def save_filament_csv(field: FilamentField, csv_path, json_path=None) -> None:
    """CSV columns x, Re, Im plus a JSON metadata sidecar {time, kind, grid}."""
    from .geometry import _write_table  # shared fixed-format writer

    _write_table(csv_path, ["x", "Re", "Im"],
                 [field.grid.x, field.values.real, field.values.imag])
    if json_path is not None:
        save_json({
            "time": field.time,
            "kind": field.kind,
            "grid": {"x_min": field.grid.x_min, "x_max": field.grid.x_max,
                     "n_nodes": field.grid.n_nodes, "periodic": field.grid.periodic},
            "metadata": field.metadata,
        }, json_path)
