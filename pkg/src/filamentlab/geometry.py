"""Discrete curves, orthonormal frames and frame-ODE integrators.

Everything downstream (self-similar profiles, Hasimoto reconstruction, flow
trajectories, trace construction) is built on the four types defined here:

* ``Grid1D`` -- uniform 1-d arclength grid, optionally staggered so x=0 is
  never a node (several phase factors are only defined for x != 0).
* ``SampledCurve`` -- arclength-parametrized polyline in R^3.
* ``FrameField`` -- per-node orthonormal frame (T, Re N, Im N) with complex
  normal N.  The Frenet flavour stores N = n + i b; the parallel flavour
  stores N = (n + i b) e^{i int tau}.
* ``RigidMotion`` -- proper rotation plus translation, used for alignment
  and uniqueness-up-to-rigid-motion tests.

All types are immutable after construction and every operation is pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import DataIOError, ValidationError

__all__ = [
    "Grid1D",
    "SampledCurve",
    "FrameField",
    "RigidMotion",
    "AlignResult",
    "frenet_integrate",
    "parallel_integrate",
    "curve_from_tangent",
    "tangent_of_curve",
    "align",
    "rotation_about_axis",
    "frame_phase_rotate",
    "save_curve_csv",
    "load_curve_csv",
    "save_frame_csv",
    "load_frame_csv",
    "curve_to_dict",
    "curve_from_dict",
    "frame_to_dict",
    "frame_from_dict",
]

_ORTHO_TOL = 1e-8


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class Grid1D:
    """Uniform 1-d grid given by its node coordinates."""

    x: np.ndarray
    periodic: bool = False

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if x.ndim != 1 or x.size < 3:
            raise ValidationError("grid needs at least 3 nodes")
        dx = np.diff(x)
        if not np.all(dx > 0):
            raise ValidationError("grid nodes must be strictly increasing")
        dxm = float(dx.mean())
        atol = 1e-8 * abs(dxm) + 1e-13 * float(np.max(np.abs(x)))
        if not np.allclose(dx, dxm, rtol=0.0, atol=atol):
            raise ValidationError("grid spacing must be uniform")
        x.setflags(write=False)

    @classmethod
    def regular(cls, x_min: float, x_max: float, n_nodes: int) -> "Grid1D":
        """n_nodes nodes including both endpoints."""
        return cls(np.linspace(x_min, x_max, n_nodes))

    @classmethod
    def staggered(cls, x_min: float, x_max: float, h: float) -> "Grid1D":
        """Nodes at x_min + (i + 1/2) h.  With an even node count over a
        symmetric interval, x=0 is excluded."""
        n = int(round((x_max - x_min) / h))
        if n < 3:
            raise ValidationError("staggered grid needs at least 3 nodes")
        return cls(x_min + (np.arange(n) + 0.5) * h)

    @classmethod
    def staggered_symmetric(cls, half_width: float, h: float) -> "Grid1D":
        """Symmetric staggered grid on [-L, L] excluding x=0."""
        n_half = int(round(half_width / h))
        if n_half < 2:
            raise ValidationError("half_width/h must be at least 2")
        grid = cls.staggered(-n_half * h, n_half * h, h)
        return grid

    @classmethod
    def periodic_grid(cls, x_min: float, x_max: float, n_nodes: int) -> "Grid1D":
        """Periodic grid: n_nodes nodes, x_max identified with x_min."""
        h = (x_max - x_min) / n_nodes
        return cls(x_min + h * np.arange(n_nodes), periodic=True)

    @property
    def n_nodes(self) -> int:
        return self.x.size

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def x_min(self) -> float:
        return float(self.x[0])

    @property
    def x_max(self) -> float:
        if self.periodic:
            return float(self.x[-1] + self.h)
        return float(self.x[-1])

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    def index_nearest(self, x0: float) -> int:
        return int(np.argmin(np.abs(self.x - x0)))

    def __eq__(self, other):
        if not isinstance(other, Grid1D):
            return NotImplemented
        return (
            self.periodic == other.periodic
            and self.x.shape == other.x.shape
            and np.array_equal(self.x, other.x)
        )


# ---------------------------------------------------------------------------
# curves and frames


@dataclass(frozen=True)
class SampledCurve:
    """Arclength-parametrized polyline: one 3-vector per grid node."""

    grid: Grid1D
    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.shape != (self.grid.n_nodes, 3):
            raise ValidationError("points must have shape (n_nodes, 3)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def chord_lengths(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    def arclength_defect(self) -> float:
        """Max relative deviation of chords from the grid spacing."""
        return float(np.max(np.abs(self.chord_lengths() / self.grid.h - 1.0)))

    def evaluate(self, x):
        """Linear interpolation of the polyline at arbitrary coordinates."""
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape + (3,))
        for k in range(3):
            out[..., k] = np.interp(x, self.grid.x, self.points[:, k])
        return out


@dataclass(frozen=True)
class FrameField:
    """Per-node orthonormal frame: unit tangent T and complex normal N.

    Re N and Im N are unit vectors orthogonal to T and to each other, so
    (T, Re N, Im N) is a positively oriented orthonormal triple when the
    field was produced by one of the integrators below.
    """

    grid: Grid1D
    T: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        T = np.ascontiguousarray(self.T, dtype=float)
        N = np.ascontiguousarray(self.N, dtype=complex)
        n = self.grid.n_nodes
        if T.shape != (n, 3) or N.shape != (n, 3):
            raise ValidationError("T and N must have shape (n_nodes, 3)")
        T.setflags(write=False)
        N.setflags(write=False)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "N", N)

    @property
    def re_n(self) -> np.ndarray:
        return self.N.real

    @property
    def im_n(self) -> np.ndarray:
        return self.N.imag

    def orthonormality_defect(self) -> float:
        """Largest deviation from orthonormality over all nodes."""
        T, n1, n2 = self.T, self.N.real, self.N.imag
        defects = [
            np.abs(np.einsum("ij,ij->i", T, T) - 1.0),
            np.abs(np.einsum("ij,ij->i", n1, n1) - 1.0),
            np.abs(np.einsum("ij,ij->i", n2, n2) - 1.0),
            np.abs(np.einsum("ij,ij->i", T, n1)),
            np.abs(np.einsum("ij,ij->i", T, n2)),
            np.abs(np.einsum("ij,ij->i", n1, n2)),
        ]
        return float(np.max(defects))

    def matrices(self) -> np.ndarray:
        """(n, 3, 3) array of frame matrices with rows (T, Re N, Im N)."""
        return np.stack([self.T, self.N.real, self.N.imag], axis=1)


def frame_phase_rotate(frame: FrameField, phase: np.ndarray) -> FrameField:
    """Rotate the complex normal by a per-node phase: N -> N e^{i phase}."""
    phase = np.asarray(phase, dtype=float)
    return FrameField(frame.grid, frame.T, frame.N * np.exp(1j * phase)[:, None])


# ---------------------------------------------------------------------------
# rigid motions


@dataclass(frozen=True)
class RigidMotion:
    """Proper rotation plus translation, p -> R p + t."""

    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValidationError("rotation must be 3x3, translation a 3-vector")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-10:
            raise ValidationError("rotation matrix is not orthogonal to 1e-10")
        if np.linalg.det(R) < 0:
            raise ValidationError("rotation must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    def apply_vectors(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate direction vectors (no translation)."""
        return np.asarray(vectors) @ self.rotation.T

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """self after other: x -> self(other(x))."""
        return RigidMotion(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


def rotation_about_axis(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    u = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(u)
    if norm == 0:
        raise ValidationError("rotation axis must be nonzero")
    u = u / norm
    K = np.array([[0, -u[2], u[1]], [u[2], 0, -u[0]], [-u[1], u[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)


# ---------------------------------------------------------------------------
# frame ODE integration


def _check_anchor_frame(M0: np.ndarray) -> np.ndarray:
    M0 = np.asarray(M0, dtype=float)
    if M0.shape != (3, 3):
        raise ValidationError("anchor frame must be a 3x3 matrix (rows T, n, b)")
    if np.max(np.abs(M0 @ M0.T - np.eye(3))) > _ORTHO_TOL:
        raise ValidationError("anchor frame is not orthonormal")
    return M0


def _mgs(M: np.ndarray) -> None:
    """In-place modified Gram-Schmidt on the rows of a 3x3 matrix."""
    r0, r1, r2 = M
    r0 /= np.sqrt(r0 @ r0)
    r1 -= (r1 @ r0) * r0
    r1 /= np.sqrt(r1 @ r1)
    r2 -= (r2 @ r0) * r0
    r2 -= (r2 @ r1) * r1
    r2 /= np.sqrt(r2 @ r2)


def _march_frames(M0, s_points, om_nodes, om_mids):
    """RK4 march of M' = Omega(s) M along s_points, reorthonormalizing each step.

    s_points are strictly monotone (either direction); om_nodes[j] is the
    generator at s_points[j], om_mids[j] at the interval midpoint.
    Returns the (len(s_points), 3, 3) array of frames.
    """
    m = len(s_points) - 1
    out = np.empty((m + 1, 3, 3))
    out[0] = M0
    M = M0.copy()
    for j in range(m):
        h = s_points[j + 1] - s_points[j]
        A0 = om_nodes[j]
        Am = om_mids[j]
        A1 = om_nodes[j + 1]
        K1 = A0 @ M
        K2 = Am @ (M + (0.5 * h) * K1)
        K3 = Am @ (M + (0.5 * h) * K2)
        K4 = A1 @ (M + h * K3)
        M = M + (h / 6.0) * (K1 + 2.0 * (K2 + K3) + K4)
        _mgs(M)
        out[j + 1] = M
    return out


def _bidirectional_points(grid: Grid1D, anchor: float):
    """Split the grid at the anchor coordinate for outward marches."""
    x = grid.x
    right = x[x > anchor]
    left = x[x <= anchor][::-1]
    s_right = np.concatenate(([anchor], right))
    s_left = np.concatenate(([anchor], left))
    return s_left, s_right


def _frenet_generators(c_vals, tau_vals):
    m = len(c_vals)
    om = np.zeros((m, 3, 3))
    om[:, 0, 1] = c_vals
    om[:, 1, 0] = -c_vals
    om[:, 1, 2] = tau_vals
    om[:, 2, 1] = -tau_vals
    return om


def _parallel_generators(psi_vals):
    m = len(psi_vals)
    om = np.zeros((m, 3, 3))
    re, im = psi_vals.real, psi_vals.imag
    om[:, 0, 1] = re
    om[:, 0, 2] = im
    om[:, 1, 0] = -re
    om[:, 2, 0] = -im
    return om


def _integrate_both_sides(grid, anchor, M0, build_om, value_at):
    """Common driver: march outward from the anchor on both sides.

    build_om maps sampled field values to (m,3,3) generators; value_at
    evaluates the field(s) at arbitrary coordinates (spline-backed).
    """
    s_left, s_right = _bidirectional_points(grid, anchor)
    frames = np.empty((grid.n_nodes, 3, 3))
    for s_pts in (s_left, s_right):
        if len(s_pts) < 2:
            continue
        mids = 0.5 * (s_pts[:-1] + s_pts[1:])
        om_nodes = build_om(value_at(s_pts))
        om_mids = build_om(value_at(mids))
        marched = _march_frames(M0, s_pts, om_nodes, om_mids)
        # s_pts[1:] are grid nodes; map back to grid indices
        if s_pts[1] > s_pts[0]:
            idx = np.searchsorted(grid.x, s_pts[1:] - 0.25 * grid.h)
        else:
            idx = np.searchsorted(grid.x, s_pts[1:] - 0.25 * grid.h)
        frames[idx] = marched[1:]
    return frames


def frenet_integrate(c, tau, frame0, grid: Grid1D, anchor: float = 0.0) -> FrameField:
    """Integrate the Frenet system T' = c n, n' = -c T + tau b, b' = -tau n.

    Parameters
    ----------
    c, tau : arrays on the grid nodes (curvature and torsion fields).
    frame0 : 3x3 orthonormal matrix with rows (T, n, b) at the anchor
        coordinate (which need not be a grid node; the staggered grids
        exclude x=0 while frames are anchored there).
    grid : the arclength grid.
    anchor : coordinate where frame0 is prescribed.

    Returns a FrameField with N = n + i b (zero phase convention).
    """
    c = np.asarray(c, dtype=float)
    tau = np.asarray(tau, dtype=float)
    if c.shape != (grid.n_nodes,) or tau.shape != (grid.n_nodes,):
        raise ValidationError("c and tau must be node fields on the grid")
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(tau))):
        raise ValidationError("c and tau must be finite")
    M0 = _check_anchor_frame(frame0)

    c_sp = CubicSpline(grid.x, c)
    tau_sp = CubicSpline(grid.x, tau)

    def value_at(s):
        return np.stack([c_sp(s), tau_sp(s)], axis=-1)

    def build_om(vals):
        return _frenet_generators(vals[..., 0], vals[..., 1])

    frames = _integrate_both_sides(grid, anchor, M0, build_om, value_at)
    T = frames[:, 0, :]
    N = frames[:, 1, :] + 1j * frames[:, 2, :]
    return FrameField(grid, T, N)


def parallel_integrate(psi, grid: Grid1D, anchor_frame, anchor: float = 0.0) -> FrameField:
    """Integrate the parallel-frame system T' = Re(conj(psi) N), N' = -psi T.

    psi is a complex node field (a filament function restricted to one time
    slice).  anchor_frame is (T0, N0) with T0 a unit 3-vector and N0 a
    complex 3-vector whose real and imaginary parts complete T0 to an
    orthonormal triple.
    """
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (grid.n_nodes,):
        raise ValidationError("psi must be a node field on the grid")
    if not np.all(np.isfinite(psi)):
        raise ValidationError("psi must be finite")
    T0, N0 = anchor_frame
    M0 = _check_anchor_frame(
        np.stack([np.asarray(T0, float), np.real(N0), np.imag(N0)])
    )

    re_sp = CubicSpline(grid.x, psi.real)
    im_sp = CubicSpline(grid.x, psi.imag)

    def value_at(s):
        return re_sp(s) + 1j * im_sp(s)

    frames = _integrate_both_sides(grid, anchor, M0, _parallel_generators, value_at)
    T = frames[:, 0, :]
    N = frames[:, 1, :] + 1j * frames[:, 2, :]
    return FrameField(grid, T, N)


# ---------------------------------------------------------------------------
# curve reconstruction and alignment


def curve_from_tangent(T, grid: Grid1D, basepoint=(0.0, 0.0, 0.0), anchor: float = 0.0) -> SampledCurve:
    """Cumulative 4th-order quadrature of a unit tangent field.

    The integral of the tangent spline is pinned so the curve passes through
    ``basepoint`` at the anchor coordinate.
    """
    T = np.asarray(T, dtype=float)
    if T.shape != (grid.n_nodes, 3):
        raise ValidationError("T must have shape (n_nodes, 3)")
    norms = np.linalg.norm(T, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-6:
        raise ValidationError("tangent field must consist of unit vectors")
    sp = CubicSpline(grid.x, T, axis=0)
    anti = sp.antiderivative()
    pts = anti(grid.x) - anti(anchor) + np.asarray(basepoint, dtype=float)
    return SampledCurve(grid, pts)


def tangent_of_curve(curve: SampledCurve) -> np.ndarray:
    """Spline derivative of the curve points (4th-order on smooth samples)."""
    sp = CubicSpline(curve.grid.x, curve.points, axis=0)
    return sp(curve.grid.x, 1)


@dataclass(frozen=True)
class AlignResult:
    motion: RigidMotion
    rms: float
    degenerate: bool


def align(curve_a: SampledCurve, curve_b: SampledCurve) -> AlignResult:
    """Orthogonal-Procrustes best fit mapping curve_a onto curve_b.

    Returns the rigid motion minimizing mean squared point distance, the
    residual RMS, and a degeneracy flag set when the points are (close to)
    collinear so the rotation is not unique.
    """
    if curve_a.grid.n_nodes != curve_b.grid.n_nodes:
        raise ValidationError("curves must share a grid to be aligned")
    A = curve_a.points
    B = curve_b.points
    ca = A.mean(axis=0)
    cb = B.mean(axis=0)
    H = (A - ca).T @ (B - cb)
    U, S, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    t = cb - R @ ca
    degenerate = bool(S[0] > 0 and S[1] < 1e-9 * S[0])
    motion = RigidMotion(R, t)
    rms = float(np.sqrt(np.mean(np.sum((motion.apply(A) - B) ** 2, axis=1))))
    return AlignResult(motion, rms, degenerate)


# ---------------------------------------------------------------------------
# serialization: CSV and JSON with bit-exact round trips

_FMT = "%.17g"


def _write_table(path, header, columns):
    try:
        with open(path, "w") as fh:
            fh.write("# " + ",".join(header) + "\n")
            for row in zip(*columns):
                fh.write(",".join(_FMT % v for v in row) + "\n")
    except OSError as exc:
        raise DataIOError(str(exc)) from exc


def _read_table(path, n_cols):
    try:
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    except OSError as exc:
        raise DataIOError(str(exc)) from exc
    if data.shape[1] != n_cols:
        raise ValidationError(f"expected {n_cols} columns in {path}")
    return data


def save_curve_csv(curve: SampledCurve, path) -> None:
    p = curve.points
    _write_table(path, ["x", "px", "py", "pz"], [curve.grid.x, p[:, 0], p[:, 1], p[:, 2]])


def load_curve_csv(path) -> SampledCurve:
    data = _read_table(path, 4)
    return SampledCurve(Grid1D(data[:, 0]), data[:, 1:4])


def save_frame_csv(frame: FrameField, path) -> None:
    cols = [frame.grid.x]
    header = ["x", "Tx", "Ty", "Tz", "ReNx", "ReNy", "ReNz", "ImNx", "ImNy", "ImNz"]
    for k in range(3):
        cols.append(frame.T[:, k])
    for k in range(3):
        cols.append(frame.N.real[:, k])
    for k in range(3):
        cols.append(frame.N.imag[:, k])
    _write_table(path, header, cols)


def load_frame_csv(path) -> FrameField:
    data = _read_table(path, 10)
    T = data[:, 1:4]
    N = data[:, 4:7] + 1j * data[:, 7:10]
    return FrameField(Grid1D(data[:, 0]), T, N)


def curve_to_dict(curve: SampledCurve) -> dict:
    return {
        "kind": "curve",
        "x": curve.grid.x.tolist(),
        "periodic": curve.grid.periodic,
        "points": curve.points.tolist(),
    }


def curve_from_dict(d: dict) -> SampledCurve:
    return SampledCurve(Grid1D(np.array(d["x"]), periodic=d.get("periodic", False)),
                        np.array(d["points"]))


def frame_to_dict(frame: FrameField) -> dict:
    return {
        "kind": "frame",
        "x": frame.grid.x.tolist(),
        "periodic": frame.grid.periodic,
        "T": frame.T.tolist(),
        "ReN": frame.N.real.tolist(),
        "ImN": frame.N.imag.tolist(),
    }


def frame_from_dict(d: dict) -> FrameField:
    grid = Grid1D(np.array(d["x"]), periodic=d.get("periodic", False))
    N = np.array(d["ReN"]) + 1j * np.array(d["ImN"])
    return FrameField(grid, np.array(d["T"]), N)


def save_json(obj: dict, path) -> None:
    try:
        with open(path, "w") as fh:
            json.dump(obj, fh)
    except OSError as exc:
        raise DataIOError(str(exc)) from exc


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise DataIOError(str(exc)) from exc
