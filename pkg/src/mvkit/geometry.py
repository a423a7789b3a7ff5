"""Homography algebra, pinhole calibration and ground-plane projection.

Coordinate conventions (used by every module in this package):

* Image coordinates are continuous, x = column and y = row, with pixel
  centers at integer positions and the origin at the center of the
  top-left pixel.  An ``w x h`` image therefore spans
  ``[0, w-1] x [0, h-1]``.
* The world frame is right-handed with the ground plane at z = 0,
  units are meters.
* Homographies are stored un-normalized (no division by m[2][2]);
  equality checks normalize first.  ``|det| > 1e-12`` is required for
  every matrix accepted by a constructor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateProjection, InvalidCalibration, PointAtInfinity, SingularMatrix

SINGULARITY_TOL = 1e-12


class Point2(NamedTuple):
    """A 2-D point; units (pixels, grid cells, meters) depend on context."""

    x: float
    y: float


def det3(m: np.ndarray) -> float:
    """Determinant of a 3x3 matrix by cofactor expansion along the last row.

    Used instead of ``np.linalg.det`` so that the determinant is, for
    affine matrices (last row 0,0,1), *exactly* the 2x2 minor that the
    adjugate-based inverse divides by.  That keeps ``invert`` exact on
    affine last rows.
    """
    c20 = m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]
    c21 = -(m[0, 0] * m[1, 2] - m[0, 2] * m[1, 0])
    c22 = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    return float(m[2, 0] * c20 + m[2, 1] * c21 + m[2, 2] * c22)


def _adjugate3(m: np.ndarray) -> np.ndarray:
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    return np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ],
        dtype=np.float64,
    )


@dataclass(frozen=True)
class Homography:
    """Invertible 3x3 matrix acting on homogeneous 2-D coordinates.

    Immutable after construction; the wrapped array is read-only.
    """

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("homography contains non-finite entries")
        if abs(det3(m)) <= SINGULARITY_TOL:
            raise SingularMatrix(f"|det| = {abs(det3(m)):.3e} <= {SINGULARITY_TOL}")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity() -> "Homography":
        return Homography(np.eye(3))

    def normalized(self) -> np.ndarray:
        """Canonical representative: m[2][2] = 1, or largest-|entry| = 1 when
        m[2][2] is negligible relative to the matrix scale."""
        m = self.m
        scale = m[2, 2]
        if abs(scale) <= 1e-12 * np.max(np.abs(m)):
            flat_idx = int(np.argmax(np.abs(m)))
            scale = m.flat[flat_idx]
        return m / scale

    def approx_equal(self, other: "Homography", tol: float = 1e-9) -> bool:
        return bool(np.max(np.abs(self.normalized() - other.normalized())) < tol)


def compose(a: Homography, b: Homography) -> Homography:
    """Matrix product ``a @ b``: apply b first, then a, as point maps."""
    return Homography(a.m @ b.m)


def invert(h: Homography) -> Homography:
    """Exact adjugate/determinant inverse.

    The adjugate is divided by the cofactor-expansion determinant, which
    keeps the last row of affine inverses exactly (0, 0, 1).
    """
    d = det3(h.m)
    if abs(d) <= SINGULARITY_TOL:
        raise SingularMatrix(f"|det| = {abs(d):.3e} <= {SINGULARITY_TOL}")
    return Homography(_adjugate3(h.m) / d)


def apply_point(h: Homography, p) -> Point2:
    """Map a point through the homography with homogeneous division."""
    x, y = float(p[0]), float(p[1])
    m = h.m
    w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
    if abs(w) < 1e-12:
        raise PointAtInfinity(f"point ({x}, {y}) maps to infinity (w = {w:.3e})")
    u = m[0, 0] * x + m[0, 1] * y + m[0, 2]
    v = m[1, 0] * x + m[1, 1] * y + m[1, 2]
    return Point2(float(u / w), float(v / w))


def apply_points(h: Homography, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized point mapping.

    Args:
        pts: (n, 2) array.

    Returns:
        (mapped (n, 2) array, (n,) bool array of points with |w| >= 1e-12).
        Rows with w below tolerance hold NaN.
    """
    pts = np.asarray(pts, dtype=np.float64)
    ph = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    q = ph @ h.m.T
    w = q[:, 2]
    finite = np.abs(w) >= 1e-12
    out = np.full((pts.shape[0], 2), np.nan)
    out[finite] = q[finite, :2] / w[finite, None]
    return out, finite


@dataclass(frozen=True)
class CameraCalibration:
    """Pinhole calibration: intrinsics K (pixels) and extrinsics R, t (meters).

    A world point p projects to pixel coordinates as K @ (R @ p + t).
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64)
        R = np.array(self.R, dtype=np.float64)
        t = np.array(self.t, dtype=np.float64).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise InvalidCalibration("K and R must be 3x3")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidCalibration("calibration contains non-finite values")
        if K[1, 0] != 0.0 or K[2, 0] != 0.0 or K[2, 1] != 0.0 or K[2, 2] != 1.0:
            raise InvalidCalibration("K must be upper-triangular with K[2][2] = 1")
        if K[0, 0] <= 0.0 or K[1, 1] <= 0.0:
            raise InvalidCalibration("focal entries must be positive")
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-9 or abs(det3(R) - 1.0) >= 1e-9:
            raise InvalidCalibration("R is not a rotation within 1e-9")
        for arr in (K, R, t):
            arr.setflags(write=False)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def center(self) -> np.ndarray:
        """Optical center in world coordinates: C = -R^T t."""
        return -self.R.T @ self.t

    def project(self, p_world) -> tuple[Point2, float]:
        """Full 3x4 pinhole projection of a 3-D world point.

        Returns (pixel, depth); depth <= 0 means behind the camera.
        """
        p = np.asarray(p_world, dtype=np.float64).reshape(3)
        cam = self.R @ p + self.t
        pix = self.K @ cam
        if abs(pix[2]) < 1e-12:
            raise PointAtInfinity("projected point at infinity")
        return Point2(pix[0] / pix[2], pix[1] / pix[2]), float(cam[2])


def ground_projection_matrix(c: CameraCalibration) -> Homography:
    """Homography mapping world ground coordinates (x, y, 1), z = 0, to pixels.

    Restriction of K [R | t] to the z = 0 plane: K @ [r1 r2 t] with r1, r2
    the first two columns of R.
    """
    m = c.K @ np.column_stack([c.R[:, 0], c.R[:, 1], c.t])
    if abs(det3(m)) <= SINGULARITY_TOL:
        raise DegenerateProjection(
            "ground projection is singular (camera in the ground plane or degenerate pose)"
        )
    return Homography(m)


def rodrigues_to_rotation(r) -> np.ndarray:
    """Axis-angle 3-vector (radians) to rotation matrix.

    R = I + sin(t) [k]_x + (1 - cos(t)) [k]_x^2 with t = |r|, k = r/t;
    identity for t < 1e-12.
    """
    r = np.asarray(r, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(r))
    if theta < 1e-12:
        return np.eye(3)
    k = r / theta
    kx = np.array(
        [
            [0.0, -k[2], k[1]],
            [k[2], 0.0, -k[0]],
            [-k[1], k[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


@dataclass(frozen=True)
class GroundGrid:
    """Discretization of the ground plane into square cells.

    ``origin`` is the world (x, y) of the *center* of cell (0, 0); cell
    coordinates are (col, row) so that grid x runs along world x.
    """

    rows: int
    cols: int
    cell_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        if not (self.cell_size > 0.0 and np.isfinite(self.cell_size)):
            raise ValueError("cell_size must be positive and finite")

    def grid_to_ground(self, cell) -> Point2:
        """Cell (col, row) -> world meters."""
        return Point2(
            self.origin[0] + float(cell[0]) * self.cell_size,
            self.origin[1] + float(cell[1]) * self.cell_size,
        )

    def ground_to_grid(self, p) -> Point2:
        """World meters -> continuous cell (col, row)."""
        return Point2(
            (float(p[0]) - self.origin[0]) / self.cell_size,
            (float(p[1]) - self.origin[1]) / self.cell_size,
        )

    def contains_cell(self, cell) -> bool:
        return 0.0 <= cell[0] <= self.cols - 1 and 0.0 <= cell[1] <= self.rows - 1

    def extent_m(self) -> tuple[float, float]:
        return self.cols * self.cell_size, self.rows * self.cell_size


def grid_homography(g: GroundGrid) -> Homography:
    """Affine homography taking grid cells (col, row, 1) to world meters.

    ``compose(ground_projection_matrix(c), grid_homography(g))`` is the
    grid-to-pixel projection used by all warping.
    """
    return Homography(
        np.array(
            [
                [g.cell_size, 0.0, g.origin[0]],
                [0.0, g.cell_size, g.origin[1]],
                [0.0, 0.0, 1.0],
            ]
        )
    )
