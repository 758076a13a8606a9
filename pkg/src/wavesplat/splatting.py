"""Projection of ellipsoids onto virtual planes and path-set selection.

A projection plane is defined by a unit normal and an anchor point; splatting
is a parallel projection: rows of W = [basis1; basis2; normal] map world
offsets into (in-plane x, in-plane y, depth). Planes are anchored at the
start of the path segment they serve, so projected depths grow from zero at
the source to the segment length at the far end:

* Tx-side plane of a scatterer: anchor Tx, normal toward the scatterer -
  the scatterer's own depth is the Tx-scatterer distance;
* Rx-side (AOA) plane: anchor Rx, normal along the sampled ray;
* direct-path plane: anchor Tx, normal toward Rx.

Because the projection is parallel, sliding along the normal changes only
depth, never the in-plane Gaussian, so the anchor choice does not affect any
density value. The in-plane query point is always the plane origin: the
segment axis passes through the anchor along the normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .core import (
    DegenerateGeometryError,
    GaussianEllipsoid,
    Scene,
    angles_to_unit,
    covariance,
    quat_to_rotation,
)

EPS_SELECT = 0.01          # minimum 2D density for path-set membership
MARGIN_WAVELENGTHS = 1e-6  # endpoint-exclusion margin, in wavelengths
COV2D_FLOOR = 1e-12        # m^2, added to the diagonal of every 2D covariance


@dataclass(frozen=True, eq=False)
class ProjectionPlane:
    anchor: np.ndarray
    normal: np.ndarray
    basis: np.ndarray  # (2, 3) rows orthonormal to the normal

    def __post_init__(self):
        anchor = np.array(self.anchor, dtype=np.float64).reshape(3)
        normal = np.array(self.normal, dtype=np.float64).reshape(3)
        basis = np.array(self.basis, dtype=np.float64).reshape(2, 3)
        for arr in (anchor, normal, basis):
            arr.setflags(write=False)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "basis", basis)


@dataclass(frozen=True, eq=False)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float

    def __post_init__(self):
        mean2d = np.array(self.mean2d, dtype=np.float64).reshape(2)
        cov2d = np.array(self.cov2d, dtype=np.float64).reshape(2, 2)
        mean2d.setflags(write=False)
        cov2d.setflags(write=False)
        object.__setattr__(self, "mean2d", mean2d)
        object.__setattr__(self, "cov2d", cov2d)
        object.__setattr__(self, "depth", float(self.depth))


def plane_basis(normal: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal in-plane basis for a unit normal.

    Gram-Schmidt of the world axis with the smallest |normal| component;
    the second vector is normal x basis1. Any orthonormal choice gives the
    same densities, this one just pins reproducibility.
    """
    normal = np.asarray(normal, dtype=np.float64)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(normal)))] = 1.0
    b1 = axis - np.dot(axis, normal) * normal
    b1 /= np.linalg.norm(b1)
    b2 = np.cross(normal, b1)
    return np.stack([b1, b2])


def plane_basis_t(normals: torch.Tensor) -> torch.Tensor:
    """Batched torch version of :func:`plane_basis`: (..., 3) -> (..., 2, 3).

    The axis choice is discrete (taken under no_grad); the arithmetic stays
    differentiable with respect to the normal.
    """
    with torch.no_grad():
        axis_idx = torch.argmin(normals.abs(), dim=-1)
    axis = torch.nn.functional.one_hot(axis_idx, num_classes=3).to(normals.dtype)
    b1 = axis - (axis * normals).sum(-1, keepdim=True) * normals
    b1 = b1 / torch.clamp(b1.norm(dim=-1, keepdim=True), min=1e-30)
    b2 = torch.cross(normals, b1, dim=-1)
    return torch.stack([b1, b2], dim=-2)


def _plane_from_normal(anchor: np.ndarray, normal: np.ndarray) -> ProjectionPlane:
    return ProjectionPlane(anchor=anchor, normal=normal, basis=plane_basis(normal))


def _unit_between(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    d = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    n = float(np.linalg.norm(d))
    if n == 0.0:
        raise DegenerateGeometryError("coincident points")
    return d / n, n


def tx_plane(p_t: np.ndarray, p_m: np.ndarray) -> ProjectionPlane:
    """Plane for the Tx -> scatterer segment (normal toward the scatterer)."""
    normal, _ = _unit_between(p_t, p_m)
    return _plane_from_normal(np.asarray(p_t, dtype=np.float64), normal)


def rx_plane(
    p_r: np.ndarray, theta: float, phi: float, rx_orientation: np.ndarray
) -> ProjectionPlane:
    """Plane for one sampled AOA ray leaving the Rx."""
    normal = quat_to_rotation(rx_orientation) @ angles_to_unit(theta, phi)
    return _plane_from_normal(np.asarray(p_r, dtype=np.float64), normal)


def direct_plane(p_t: np.ndarray, p_r: np.ndarray) -> ProjectionPlane:
    """Plane for the Tx -> Rx segment (normal toward the Rx)."""
    normal, _ = _unit_between(p_t, p_r)
    return _plane_from_normal(np.asarray(p_t, dtype=np.float64), normal)


def splat(e: GaussianEllipsoid, plane: ProjectionPlane) -> Splat2D:
    """Parallel-project an ellipsoid: no Jacobian, no perspective scaling."""
    w = np.vstack([plane.basis, plane.normal[None, :]])
    mu = w @ (e.mean - plane.anchor)
    sigma = w @ covariance(e) @ w.T
    cov2d = sigma[:2, :2] + COV2D_FLOOR * np.eye(2)
    return Splat2D(mean2d=mu[:2], cov2d=cov2d, depth=float(mu[2]))


def splat_density_at_origin(s: Splat2D) -> float:
    """2D Gaussian density of a splat evaluated at the plane origin."""
    a, b = s.cov2d[0, 0], s.cov2d[0, 1]
    c = s.cov2d[1, 1]
    det = a * c - b * b
    x, y = s.mean2d
    q = (c * x * x - 2.0 * b * x * y + a * y * y) / det
    return math.exp(-0.5 * max(q, 0.0))


@dataclass(frozen=True)
class PathSets:
    """Selected ellipsoid indices for one (Tx, Rx, grid) query.

    penetrated[g]: indices hit by grid ray g, ordered by ascending depth;
    occluders_tx[m]: indices strictly between Tx and ellipsoid m;
    occluders_rx[g][m]: indices strictly between Rx and m along ray g
    (present only for m in penetrated[g]);
    direct_occluders: indices strictly between Tx and Rx.
    """

    penetrated: tuple[tuple[int, ...], ...]
    occluders_tx: tuple[tuple[int, ...], ...]
    occluders_rx: tuple[dict[int, tuple[int, ...]], ...]
    direct_occluders: tuple[int, ...] = field(default=())


def _splats_on_plane(scene: Scene, plane: ProjectionPlane) -> list[Splat2D]:
    return [splat(e, plane) for e in scene.ellipsoids]


def _members(
    splats: list[Splat2D],
    lo: float,
    hi: float,
    eps_sel: float,
    exclude: int | None = None,
) -> tuple[int, ...]:
    """Indices with depth strictly inside (lo, hi) and density >= eps_sel,
    ordered by ascending depth."""
    picked = [
        (s.depth, i)
        for i, s in enumerate(splats)
        if i != exclude and lo < s.depth < hi and splat_density_at_origin(s) >= eps_sel
    ]
    picked.sort()
    return tuple(i for _, i in picked)


def select_path_sets(
    scene: Scene,
    tx_pos: np.ndarray,
    rx_pos: np.ndarray,
    rx_orientation: np.ndarray,
    thetas: np.ndarray,
    phis: np.ndarray,
    eps_sel: float = EPS_SELECT,
) -> PathSets:
    """Build every path set used by wireless rendering.

    thetas/phis are the flattened grid angles (local Rx frame). The margin
    excluding segment endpoints is MARGIN_WAVELENGTHS * wavelength.
    """
    margin = MARGIN_WAVELENGTHS * scene.wavelength
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    rx_pos = np.asarray(rx_pos, dtype=np.float64)

    occluders_tx = []
    for m, e in enumerate(scene.ellipsoids):
        plane = tx_plane(tx_pos, e.mean)
        d_t = float(np.linalg.norm(e.mean - tx_pos))
        splats = _splats_on_plane(scene, plane)
        occluders_tx.append(_members(splats, margin, d_t - margin, eps_sel, exclude=m))

    penetrated = []
    occluders_rx = []
    for theta, phi in zip(np.ravel(thetas), np.ravel(phis)):
        plane = rx_plane(rx_pos, float(theta), float(phi), rx_orientation)
        splats = _splats_on_plane(scene, plane)
        hit = tuple(
            i
            for _, i in sorted(
                (s.depth, i)
                for i, s in enumerate(splats)
                if s.depth > 0.0 and splat_density_at_origin(s) >= eps_sel
            )
        )
        penetrated.append(hit)
        occluders_rx.append(
            {
                m: _members(splats, margin, splats[m].depth - margin, eps_sel, exclude=m)
                for m in hit
            }
        )

    if np.array_equal(tx_pos, rx_pos):
        raise DegenerateGeometryError("coincident Tx and Rx")
    dplane = direct_plane(tx_pos, rx_pos)
    d_l = float(np.linalg.norm(rx_pos - tx_pos))
    dsplats = _splats_on_plane(scene, dplane)
    direct = _members(dsplats, margin, d_l - margin, eps_sel)

    return PathSets(
        penetrated=tuple(penetrated),
        occluders_tx=tuple(occluders_tx),
        occluders_rx=tuple(occluders_rx),
        direct_occluders=direct,
    )
