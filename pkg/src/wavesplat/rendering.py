"""Wireless rendering: per-path complex attenuation, steering vectors, and
assembly of the forward channel vector.

Two implementations of the forward model live here:

* scalar ops (`render_tx`, `render_rx`, `render_direct`, ...) composed by
  :func:`forward_channel_reference` - readable, used for cross-checks;
* a vectorized torch path (:func:`channel_forward_t`) that training
  differentiates through; :func:`forward_channel` wraps it for inference.

Both share the same selection rules (density cutoff, endpoint margins,
depth floor) and commuting products, so they agree to float reassociation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import torch

from . import harmonics
from .core import (
    AngularGrid,
    ArrayConfig,
    DegenerateGeometryError,
    Scene,
    angles_to_unit,
    quat_to_rotation,
    scene_to_arrays,
    scene_from_arrays,
    unit_to_angles,
)
from .splatting import (
    EPS_SELECT,
    MARGIN_WAVELENGTHS,
    Splat2D,
    plane_basis_t,
    rx_plane,
    select_path_sets,
    splat,
    splat_density_at_origin,
    tx_plane,
    direct_plane,
)

DEPTH_FLOOR_WAVELENGTHS = 1e-3
SQRT_4PI = math.sqrt(4.0 * math.pi)
_LOG_FLOOR = 1e-12  # lower clamp on (1 - alpha) before taking logs


@dataclass(frozen=True)
class RenderConfig:
    """Discretization and cutoffs of the rendering sums."""

    grid: AngularGrid = field(default_factory=lambda: AngularGrid(45, 45))
    eps_sel: float = EPS_SELECT
    margin_wavelengths: float = MARGIN_WAVELENGTHS
    depth_floor_wavelengths: float = DEPTH_FLOOR_WAVELENGTHS


@dataclass(frozen=True, eq=False)
class PathGeometry:
    """Center-to-center geometry of one Tx -> ellipsoid -> Rx path."""

    theta_m: float
    phi_m: float
    theta_in: float
    phi_in: float
    d_t: float
    d_r: float


def path_geometry(p_t, p_r, p_m) -> PathGeometry:
    """World-frame incident/scattering angles and distances for ellipsoid m."""
    p_t = np.asarray(p_t, dtype=np.float64)
    p_r = np.asarray(p_r, dtype=np.float64)
    p_m = np.asarray(p_m, dtype=np.float64)
    v_in = p_m - p_t
    v_out = p_r - p_m
    d_t = float(np.linalg.norm(v_in))
    d_r = float(np.linalg.norm(v_out))
    if d_t == 0.0 or d_r == 0.0:
        raise DegenerateGeometryError("ellipsoid coincides with Tx or Rx")
    theta_in, phi_in = unit_to_angles(v_in / d_t)
    theta_m, phi_m = unit_to_angles(v_out / d_r)
    return PathGeometry(theta_m, phi_m, theta_in, phi_in, d_t, d_r)


def steering_vector(theta: float, phi: float, cfg: ArrayConfig) -> np.ndarray:
    """UPA response b = b_v kron b_h; every entry has magnitude 1/N."""
    kv = np.arange(cfg.n_v)
    kh = np.arange(cfg.n_h)
    bv = np.exp(1j * 2.0 * math.pi * cfg.d_v * kv * math.cos(theta)) / cfg.n_v
    bh = (
        np.exp(1j * 2.0 * math.pi * cfg.d_h * kh * math.sin(theta) * math.sin(phi))
        / cfg.n_h
    )
    return np.kron(bv, bh)


def steering_matrix(thetas: np.ndarray, phis: np.ndarray, cfg: ArrayConfig) -> np.ndarray:
    """(G, N) matrix of steering vectors for flattened grid angles."""
    thetas = np.asarray(thetas, dtype=np.float64).ravel()
    phis = np.asarray(phis, dtype=np.float64).ravel()
    kv = np.arange(cfg.n_v)
    kh = np.arange(cfg.n_h)
    bv = np.exp(1j * 2.0 * math.pi * cfg.d_v * np.cos(thetas)[:, None] * kv) / cfg.n_v
    sh = (np.sin(thetas) * np.sin(phis))[:, None]
    bh = np.exp(1j * 2.0 * math.pi * cfg.d_h * sh * kh) / cfg.n_h
    return np.einsum("gv,gh->gvh", bv, bh).reshape(thetas.size, cfg.n_antennas)


def direct_indicator(p_t, p_r, rx_orientation) -> int:
    """1 iff the Tx lies in the (closed) reception half-space of the Rx."""
    d = np.asarray(p_t, dtype=np.float64) - np.asarray(p_r, dtype=np.float64)
    n = np.linalg.norm(d)
    if n == 0.0:
        raise DegenerateGeometryError("coincident Tx and Rx")
    u_local = quat_to_rotation(rx_orientation).T @ (d / n)
    return 1 if u_local[0] >= 0.0 else 0


def _attenuation_product(
    occluders, splats, alpha_max, gamma_max, wavelength: float
) -> complex:
    theta = complex(1.0, 0.0)
    for k in occluders:
        rho = splat_density_at_origin(splats[k])
        alpha = alpha_max[k] * rho
        gamma = gamma_max[k] * rho
        theta *= (1.0 - alpha) * complex(
            math.cos(2.0 * math.pi * gamma / wavelength),
            -math.sin(2.0 * math.pi * gamma / wavelength),
        )
    return theta


def render_tx(occluders, splats, alpha_max, gamma_max, wavelength: float) -> complex:
    """Attenuation along the Tx -> scatterer segment; empty set gives 1."""
    return _attenuation_product(occluders, splats, alpha_max, gamma_max, wavelength)


def render_rx(
    m: int, occluders, splats, alpha_max, gamma_max, wavelength: float
) -> complex:
    """Attenuation along the scatterer -> Rx segment.

    The leading alpha_mm factor gates the scatterer's own contribution by its
    projected density on the AOA plane.
    """
    alpha_mm = alpha_max[m] * splat_density_at_origin(splats[m])
    return alpha_mm * _attenuation_product(
        occluders, splats, alpha_max, gamma_max, wavelength
    )


def render_direct(occluders, splats, alpha_max, gamma_max, wavelength: float) -> complex:
    """Attenuation along the Tx -> Rx segment; the LOS path is the empty case."""
    return _attenuation_product(occluders, splats, alpha_max, gamma_max, wavelength)


# ---------------------------------------------------------------------------
# Vectorized torch forward model
# ---------------------------------------------------------------------------


def quat_to_rotation_t(q: torch.Tensor) -> torch.Tensor:
    """Batched quaternion (w, x, y, z) -> rotation matrices (..., 3, 3)."""
    q = q / torch.clamp(q.norm(dim=-1, keepdim=True), min=1e-30)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1
    )
    row1 = torch.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1
    )
    row2 = torch.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1
    )
    return torch.stack([row0, row1, row2], dim=-2)


def covariance_t(quats: torch.Tensor, log_scales: torch.Tensor) -> torch.Tensor:
    """Batched R diag(exp(2 log_s)) R^T."""
    r = quat_to_rotation_t(quats)
    s2 = torch.exp(2.0 * log_scales)
    return torch.einsum("...ab,...b,...cb->...ac", r, s2, r)


def _safe_angles_t(u: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Unit vectors -> (theta, phi) with pole-safe gradients."""
    uz = torch.clamp(u[..., 2], min=-1.0 + 1e-12, max=1.0 - 1e-12)
    theta = torch.acos(uz)
    ux, uy = u[..., 0], u[..., 1]
    tiny = (ux * ux + uy * uy) < 1e-30
    phi = torch.atan2(
        torch.where(tiny, torch.zeros_like(uy), uy),
        torch.where(tiny, torch.ones_like(ux), ux),
    )
    return theta, phi


def _expj(log_mag: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
    """exp(log_mag + j phase) as a complex tensor."""
    return torch.polar(torch.exp(log_mag), phase)


def _density2d(mean2d: torch.Tensor, cov2d: torch.Tensor) -> torch.Tensor:
    """Batched 2D Gaussian density at the plane origin.

    cov2d already carries the diagonal floor; inputs (..., 2) and (..., 2, 2).
    """
    a = cov2d[..., 0, 0]
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1]
    det = torch.clamp(a * c - b * b, min=1e-300)
    x = mean2d[..., 0]
    y = mean2d[..., 1]
    q = (c * x * x - 2.0 * b * x * y + a * y * y) / det
    return torch.exp(-0.5 * torch.clamp(q, min=0.0))


@dataclass(eq=False)
class SceneTensors:
    """Stacked per-ellipsoid parameters; the training parameter store."""

    means: torch.Tensor       # (M, 3)
    quats: torch.Tensor       # (M, 4)
    log_scales: torch.Tensor  # (M, 3)
    raw_opacity: torch.Tensor  # (M,)
    raw_gamma: torch.Tensor   # (M,)
    z_coeff: torch.Tensor     # (M,)
    bsh_re: torch.Tensor      # (M, F)
    bsh_im: torch.Tensor      # (M, F)
    wavelength: float
    sh_degree: int
    bbox: np.ndarray

    GROUPS = ("mean", "rotation", "log_scales", "raw_opacity", "raw_gamma", "z_coeff", "bsh")

    @property
    def count(self) -> int:
        return int(self.means.shape[0])

    def tensors(self) -> dict[str, torch.Tensor]:
        return {
            "mean": self.means,
            "rotation": self.quats,
            "log_scales": self.log_scales,
            "raw_opacity": self.raw_opacity,
            "raw_gamma": self.raw_gamma,
            "z_coeff": self.z_coeff,
            "bsh_re": self.bsh_re,
            "bsh_im": self.bsh_im,
        }

    @staticmethod
    def group_of(tensor_name: str) -> str:
        return "bsh" if tensor_name in ("bsh_re", "bsh_im") else tensor_name

    def requires_grad_(self, flag: bool = True) -> "SceneTensors":
        for t in self.tensors().values():
            t.requires_grad_(flag)
        return self

    @classmethod
    def from_scene(cls, scene: Scene) -> "SceneTensors":
        arrays = scene_to_arrays(scene)
        def t(name):
            return torch.from_numpy(np.ascontiguousarray(arrays[name], dtype=np.float64))
        return cls(
            means=t("mean"),
            quats=t("rotation"),
            log_scales=t("log_scales"),
            raw_opacity=t("raw_opacity").reshape(-1),
            raw_gamma=t("raw_gamma").reshape(-1),
            z_coeff=t("z_coeff").reshape(-1),
            bsh_re=t("bsh_re"),
            bsh_im=t("bsh_im"),
            wavelength=scene.wavelength,
            sh_degree=scene.sh_degree,
            bbox=np.array(scene.bbox, dtype=np.float64),
        )

    def to_scene(self) -> Scene:
        with torch.no_grad():
            quats = self.quats / torch.clamp(
                self.quats.norm(dim=-1, keepdim=True), min=1e-30
            )
            arrays = {
                "mean": self.means.numpy().copy(),
                "rotation": quats.numpy().copy(),
                "log_scales": self.log_scales.numpy().copy(),
                "raw_opacity": self.raw_opacity.numpy().reshape(-1, 1).copy(),
                "raw_gamma": self.raw_gamma.numpy().reshape(-1, 1).copy(),
                "z_coeff": self.z_coeff.numpy().reshape(-1, 1).copy(),
                "bsh_re": self.bsh_re.numpy().copy(),
                "bsh_im": self.bsh_im.numpy().copy(),
            }
        return scene_from_arrays(arrays, self.bbox, self.wavelength, self.sh_degree)


@dataclass(frozen=True, eq=False)
class RenderContext:
    """Per-(array, render-config) constants reused across samples."""

    array: ArrayConfig
    render: RenderConfig
    local_dirs: torch.Tensor      # (G, 3) ray directions, Rx local frame
    steering_render: torch.Tensor  # (G, N) complex128


@lru_cache(maxsize=8)
def build_render_context(array: ArrayConfig, render: RenderConfig) -> RenderContext:
    thetas, phis = render.grid.flat_angles()
    dirs = np.stack(
        [
            np.sin(thetas) * np.cos(phis),
            np.sin(thetas) * np.sin(phis),
            np.cos(thetas),
        ],
        axis=-1,
    )
    b = steering_matrix(thetas, phis, array)
    return RenderContext(
        array=array,
        render=render,
        local_dirs=torch.from_numpy(np.ascontiguousarray(dirs)),
        steering_render=torch.from_numpy(np.ascontiguousarray(b)),
    )


@dataclass(eq=False)
class SamplePack:
    """Per-measurement constants for the torch forward pass."""

    p_t: torch.Tensor          # (3,)
    p_r: torch.Tensor          # (3,)
    ray_normals: torch.Tensor  # (G, 3) world-frame ray directions
    q_d: int
    d_l: float
    b_direct: torch.Tensor | None  # (N,) complex, None when q_d == 0
    sample_id: str = ""


def make_sample_pack(
    tx_pos, rx_pos, rx_orientation, ctx: RenderContext, sample_id: str = ""
) -> SamplePack:
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    rx_pos = np.asarray(rx_pos, dtype=np.float64)
    rot = quat_to_rotation(rx_orientation)
    d_vec = rx_pos - tx_pos
    d_l = float(np.linalg.norm(d_vec))
    if d_l == 0.0:
        raise DegenerateGeometryError("coincident Tx and Rx")
    q_d = direct_indicator(tx_pos, rx_pos, rx_orientation)
    b_direct = None
    if q_d:
        u_local = rot.T @ (-d_vec / d_l)
        theta_l, phi_l = unit_to_angles(u_local)
        b_direct = torch.from_numpy(steering_vector(theta_l, phi_l, ctx.array))
    normals = ctx.local_dirs.numpy() @ rot.T
    return SamplePack(
        p_t=torch.from_numpy(tx_pos),
        p_r=torch.from_numpy(rx_pos),
        ray_normals=torch.from_numpy(np.ascontiguousarray(normals)),
        q_d=q_d,
        d_l=d_l,
        b_direct=b_direct,
        sample_id=str(sample_id),
    )


def channel_forward_t(
    params: SceneTensors, pack: SamplePack, ctx: RenderContext
) -> torch.Tensor:
    """Differentiable forward channel for one sample; (N,) complex128.

    Path-set membership (density cutoff, margins, depth ordering) is frozen
    per call: masks and sort indices are taken under no_grad, matching the
    piecewise-constant treatment of selection in training.
    """
    lam = params.wavelength
    k_wave = 2.0 * math.pi / lam
    margin = ctx.render.margin_wavelengths * lam
    depth_floor = ctx.render.depth_floor_wavelengths * lam
    eps_sel = ctx.render.eps_sel
    n_ant = ctx.array.n_antennas
    m_count = params.count

    if pack.d_l <= depth_floor:
        raise DegenerateGeometryError("Tx-Rx distance below the depth floor")

    from .splatting import COV2D_FLOOR

    eye2 = COV2D_FLOOR * torch.eye(2, dtype=torch.float64)

    def cov2d_of(basis: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
        # basis (..., 2, 3) x sigma (M, 3, 3) -> (..., M, 2, 2)
        t1 = torch.einsum("...ac,mcd->...mad", basis, sigma)
        return torch.einsum("...mad,...bd->...mab", t1, basis) + eye2

    h = torch.zeros(n_ant, dtype=torch.complex128)

    if m_count > 0:
        sigma = covariance_t(params.quats, params.log_scales)
        alpha_max = torch.sigmoid(params.raw_opacity)
        gamma_max = lam * torch.sigmoid(params.raw_gamma)

        v_t = params.means - pack.p_t            # (M, 3)
        d_t = v_t.norm(dim=-1)                    # (M,)
        d_t_safe = torch.clamp(d_t, min=1e-30)
        u_in = v_t / d_t_safe.unsqueeze(-1)
        v_out = pack.p_r - params.means
        d_out = torch.clamp(v_out.norm(dim=-1), min=1e-30)
        u_out = v_out / d_out.unsqueeze(-1)

        theta_in, phi_in = _safe_angles_t(u_in)
        theta_out, phi_out = _safe_angles_t(u_out)
        a_re = harmonics.materialize_free_t(params.bsh_re, params.sh_degree)
        a_im = harmonics.materialize_free_t(params.bsh_im, params.sh_degree)
        v_re, v_im = harmonics.bsh_eval_t(a_re, a_im, theta_out, phi_out, theta_in, phi_in)
        gamma_coeff = params.z_coeff * torch.complex(v_re, v_im)  # (M,) complex

        # Tx-side occlusion: plane of scatterer m, occluder l. (M, M)
        basis_tx = plane_basis_t(u_in)                       # (M, 2, 3)
        depth_tx = torch.einsum("mc,lc->ml", u_in, v_t)
        mean2d_tx = torch.einsum("mac,lc->mla", basis_tx, v_t)
        cov2d_tx = cov2d_of(basis_tx, sigma)                 # (M, M, 2, 2)
        rho_tx = _density2d(mean2d_tx, cov2d_tx)
        with torch.no_grad():
            mask_tx = (
                (depth_tx > margin)
                & (depth_tx < (d_t - margin).unsqueeze(1))
                & (rho_tx >= eps_sel)
            ).to(torch.float64)
        alpha_tx = alpha_max.unsqueeze(0) * rho_tx
        gamma_tx = gamma_max.unsqueeze(0) * rho_tx
        s_tx_re = (mask_tx * torch.log(torch.clamp(1.0 - alpha_tx, min=_LOG_FLOOR))).sum(1)
        s_tx_im = (mask_tx * (-k_wave * gamma_tx)).sum(1)
        theta_t = _expj(s_tx_re, s_tx_im)                    # (M,) complex

        # Rx-side: one plane per grid ray. (G, M)
        basis_ray = plane_basis_t(pack.ray_normals)          # (G, 2, 3)
        w = params.means - pack.p_r
        depth_r = torch.einsum("gc,mc->gm", pack.ray_normals, w)
        mean2d_r = torch.einsum("gac,mc->gma", basis_ray, w)
        cov2d_r = cov2d_of(basis_ray, sigma)                 # (G, M, 2, 2)
        rho_r = _density2d(mean2d_r, cov2d_r)
        alpha_r = alpha_max.unsqueeze(0) * rho_r
        gamma_r = gamma_max.unsqueeze(0) * rho_r

        with torch.no_grad():
            occ_ok = ((depth_r > margin) & (rho_r >= eps_sel)).to(torch.float64)
            sel = (
                (depth_r > depth_floor)
                & (rho_r >= eps_sel)
                & (d_t > depth_floor).unsqueeze(0)
            ).to(torch.float64)
            order = torch.argsort(depth_r, dim=1, stable=True)
            depth_sorted = torch.gather(depth_r, 1, order)
            # occluders of m on ray g: sorted depths strictly below depth_m - margin
            pos = torch.searchsorted(
                depth_sorted.contiguous(), (depth_r - margin).contiguous()
            )
            take = torch.clamp(pos - 1, min=0)
            has_occ = pos > 0

        s_r_re = occ_ok * torch.log(torch.clamp(1.0 - alpha_r, min=_LOG_FLOOR))
        s_r_im = occ_ok * (-k_wave * gamma_r)
        c_re = torch.cumsum(torch.gather(s_r_re, 1, order), dim=1)
        c_im = torch.cumsum(torch.gather(s_r_im, 1, order), dim=1)
        zero = torch.zeros((), dtype=torch.float64)
        sum_re = torch.where(has_occ, torch.gather(c_re, 1, take), zero)
        sum_im = torch.where(has_occ, torch.gather(c_im, 1, take), zero)
        theta_r = alpha_r * _expj(sum_re, sum_im)            # (G, M) complex

        d_r_safe = torch.clamp(depth_r, min=depth_floor)
        amp_tx = _expj(-torch.log(SQRT_4PI * d_t_safe), -k_wave * d_t) * theta_t * gamma_coeff
        amp_rx = _expj(
            math.log(lam) - torch.log(4.0 * math.pi * d_r_safe), -k_wave * d_r_safe
        )
        contrib = sel * amp_tx.unsqueeze(0) * amp_rx * theta_r  # (G, M)
        per_ray = contrib.sum(dim=1)                             # (G,)
        h = h + torch.einsum("gn,g->n", ctx.steering_render, per_ray)

    if pack.q_d:
        if m_count > 0:
            n_d = (pack.p_r - pack.p_t) / pack.d_l
            basis_d = plane_basis_t(n_d.unsqueeze(0))[0]      # (2, 3)
            v_t_d = params.means - pack.p_t
            depth_d = torch.einsum("c,mc->m", n_d, v_t_d)
            mean2d_d = torch.einsum("ac,mc->ma", basis_d, v_t_d)
            cov2d_d = cov2d_of(basis_d.unsqueeze(0), sigma)[0]  # (M, 2, 2)
            rho_d = _density2d(mean2d_d, cov2d_d)
            with torch.no_grad():
                mask_d = (
                    (depth_d > margin)
                    & (depth_d < pack.d_l - margin)
                    & (rho_d >= eps_sel)
                ).to(torch.float64)
            alpha_max_d = torch.sigmoid(params.raw_opacity)
            gamma_max_d = lam * torch.sigmoid(params.raw_gamma)
            alpha_d = alpha_max_d * rho_d
            gamma_d = gamma_max_d * rho_d
            s_d_re = (mask_d * torch.log(torch.clamp(1.0 - alpha_d, min=_LOG_FLOOR))).sum()
            s_d_im = (mask_d * (-k_wave * gamma_d)).sum()
            theta_l = _expj(s_d_re, s_d_im)
        else:
            theta_l = torch.ones((), dtype=torch.complex128)
        scale = lam / (4.0 * math.pi * pack.d_l)
        phase = complex(math.cos(k_wave * pack.d_l), -math.sin(k_wave * pack.d_l))
        h = h + pack.b_direct * (scale * phase) * theta_l

    return h


def forward_channel(
    scene: Scene,
    tx_pos,
    rx_pos,
    cfg: ArrayConfig,
    rx_orientation=None,
    render: RenderConfig | None = None,
) -> np.ndarray:
    """Predicted channel vector for one Tx-Rx pose (inference path)."""
    render = render or RenderConfig()
    if rx_orientation is None:
        rx_orientation = np.array([1.0, 0.0, 0.0, 0.0])
    ctx = build_render_context(cfg, render)
    params = SceneTensors.from_scene(scene)
    pack = make_sample_pack(tx_pos, rx_pos, rx_orientation, ctx)
    with torch.no_grad():
        h = channel_forward_t(params, pack, ctx)
    return h.numpy().copy()


def forward_channel_reference(
    scene: Scene,
    tx_pos,
    rx_pos,
    cfg: ArrayConfig,
    rx_orientation=None,
    render: RenderConfig | None = None,
) -> np.ndarray:
    """Forward channel composed from the scalar ops; cross-check path only."""
    render = render or RenderConfig()
    if rx_orientation is None:
        rx_orientation = np.array([1.0, 0.0, 0.0, 0.0])
    tx_pos = np.asarray(tx_pos, dtype=np.float64)
    rx_pos = np.asarray(rx_pos, dtype=np.float64)
    lam = scene.wavelength
    k_wave = 2.0 * math.pi / lam
    depth_floor = render.depth_floor_wavelengths * lam
    thetas, phis = render.grid.flat_angles()
    sets = select_path_sets(
        scene, tx_pos, rx_pos, rx_orientation, thetas, phis, render.eps_sel
    )
    from .core import activate

    act = [activate(e, lam) for e in scene.ellipsoids]
    alpha_max = [a for a, _, _ in act]
    gamma_max = [g for _, g, _ in act]

    gamma_coeff = []
    theta_t = []
    for m, e in enumerate(scene.ellipsoids):
        geom = path_geometry(tx_pos, rx_pos, e.mean)
        c_re = harmonics.BshCoefficients(e.bsh_re, "real", scene.sh_degree)
        c_im = harmonics.BshCoefficients(e.bsh_im, "imag", scene.sh_degree)
        v = harmonics.bsh_eval(
            c_re, c_im, geom.theta_m, geom.phi_m, geom.theta_in, geom.phi_in
        )
        gamma_coeff.append(e.z_coeff * v)
        plane = tx_plane(tx_pos, e.mean)
        splats = [splat(x, plane) for x in scene.ellipsoids]
        theta_t.append(
            render_tx(sets.occluders_tx[m], splats, alpha_max, gamma_max, lam)
        )

    h = np.zeros(cfg.n_antennas, dtype=np.complex128)
    d_t = [float(np.linalg.norm(e.mean - tx_pos)) for e in scene.ellipsoids]
    for g, (theta, phi) in enumerate(zip(thetas, phis)):
        if not sets.penetrated[g]:
            continue
        plane = rx_plane(rx_pos, float(theta), float(phi), rx_orientation)
        splats = [splat(x, plane) for x in scene.ellipsoids]
        b = steering_vector(float(theta), float(phi), cfg)
        for m in sets.penetrated[g]:
            d_r = splats[m].depth
            if d_r <= depth_floor or d_t[m] <= depth_floor:
                continue
            th_r = render_rx(
                m, sets.occluders_rx[g][m], splats, alpha_max, gamma_max, lam
            )
            amp = (
                np.exp(-1j * k_wave * d_t[m]) / (SQRT_4PI * d_t[m])
                * theta_t[m]
                * gamma_coeff[m]
                * lam
                * np.exp(-1j * k_wave * d_r)
                / (4.0 * math.pi * d_r)
                * th_r
            )
            h = h + b * amp

    q_d = direct_indicator(tx_pos, rx_pos, rx_orientation)
    if q_d:
        d_l = float(np.linalg.norm(rx_pos - tx_pos))
        plane = direct_plane(tx_pos, rx_pos)
        splats = [splat(x, plane) for x in scene.ellipsoids]
        theta_l = render_direct(sets.direct_occluders, splats, alpha_max, gamma_max, lam)
        rot = quat_to_rotation(rx_orientation)
        theta_ang, phi_ang = unit_to_angles(rot.T @ ((tx_pos - rx_pos) / d_l))
        b = steering_vector(theta_ang, phi_ang, cfg)
        h = h + b * (lam / (4.0 * math.pi * d_l)) * np.exp(-1j * k_wave * d_l) * theta_l
    return h
