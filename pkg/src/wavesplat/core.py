"""Core value types shared by every stage of the pipeline.

Conventions used throughout the package:

* world frame: right-handed, meters;
* elevation theta measured from the +z axis in [0, pi], azimuth phi from the
  +x axis in the x-y plane, so a unit direction is
  (sin t cos p, sin t sin p, cos t);
* the receiver's reception domain is the x >= 0 half-space of its local
  frame (identity orientation = array broadside along world +x);
* all raw ellipsoid parameters are unconstrained reals; activations map them
  into their physical ranges (see :func:`activate`).
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

SCENE_FORMAT_NAME = "wavesplat-scene"
SCENE_FORMAT_VERSION = 1

# Per-ellipsoid checkpoint fields, in serialization order (columns per row).
SCENE_FIELD_WIDTHS = (
    ("mean", 3),
    ("rotation", 4),
    ("log_scales", 3),
    ("raw_opacity", 1),
    ("raw_gamma", 1),
    ("z_coeff", 1),
    ("bsh_re", None),  # free-parameter count, depends on sh_degree
    ("bsh_im", None),
)


class CkmError(Exception):
    """Base class for package errors."""


class IllConditionedError(CkmError):
    """Covariance condition number exceeds the supported bound."""


class DegenerateGeometryError(CkmError):
    """Coincident or too-close points where a direction is required."""


class UnsupportedDegreeError(CkmError):
    """Spherical-harmonics degree outside the supported range."""


class ShapeMismatchError(CkmError):
    """Operands have incompatible shapes."""


class EmptyInputError(CkmError):
    """An operation that needs at least one element got none."""


class NonFiniteLossError(CkmError):
    """Training loss became NaN/inf; carries the offending sample id."""

    def __init__(self, message: str, sample_id: str | None = None):
        super().__init__(message)
        self.sample_id = sample_id


class PlacementViolationError(CkmError):
    """Tx/Rx/scatterer placement violates clearance constraints."""


class GenerationSpecError(CkmError):
    """Invalid dataset-generation configuration."""


class DatasetParseError(CkmError):
    """Malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, line_no: int):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class CheckpointError(CkmError):
    """Malformed or incompatible scene checkpoint."""


def sigmoid(x: float) -> float:
    """Numerically stable logistic function for scalars."""
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def inverse_sigmoid(y: float) -> float:
    return math.log(y / (1.0 - y))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = float(np.linalg.norm(q))
    if n == 0.0 or not math.isfinite(n):
        raise DegenerateGeometryError("zero or non-finite quaternion")
    return q / n


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to a 3x3 rotation matrix."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ],
        dtype=np.float64,
    )


def angles_to_unit(theta: float, phi: float) -> np.ndarray:
    st = math.sin(theta)
    return np.array(
        [st * math.cos(phi), st * math.sin(phi), math.cos(theta)], dtype=np.float64
    )


def unit_to_angles(u: np.ndarray) -> tuple[float, float]:
    """Unit vector to (theta, phi); phi = 0 at the poles."""
    u = np.asarray(u, dtype=np.float64)
    theta = math.acos(min(1.0, max(-1.0, float(u[2]))))
    phi = math.atan2(float(u[1]), float(u[0]))
    return theta, phi


def bsh_free_count(sh_degree: int) -> int:
    """Number of independent bidirectional-SH coefficients per part.

    The parity symmetry fixes the mirrored entry (up to sign) from the
    upper triangle, so exactly n(n+1)/2 entries are free, n = (D+1)^2.
    """
    n = (sh_degree + 1) ** 2
    return n * (n + 1) // 2


@dataclass(frozen=True, eq=False)
class GaussianEllipsoid:
    """One learnable scene primitive: pose, shape, opacity, phase length,
    and bidirectional scattering coefficients (stored as free parameters of
    the parity-symmetric coefficient matrices).

    All array fields are float64 and read-only after construction; the
    rotation quaternion is stored normalized.
    """

    mean: np.ndarray
    rotation: np.ndarray
    log_scales: np.ndarray
    raw_opacity: float
    raw_gamma: float
    z_coeff: float
    bsh_re: np.ndarray
    bsh_im: np.ndarray
    sh_degree: int = 3

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(3)
        rotation = quat_normalize(np.array(self.rotation, dtype=np.float64).reshape(4))
        log_scales = np.array(self.log_scales, dtype=np.float64).reshape(3)
        nfree = bsh_free_count(self.sh_degree)
        bsh_re = np.array(self.bsh_re, dtype=np.float64).reshape(nfree)
        bsh_im = np.array(self.bsh_im, dtype=np.float64).reshape(nfree)
        for name, arr in (
            ("mean", mean),
            ("rotation", rotation),
            ("log_scales", log_scales),
            ("bsh_re", bsh_re),
            ("bsh_im", bsh_im),
        ):
            if not np.isfinite(arr).all():
                raise CkmError(f"non-finite {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "raw_opacity", float(self.raw_opacity))
        object.__setattr__(self, "raw_gamma", float(self.raw_gamma))
        object.__setattr__(self, "z_coeff", float(self.z_coeff))


def isotropic_ellipsoid(
    mean,
    scale: float = 1.0,
    raw_opacity: float = 0.0,
    raw_gamma: float = -30.0,
    z_coeff: float = 0.0,
    sh_degree: int = 3,
) -> GaussianEllipsoid:
    """Convenience constructor used widely in tests and initialization."""
    nfree = bsh_free_count(sh_degree)
    return GaussianEllipsoid(
        mean=np.asarray(mean, dtype=np.float64),
        rotation=np.array([1.0, 0.0, 0.0, 0.0]),
        log_scales=np.full(3, math.log(scale)),
        raw_opacity=raw_opacity,
        raw_gamma=raw_gamma,
        z_coeff=z_coeff,
        bsh_re=np.zeros(nfree),
        bsh_im=np.zeros(nfree),
        sh_degree=sh_degree,
    )


def covariance(e: GaussianEllipsoid) -> np.ndarray:
    """R diag(exp(log_scales)^2) R^T - symmetric positive definite."""
    r = quat_to_rotation(e.rotation)
    s2 = np.exp(2.0 * e.log_scales)
    return (r * s2) @ r.T


def gaussian_density(e: GaussianEllipsoid, x: np.ndarray) -> float:
    """Unnormalized Gaussian density exp(-0.5 (x-mu)^T Sigma^-1 (x-mu)).

    Raises IllConditionedError when cond(Sigma) >= 1e12.
    """
    sigma = covariance(e)
    if np.linalg.cond(sigma) >= 1e12:
        raise IllConditionedError("covariance condition number >= 1e12")
    d = np.asarray(x, dtype=np.float64).reshape(3) - e.mean
    q = float(d @ np.linalg.solve(sigma, d))
    return math.exp(-0.5 * q)


def activate(e: GaussianEllipsoid, wavelength: float) -> tuple[float, float, np.ndarray]:
    """Raw parameters to physical ranges.

    Returns (alpha_max in (0,1), gamma_max in [0, wavelength], scales > 0).
    """
    alpha_max = sigmoid(e.raw_opacity)
    gamma_max = wavelength * sigmoid(e.raw_gamma)
    return alpha_max, gamma_max, np.exp(e.log_scales)


@dataclass(frozen=True, eq=False)
class Scene:
    """Ordered collection of ellipsoids plus the global constants."""

    ellipsoids: tuple[GaussianEllipsoid, ...]
    bbox: np.ndarray  # (2, 3): [min; max], meters
    wavelength: float
    sh_degree: int = 3

    def __post_init__(self):
        bbox = np.array(self.bbox, dtype=np.float64).reshape(2, 3)
        if not (bbox[1] >= bbox[0]).all():
            raise CkmError("bbox max must dominate bbox min")
        bbox.setflags(write=False)
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))
        object.__setattr__(self, "wavelength", float(self.wavelength))
        if self.wavelength <= 0.0:
            raise CkmError("wavelength must be positive")
        for e in self.ellipsoids:
            if e.sh_degree != self.sh_degree:
                raise CkmError("ellipsoid sh_degree differs from scene sh_degree")

    @property
    def extent(self) -> float:
        """Circumscribed radius of the bounding box."""
        return float(np.linalg.norm(self.bbox[1] - self.bbox[0]) / 2.0)


def validate_scene(scene: Scene, inflation: float = 1.5) -> None:
    """Check that every mean lies inside the inflated bounding box."""
    lo, hi = scene.bbox
    center = (lo + hi) / 2.0
    half = (hi - lo) / 2.0 * inflation
    for i, e in enumerate(scene.ellipsoids):
        if (np.abs(e.mean - center) > half + 1e-12).any():
            raise CkmError(f"ellipsoid {i} mean outside inflated bbox")


@dataclass(frozen=True)
class AngularGrid:
    """Cell-centered AOA sampling of the reception hemisphere.

    theta spans [0, pi] with v cells, phi spans [-pi/2, pi/2] with z cells;
    centers are strictly interior so every grid direction has a positive
    local x component.
    """

    v: int
    z: int

    def __post_init__(self):
        if self.v < 1 or self.z < 1:
            raise CkmError("grid needs at least one cell per axis")

    @property
    def size(self) -> int:
        return self.v * self.z

    def theta_centers(self) -> np.ndarray:
        return (np.arange(self.v) + 0.5) * (math.pi / self.v)

    def phi_centers(self) -> np.ndarray:
        return -math.pi / 2.0 + (np.arange(self.z) + 0.5) * (math.pi / self.z)

    def flat_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major flattened (theta, phi) pairs; cell (i, j) -> g = i*z + j."""
        t, p = np.meshgrid(self.theta_centers(), self.phi_centers(), indexing="ij")
        return t.ravel(), p.ravel()


@dataclass(frozen=True)
class ArrayConfig:
    """Receiver UPA geometry plus the AOA sampling grid.

    Antenna spacings d_v/d_h are in wavelengths (0.5 = half-wavelength).
    Vertical phase progresses with cos(theta) (local z axis), horizontal
    with sin(theta) sin(phi) (local y axis); broadside is local +x.
    """

    n_v: int = 4
    n_h: int = 4
    d_v: float = 0.5
    d_h: float = 0.5
    grid: AngularGrid = field(default_factory=lambda: AngularGrid(180, 180))

    def __post_init__(self):
        if self.n_v < 1 or self.n_h < 1:
            raise CkmError("antenna counts must be >= 1")

    @property
    def n_antennas(self) -> int:
        return self.n_v * self.n_h


# A channel vector is a plain complex128 ndarray of length ArrayConfig.n_antennas.
ChannelVector = np.ndarray


def validate_channel(h: np.ndarray, n_antennas: int) -> np.ndarray:
    h = np.asarray(h, dtype=np.complex128).reshape(-1)
    if h.shape[0] != n_antennas:
        raise ShapeMismatchError(
            f"channel has {h.shape[0]} entries, array has {n_antennas}"
        )
    if not np.isfinite(h.view(np.float64)).all():
        raise CkmError("non-finite channel entries")
    return h


@dataclass(frozen=True, eq=False)
class Measurement:
    """One sample: Tx position, Rx pose, and the measured channel vector."""

    tx_pos: np.ndarray
    rx_pos: np.ndarray
    channel: np.ndarray
    id: str
    rx_orientation: np.ndarray = field(
        default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0])
    )

    def __post_init__(self):
        tx = np.array(self.tx_pos, dtype=np.float64).reshape(3)
        rx = np.array(self.rx_pos, dtype=np.float64).reshape(3)
        q = quat_normalize(np.array(self.rx_orientation, dtype=np.float64).reshape(4))
        h = np.array(self.channel, dtype=np.complex128).reshape(-1)
        for arr in (tx, rx, q, h):
            arr.setflags(write=False)
        object.__setattr__(self, "tx_pos", tx)
        object.__setattr__(self, "rx_pos", rx)
        object.__setattr__(self, "rx_orientation", q)
        object.__setattr__(self, "channel", h)
        object.__setattr__(self, "id", str(self.id))


def validate_measurement(m: Measurement, wavelength: float, n_antennas: int) -> None:
    validate_channel(m.channel, n_antennas)
    if np.linalg.norm(m.tx_pos - m.rx_pos) < wavelength:
        raise PlacementViolationError(
            f"measurement {m.id}: Tx-Rx distance below one wavelength"
        )


# ---------------------------------------------------------------------------
# Scene checkpoint: one JSON header line, then raw little-endian float64
# blocks, one per field of SCENE_FIELD_WIDTHS, each of shape (count, width)
# in C order. Fully deterministic bytes; load(save(s)) round-trips bit-exact.
# ---------------------------------------------------------------------------


def _scene_field_widths(sh_degree: int) -> list[tuple[str, int]]:
    nfree = bsh_free_count(sh_degree)
    return [(name, w if w is not None else nfree) for name, w in SCENE_FIELD_WIDTHS]


def scene_to_arrays(scene: Scene) -> dict[str, np.ndarray]:
    """Stack per-ellipsoid parameters into (M, width) float64 arrays."""
    m = len(scene.ellipsoids)
    nfree = bsh_free_count(scene.sh_degree)
    out = {
        "mean": np.zeros((m, 3)),
        "rotation": np.zeros((m, 4)),
        "log_scales": np.zeros((m, 3)),
        "raw_opacity": np.zeros((m, 1)),
        "raw_gamma": np.zeros((m, 1)),
        "z_coeff": np.zeros((m, 1)),
        "bsh_re": np.zeros((m, nfree)),
        "bsh_im": np.zeros((m, nfree)),
    }
    for i, e in enumerate(scene.ellipsoids):
        out["mean"][i] = e.mean
        out["rotation"][i] = e.rotation
        out["log_scales"][i] = e.log_scales
        out["raw_opacity"][i, 0] = e.raw_opacity
        out["raw_gamma"][i, 0] = e.raw_gamma
        out["z_coeff"][i, 0] = e.z_coeff
        out["bsh_re"][i] = e.bsh_re
        out["bsh_im"][i] = e.bsh_im
    return out


def scene_from_arrays(
    arrays: dict[str, np.ndarray], bbox: np.ndarray, wavelength: float, sh_degree: int
) -> Scene:
    m = arrays["mean"].shape[0]
    ellipsoids = tuple(
        GaussianEllipsoid(
            mean=arrays["mean"][i],
            rotation=arrays["rotation"][i],
            log_scales=arrays["log_scales"][i],
            raw_opacity=float(arrays["raw_opacity"][i, 0]),
            raw_gamma=float(arrays["raw_gamma"][i, 0]),
            z_coeff=float(arrays["z_coeff"][i, 0]),
            bsh_re=arrays["bsh_re"][i],
            bsh_im=arrays["bsh_im"][i],
            sh_degree=sh_degree,
        )
        for i in range(m)
    )
    return Scene(ellipsoids=ellipsoids, bbox=bbox, wavelength=wavelength, sh_degree=sh_degree)


def save_scene_bytes(scene: Scene) -> bytes:
    arrays = scene_to_arrays(scene)
    header = {
        "format": SCENE_FORMAT_NAME,
        "version": SCENE_FORMAT_VERSION,
        "count": len(scene.ellipsoids),
        "sh_degree": scene.sh_degree,
        "wavelength": scene.wavelength,
        "bbox": [list(map(float, scene.bbox[0])), list(map(float, scene.bbox[1]))],
        "fields": [[n, w] for n, w in _scene_field_widths(scene.sh_degree)],
    }
    buf = io.BytesIO()
    buf.write(json.dumps(header, sort_keys=True).encode("utf-8"))
    buf.write(b"\n")
    for name, _ in _scene_field_widths(scene.sh_degree):
        block = np.ascontiguousarray(arrays[name], dtype="<f8")
        buf.write(block.tobytes())
    return buf.getvalue()


def load_scene_bytes(data: bytes) -> Scene:
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing header line")
    try:
        header = json.loads(data[: nl].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"bad header: {exc}") from exc
    if header.get("format") != SCENE_FORMAT_NAME:
        raise CheckpointError("not a scene checkpoint")
    if header.get("version") != SCENE_FORMAT_VERSION:
        raise CheckpointError(f"unsupported version {header.get('version')}")
    count = int(header["count"])
    sh_degree = int(header["sh_degree"])
    widths = _scene_field_widths(sh_degree)
    if header.get("fields") != [[n, w] for n, w in widths]:
        raise CheckpointError("unexpected field layout")
    arrays: dict[str, np.ndarray] = {}
    offset = nl + 1
    for name, w in widths:
        nbytes = count * w * 8
        block = data[offset : offset + nbytes]
        if len(block) != nbytes:
            raise CheckpointError(f"truncated block {name}")
        arrays[name] = np.frombuffer(block, dtype="<f8").reshape(count, w).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError("trailing bytes after last block")
    bbox = np.array(header["bbox"], dtype=np.float64)
    return scene_from_arrays(arrays, bbox, float(header["wavelength"]), sh_degree)


def save_scene(scene: Scene, path) -> None:
    with open(path, "wb") as f:
        f.write(save_scene_bytes(scene))


def load_scene(path) -> Scene:
    with open(path, "rb") as f:
        return load_scene_bytes(f.read())


def scenes_equal(a: Scene, b: Scene) -> bool:
    """Bit-exact equality, used by checkpoint round-trip checks."""
    if (
        len(a.ellipsoids) != len(b.ellipsoids)
        or a.wavelength != b.wavelength
        or a.sh_degree != b.sh_degree
        or not np.array_equal(a.bbox, b.bbox)
    ):
        return False
    for x, y in zip(a.ellipsoids, b.ellipsoids):
        if not (
            np.array_equal(x.mean, y.mean)
            and np.array_equal(x.rotation, y.rotation)
            and np.array_equal(x.log_scales, y.log_scales)
            and x.raw_opacity == y.raw_opacity
            and x.raw_gamma == y.raw_gamma
            and x.z_coeff == y.z_coeff
            and np.array_equal(x.bsh_re, y.bsh_re)
            and np.array_equal(x.bsh_im, y.bsh_im)
        ):
            return False
    return True
