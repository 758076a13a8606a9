"""Real spherical harmonics and the reciprocity-constrained bidirectional
scattering coefficient.

The basis uses the hemisphere-friendly normalization
sqrt((2n+1)/(2 pi) * (n-i)!/(n+i)!) (note 2 pi, not 4 pi) with
Condon-Shortley associated Legendre polynomials, ordered
(0,0), (1,-1), (1,0), (1,1), ..., (D,D).

Under (theta, phi) -> (pi - theta, pi + phi) a degree-n basis function picks
up the sign (-1)^n. Storing only the upper triangle of the coefficient
matrix and mirroring with that parity sign makes the bidirectional
coefficient invariant under swapping incident and scattering directions, by
construction - no penalty or projection step is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import torch

from .core import UnsupportedDegreeError, bsh_free_count

MAX_DEGREE = 3


def basis_size(degree: int) -> int:
    return (degree + 1) ** 2


def _check_degree(degree: int) -> None:
    if not 0 <= degree <= MAX_DEGREE:
        raise UnsupportedDegreeError(f"degree {degree} not in 0..{MAX_DEGREE}")


@lru_cache(maxsize=None)
def degree_of_index(degree: int) -> np.ndarray:
    """Degree n of each basis entry, in basis order."""
    _check_degree(degree)
    return np.repeat(np.arange(degree + 1), 2 * np.arange(degree + 1) + 1)


@lru_cache(maxsize=None)
def even_indices(degree: int) -> tuple[int, ...]:
    """0-based indices of even-degree entries (the paper-style D_e set is
    these + 1)."""
    n = degree_of_index(degree)
    return tuple(int(i) for i in np.nonzero(n % 2 == 0)[0])


@lru_cache(maxsize=None)
def odd_indices(degree: int) -> tuple[int, ...]:
    n = degree_of_index(degree)
    return tuple(int(i) for i in np.nonzero(n % 2 == 1)[0])


@lru_cache(maxsize=None)
def parity_signs(degree: int) -> np.ndarray:
    """(-1)^n per basis entry: sign under the direction-swap map."""
    s = np.where(degree_of_index(degree) % 2 == 0, 1.0, -1.0)
    s.setflags(write=False)
    return s


def _norm_const(n: int, i: int) -> float:
    return math.sqrt(
        (2 * n + 1) / (2 * math.pi) * math.factorial(n - i) / math.factorial(n + i)
    )


# Normalization constants N(n, |i|), positive orders only.
_N00 = _norm_const(0, 0)
_N10 = _norm_const(1, 0)
_N11 = _norm_const(1, 1)
_N20 = _norm_const(2, 0)
_N21 = _norm_const(2, 1)
_N22 = _norm_const(2, 2)
_N30 = _norm_const(3, 0)
_N31 = _norm_const(3, 1)
_N32 = _norm_const(3, 2)
_N33 = _norm_const(3, 3)


def sh_basis_t(theta: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
    """Degree-3 basis, batched: (...,) angles -> (..., 16). Differentiable.

    Condon-Shortley P_n^i are inlined; for negative orders the identity
    H_n^{-i} = (-1)^i (n-i)!/(n+i)! H_n^i folds into the constants, giving
    y_{n,-i} = (-1)^{i+1} N(n,i) P_n^i sin(i phi).
    """
    t = torch.cos(theta)
    s = torch.sin(theta)
    t2 = t * t
    s2 = s * s
    cp = torch.cos(phi)
    sp = torch.sin(phi)
    c2p = torch.cos(2.0 * phi)
    s2p = torch.sin(2.0 * phi)
    c3p = torch.cos(3.0 * phi)
    s3p = torch.sin(3.0 * phi)

    p11 = -s
    p21 = -3.0 * s * t
    p22 = 3.0 * s2
    p31 = -1.5 * (5.0 * t2 - 1.0) * s
    p32 = 15.0 * t * s2
    p33 = -15.0 * s2 * s

    return torch.stack(
        [
            torch.full_like(t, _N00),
            _N11 * p11 * sp,            # (1,-1)
            _N10 * t,                   # (1, 0)
            _N11 * p11 * cp,            # (1, 1)
            -_N22 * p22 * s2p,          # (2,-2)
            _N21 * p21 * sp,            # (2,-1)
            _N20 * 0.5 * (3.0 * t2 - 1.0),
            _N21 * p21 * cp,            # (2, 1)
            _N22 * p22 * c2p,           # (2, 2)
            _N33 * p33 * s3p,           # (3,-3)
            -_N32 * p32 * s2p,          # (3,-2)
            _N31 * p31 * sp,            # (3,-1)
            _N30 * 0.5 * (5.0 * t2 - 3.0) * t,
            _N31 * p31 * cp,            # (3, 1)
            _N32 * p32 * c2p,           # (3, 2)
            _N33 * p33 * c3p,           # (3, 3)
        ],
        dim=-1,
    )


def sh_basis(theta: float, phi: float, degree: int = MAX_DEGREE) -> np.ndarray:
    """Basis vector of length (degree+1)^2 at a single direction."""
    _check_degree(degree)
    full = (
        sh_basis_t(
            torch.tensor(float(theta), dtype=torch.float64),
            torch.tensor(float(phi), dtype=torch.float64),
        )
        .numpy()
    )
    return full[: basis_size(degree)].copy()


# ---------------------------------------------------------------------------
# Parity-symmetric coefficient storage. free[t] enumerates the upper triangle
# (i <= k) row-major; the mirrored entry carries +1 when i and k have
# same-parity degrees and -1 otherwise.
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _triangle_maps(degree: int) -> tuple[np.ndarray, np.ndarray]:
    _check_degree(degree)
    nb = basis_size(degree)
    free_index = np.zeros((nb, nb), dtype=np.int64)
    sign = np.ones((nb, nb), dtype=np.float64)
    parity = parity_signs(degree)
    t = 0
    for i in range(nb):
        for k in range(i, nb):
            free_index[i, k] = t
            free_index[k, i] = t
            if i != k:
                sign[k, i] = 1.0 if parity[i] == parity[k] else -1.0
            t += 1
    free_index.setflags(write=False)
    sign.setflags(write=False)
    return free_index, sign


@dataclass(frozen=True, eq=False)
class BshCoefficients:
    """Free parameters of one parity-symmetric coefficient matrix.

    Any instance materializes to a matrix satisfying the swap symmetry
    exactly; coefficient matrices violating it cannot be represented.
    """

    free_params: np.ndarray
    part: str = "real"  # or "imag"
    degree: int = MAX_DEGREE

    def __post_init__(self):
        _check_degree(self.degree)
        if self.part not in ("real", "imag"):
            raise ValueError("part must be 'real' or 'imag'")
        free = np.array(self.free_params, dtype=np.float64).reshape(
            bsh_free_count(self.degree)
        )
        free.setflags(write=False)
        object.__setattr__(self, "free_params", free)


def materialize(c: BshCoefficients) -> np.ndarray:
    """Full coefficient matrix; mirrored entries are copied/negated bit-exactly."""
    free_index, sign = _triangle_maps(c.degree)
    return c.free_params[free_index] * sign


def materialize_free_t(free: torch.Tensor, degree: int = MAX_DEGREE) -> torch.Tensor:
    """Batched torch materialization: (..., F) -> (..., nb, nb)."""
    free_index, sign = _triangle_maps(degree)
    idx = torch.from_numpy(np.ascontiguousarray(free_index))
    sgn = torch.from_numpy(np.ascontiguousarray(sign)).to(free.dtype)
    return free[..., idx] * sgn


def bound_magnitude_t(re: torch.Tensor, im: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Smooth map pulling |V| below 1: V -> V / (1 + |V|).

    Monotone in magnitude and phase-preserving; the 1e-300 bias keeps the
    gradient finite at the origin without measurably moving any value.
    """
    r = torch.sqrt(re * re + im * im + 1e-300)
    scale = 1.0 / (1.0 + r)
    return re * scale, im * scale


def bsh_eval_t(
    a_re: torch.Tensor,
    a_im: torch.Tensor,
    theta: torch.Tensor,
    phi: torch.Tensor,
    theta_in: torch.Tensor,
    phi_in: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Bounded bidirectional coefficient for batches of (..., 16, 16)
    matrices and (...,) angle tensors. Returns (re, im)."""
    y_out = sh_basis_t(theta, phi)
    y_in = sh_basis_t(theta_in, phi_in)
    re = torch.einsum("...i,...ik,...k->...", y_out, a_re, y_in)
    im = torch.einsum("...i,...ik,...k->...", y_out, a_im, y_in)
    return bound_magnitude_t(re, im)


def bsh_eval(
    c_re: BshCoefficients,
    c_im: BshCoefficients,
    theta: float,
    phi: float,
    theta_in: float,
    phi_in: float,
) -> complex:
    """Scalar bounded bidirectional coefficient V(theta, phi, theta', phi')."""
    if c_re.degree != MAX_DEGREE or c_im.degree != MAX_DEGREE:
        raise UnsupportedDegreeError("bidirectional evaluation is fixed to degree 3")
    y_out = sh_basis(theta, phi)
    y_in = sh_basis(theta_in, phi_in)
    re = float(y_out @ materialize(c_re) @ y_in)
    im = float(y_out @ materialize(c_im) @ y_in)
    r = math.sqrt(re * re + im * im)
    return complex(re / (1.0 + r), im / (1.0 + r))
