"""Polarization algebra on Stokes vectors and Mueller matrices.

Provides the rotated optical-element matrices used by the forward model
(linear polarizer, quarter-wave plate, ideal depolarizer), the coherency-based
physical-validity projection (Cloude filtering), and the Lu-Chipman polar
decomposition with its derived scalar maps (diattenuation, polarizance,
polarization preservation, retardance).

Conventions
-----------
* Stokes vectors are length-4 float arrays ``[s0, s1, s2, s3]`` with ``s0``
  the intensity in arbitrary radiometric units.
* Mueller matrices are 4x4 float arrays indexed ``M[i, j]`` with
  ``i, j in {0..3}``; the vectorized form is row-major,
  ``[M00, M01, ..., M33]``.
* All element angles are in radians.

Most functions accept stacked inputs: an array of shape ``(..., 4, 4)`` is
processed along its leading dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DecompositionError",
    "DecompositionMaps",
    "linear_polarizer",
    "quarter_wave_plate",
    "ideal_depolarizer",
    "unpolarized_stokes",
    "degree_of_polarization",
    "vectorize",
    "matricize",
    "coherency_matrix",
    "mueller_from_coherency",
    "coherency_eigenvalues",
    "is_physically_valid",
    "cloude_filter",
    "diattenuation",
    "polarizance",
    "lu_chipman_decompose",
    "lu_chipman_maps",
]


class DecompositionError(ValueError):
    """Raised when the polar decomposition is undefined for the input."""


def unpolarized_stokes(intensity: float = 1.0) -> np.ndarray:
    """Stokes vector of unpolarized light with the given intensity."""
    return np.array([intensity, 0.0, 0.0, 0.0])


def degree_of_polarization(s: np.ndarray) -> float:
    """sqrt(s1^2 + s2^2 + s3^2) / s0 of a Stokes vector."""
    s = np.asarray(s, dtype=float)
    return float(np.sqrt(s[1] ** 2 + s[2] ** 2 + s[3] ** 2) / s[0])


def linear_polarizer(theta: float) -> np.ndarray:
    """Mueller matrix of an ideal linear polarizer with transmission axis at
    ``theta`` radians.
    """
    c = np.cos(2.0 * theta)
    s = np.sin(2.0 * theta)
    return 0.5 * np.array(
        [
            [1.0, c, s, 0.0],
            [c, c * c, s * c, 0.0],
            [s, s * c, s * s, 0.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )


def quarter_wave_plate(theta: float) -> np.ndarray:
    """Mueller matrix of an ideal quarter-wave plate with fast axis at
    ``theta`` radians.

    The closed form is pi-periodic in ``theta``.
    """
    c = np.cos(2.0 * theta)
    s = np.sin(2.0 * theta)
    return np.array(
        [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, c * c, s * c, -s],
            [0.0, s * c, s * s, c],
            [0.0, s, -c, 0.0],
        ]
    )


def ideal_depolarizer(alpha: float) -> np.ndarray:
    """Isotropic depolarizer ``diag(1, alpha, alpha, alpha)``.

    ``alpha`` is the depolarization factor; smaller magnitude means stronger
    depolarization.  Rejects ``|alpha| > 1``.
    """
    if abs(alpha) > 1.0:
        raise ValueError(f"depolarization factor must satisfy |alpha| <= 1, got {alpha}")
    return np.diag([1.0, alpha, alpha, alpha])


def vectorize(m: np.ndarray) -> np.ndarray:
    """Row-major 16-vector of a Mueller matrix (stacked inputs allowed)."""
    m = np.asarray(m)
    return m.reshape(m.shape[:-2] + (16,))


def matricize(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vectorize`; exact bitwise round trip."""
    v = np.asarray(v)
    return v.reshape(v.shape[:-1] + (4, 4))


# Pauli spin basis used for the Mueller <-> coherency transform.
_PAULI = np.array(
    [
        [[1, 0], [0, 1]],
        [[1, 0], [0, -1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
    ],
    dtype=complex,
)

# Basis matrices of the transform: PI[4*i + j] = kron(sigma_i, conj(sigma_j)).
# They are Hermitian and orthogonal with trace(PI_k @ PI_l) = 4*delta_kl,
# which makes the transform below involutive up to the 1/4 factor.
_PI = np.stack(
    [np.kron(_PAULI[i], _PAULI[j].conj()) for i in range(4) for j in range(4)]
)


def coherency_matrix(m: np.ndarray) -> np.ndarray:
    """Hermitian coherency matrix of a Mueller matrix.

    ``H = (1/4) * sum_ij M_ij * kron(sigma_i, conj(sigma_j))`` over the Pauli
    basis ``sigma_0..sigma_3``.  ``trace(H) = M00``, and ``M`` is physically
    valid exactly when ``H`` is positive semidefinite.  Accepts stacked input
    of shape ``(..., 4, 4)``.
    """
    v = vectorize(np.asarray(m, dtype=float))
    return np.einsum("kab,...k->...ab", _PI, v) / 4.0


def mueller_from_coherency(h: np.ndarray) -> np.ndarray:
    """Inverse of :func:`coherency_matrix` (real part of the projection)."""
    return np.einsum("kab,...ba->...k", _PI, h).real.reshape(
        np.shape(h)[:-2] + (4, 4)
    )


def coherency_eigenvalues(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of the coherency matrix of ``m``."""
    return np.linalg.eigvalsh(coherency_matrix(m))


def is_physically_valid(m: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
    """Whether all coherency eigenvalues are >= ``-rtol`` times the largest.

    Returns a boolean (array, for stacked input).
    """
    lam = coherency_eigenvalues(m)
    scale = np.maximum(lam[..., -1], np.finfo(float).tiny)
    return np.all(lam >= -rtol * scale[..., None], axis=-1)


def cloude_filter(m: np.ndarray) -> np.ndarray:
    """Project a Mueller matrix onto the set of physically valid matrices.

    Builds the coherency matrix, clamps its negative eigenvalues to zero, and
    transforms back.  Because the Mueller <-> coherency map is a scaled
    isometry under the Frobenius norm, this is the nearest valid matrix in
    Frobenius distance.  Valid matrices are fixed points; the projection is
    idempotent.  Accepts stacked input of shape ``(..., 4, 4)``.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("Mueller matrix entries must be finite")
    h = coherency_matrix(m)
    lam, vec = np.linalg.eigh(h)
    lam = np.clip(lam, 0.0, None)
    h_valid = np.einsum("...ak,...k,...bk->...ab", vec, lam, vec.conj())
    return mueller_from_coherency(h_valid)


def diattenuation(m: np.ndarray) -> float:
    """Diattenuation ``sqrt(M01^2 + M02^2 + M03^2) / M00``."""
    m = np.asarray(m, dtype=float)
    return float(np.linalg.norm(m[0, 1:]) / m[0, 0])


def polarizance(m: np.ndarray) -> float:
    """Polarizance ``sqrt(M10^2 + M20^2 + M30^2) / M00``."""
    m = np.asarray(m, dtype=float)
    return float(np.linalg.norm(m[1:, 0]) / m[0, 0])


@dataclass(frozen=True)
class DecompositionMaps:
    """Scalar maps derived from the Lu-Chipman polar decomposition.

    diattenuation and polarizance lie in [0, 1] for physically valid input;
    preservation is the mean of the three diagonal depolarization entries
    (1 means fully preserved polarization); retardance is in [0, pi] radians.
    """

    diattenuation: float
    polarizance: float
    preservation: float
    retardance: float


def _diattenuator_from_first_row(m: np.ndarray) -> np.ndarray:
    """Diattenuator factor built from the first row of ``m`` (D < 1)."""
    m00 = m[0, 0]
    dvec = m[0, 1:] / m00
    d = np.linalg.norm(dvec)
    out = np.eye(4)
    if d > 1e-15:
        dhat = dvec / d
        dperp = np.sqrt(max(1.0 - d * d, 0.0))
        out[0, 1:] = dvec
        out[1:, 0] = dvec
        out[1:, 1:] = dperp * np.eye(3) + (1.0 - dperp) * np.outer(dhat, dhat)
    return m00 * out


def lu_chipman_decompose(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lu-Chipman polar decomposition ``M = M_depol @ M_ret @ M_diat``.

    Factors the matrix into a depolarizer, a retarder, and a diattenuator,
    in that multiplication order (diattenuation applied first along the
    beam).  The product of the returned factors reproduces ``M`` up to
    roundoff whenever the decomposition is defined.

    Raises
    ------
    DecompositionError
        If ``M00 <= 1e-12`` (normalization undefined) or the diattenuation
        reaches 1 within 1e-9 (singular diattenuator: depolarization and
        retardance are undefined for a pure diattenuator).
    """
    m = np.asarray(m, dtype=float)
    m00 = m[0, 0]
    if not (m00 > 1e-12):
        raise DecompositionError(f"M00 must be positive, got {m00}")
    d = diattenuation(m)
    if d >= 1.0 - 1e-9:
        raise DecompositionError(
            "pure diattenuator; depolarization/retardance undefined"
        )

    m_diat = _diattenuator_from_first_row(m)
    m_prime = m @ np.linalg.inv(m_diat)

    sub = m_prime[1:, 1:]
    gram = sub @ sub.T
    lam = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    s1, s2, s3 = np.sqrt(lam)
    quad = s1 * s2 + s2 * s3 + s3 * s1

    m_depol = np.eye(4)
    m_depol[1:, 0] = m_prime[1:, 0]
    if quad > 1e-15 * max(lam[2], 1.0):
        sign = 1.0 if np.linalg.det(sub) >= 0.0 else -1.0
        sub_depol = sign * np.linalg.inv(gram + quad * np.eye(3)) @ (
            (s1 + s2 + s3) * gram + s1 * s2 * s3 * np.eye(3)
        )
        m_depol[1:, 1:] = sub_depol
        m_ret = np.linalg.inv(m_depol) @ m_prime
    else:
        # Degenerate depolarizer block (at most one nonzero singular value):
        # take the retarder rotation from the SVD of the 3x3 block.
        u, sing, vt = np.linalg.svd(sub)
        m_depol[1:, 1:] = (u * sing) @ u.T
        m_ret = np.eye(4)
        m_ret[1:, 1:] = u @ vt

    return m_depol, m_ret, m_diat


def lu_chipman_maps(m: np.ndarray) -> DecompositionMaps:
    """Scalar maps of the Lu-Chipman decomposition of a valid Mueller matrix.

    See :class:`DecompositionMaps`.  Raises :class:`DecompositionError` for
    inputs where the decomposition is undefined (see
    :func:`lu_chipman_decompose`); diattenuation and polarizance of such
    matrices are still available via :func:`diattenuation` and
    :func:`polarizance`.
    """
    m = np.asarray(m, dtype=float)
    m_depol, m_ret, _ = lu_chipman_decompose(m)
    rho = float(np.trace(m_depol[1:, 1:]) / 3.0)
    ret = float(np.arccos(np.clip(np.trace(m_ret) / 2.0 - 1.0, -1.0, 1.0)))
    return DecompositionMaps(
        diattenuation=diattenuation(m),
        polarizance=polarizance(m),
        preservation=rho,
        retardance=ret,
    )
