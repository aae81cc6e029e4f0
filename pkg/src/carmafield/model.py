"""Closed-form second-order theory of causal CARMA random fields.

A CARMA(p, q) random field on R^d is a moving average of a mean-zero
Lévy basis against the kernel

    g(s) = b' exp(A_1 s_1) ... exp(A_d s_d) e_p   for s >= 0,  else 0,

where the A_i are p x p companion matrices with stable, pairwise
distinct eigenvalues and b = (b_0, ..., b_{p-1}) with b_q != 0 and
b_i = 0 for i > q.  Everything second-order about the field (kernel,
autocovariance, variogram, spectral density) is available in closed
form through the eigen-expansion of the kernel; this module computes
those forms.

All functions here are pure and the spec object is immutable, so the
module is safe for concurrent use without locking.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (
    DuplicateEigenvalue,
    IllConditionedVandermonde,
    InvalidSpec,
    NonConjugateSet,
)

__all__ = [
    "CarmaSpec",
    "CompanionMatrix",
    "KernelCoefficients",
    "companion_from_eigenvalues",
    "kernel_eval",
    "kernel_coefficients",
    "kernel_on_grid",
    "autocovariance",
    "autocovariance_grid",
    "variogram",
    "axis_variogram_coefficients",
    "axis_variogram",
    "spectral_density",
]

# Tolerances (absolute unless noted).  IMAG_TOL guards the imaginary
# residue of public real-valued results, COEFF_IMAG_TOL the polynomial
# coefficients built from conjugate-closed eigenvalue sets.
IMAG_TOL = 1e-9
COEFF_IMAG_TOL = 1e-10
CONJUGATE_TOL = 1e-9
DUPLICATE_TOL = 1e-12
MIN_EIGENVALUE_GAP = 1e-6
VANDERMONDE_COND_MAX = 1e12


def _check_conjugate_closed(eigs, tol=CONJUGATE_TOL):
    """Verify the list is closed under conjugation (greedy pairing)."""
    pending = [complex(e) for e in eigs if abs(complex(e).imag) > tol]
    while pending:
        lam = pending.pop()
        match = None
        for k, other in enumerate(pending):
            if abs(other - lam.conjugate()) <= tol * max(1.0, abs(lam)):
                match = k
                break
        if match is None:
            raise NonConjugateSet(
                f"eigenvalue {lam} has no complex-conjugate partner"
            )
        pending.pop(match)


def _check_distinct(eigs, gap):
    eigs = [complex(e) for e in eigs]
    for i in range(len(eigs)):
        for j in range(i + 1, len(eigs)):
            if abs(eigs[i] - eigs[j]) < gap:
                raise DuplicateEigenvalue(
                    f"eigenvalues {eigs[i]} and {eigs[j]} are closer than {gap}"
                )


def _real_strip(value, tol=IMAG_TOL, what="result"):
    value = complex(value)
    if abs(value.imag) > tol * max(1.0, abs(value.real)):
        raise IllConditionedVandermonde(
            f"{what} has imaginary residue {value.imag:.3e} above {tol:.0e}"
        )
    return value.real


@dataclass(frozen=True)
class CarmaSpec:
    """Full parameterization of a causal CARMA(p, q) random field.

    Parameters
    ----------
    b : sequence of float
        Moving-average coefficients (b_0, ..., b_{p-1}).  A sequence
        shorter than p is zero-padded on the right.
    eigenvalues : sequence of sequences of complex
        One list per axis with the p eigenvalues of that axis's
        companion matrix.  Each list must have strictly negative real
        parts, pairwise distinct entries and be closed under complex
        conjugation.
    kappa2 : float
        Variance of the driving noise per unit volume.
    """

    b: tuple
    eigenvalues: tuple
    kappa2: float = 1.0

    def __post_init__(self):
        eiglists = tuple(
            tuple(complex(e) for e in axis) for axis in self.eigenvalues
        )
        if not eiglists or any(len(axis) == 0 for axis in eiglists):
            raise InvalidSpec("need at least one eigenvalue per axis")
        p = len(eiglists[0])
        if any(len(axis) != p for axis in eiglists):
            raise InvalidSpec("all axes must have the same number of eigenvalues")
        b = tuple(float(v) for v in self.b)
        if len(b) > p:
            raise InvalidSpec(f"b has {len(b)} entries but p = {p}")
        b = b + (0.0,) * (p - len(b))
        if not any(v != 0.0 for v in b):
            raise InvalidSpec("b must not be identically zero")
        for axis in eiglists:
            if any(e.real >= 0 for e in axis):
                raise InvalidSpec("all eigenvalues need strictly negative real part")
            _check_distinct(axis, MIN_EIGENVALUE_GAP)
            _check_conjugate_closed(axis)
        if not self.kappa2 > 0:
            raise InvalidSpec("kappa2 must be positive")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "eigenvalues", eiglists)
        object.__setattr__(self, "kappa2", float(self.kappa2))

    @property
    def d(self):
        return len(self.eigenvalues)

    @property
    def p(self):
        return len(self.b)

    @property
    def q(self):
        return max(i for i, v in enumerate(self.b) if v != 0.0)

    def with_b(self, b):
        return CarmaSpec(b=tuple(b), eigenvalues=self.eigenvalues, kappa2=self.kappa2)

    def max_real_part(self):
        """Slowest decay rate, max over all eigenvalues of Re(lambda) (< 0)."""
        return max(e.real for axis in self.eigenvalues for e in axis)


@dataclass(frozen=True)
class CompanionMatrix:
    """Monic-polynomial coefficients (a_1, ..., a_p) of one companion matrix.

    The matrix itself has ones on the superdiagonal and
    (-a_p, ..., -a_1) as its last row.
    """

    coeffs: tuple

    @property
    def p(self):
        return len(self.coeffs)

    def matrix(self):
        p = self.p
        a = np.zeros((p, p))
        if p > 1:
            a[:-1, 1:] = np.eye(p - 1)
        a[-1, :] = -np.asarray(self.coeffs)[::-1]
        return a

    def polynomial(self, z):
        """Evaluate the monic polynomial z^p + a_1 z^{p-1} + ... + a_p."""
        return np.polyval(np.concatenate(([1.0], np.asarray(self.coeffs))), z)


def companion_from_eigenvalues(eigs):
    """Build the companion matrix whose eigenvalues are `eigs`.

    The coefficients come from expanding prod(z - lambda_k); conjugate
    closure of the input makes them real up to floating-point residue,
    which is stripped below ``COEFF_IMAG_TOL``.

    Raises
    ------
    DuplicateEigenvalue
        If two entries coincide within ``DUPLICATE_TOL``.
    NonConjugateSet
        If the list is not closed under conjugation.
    """
    eigs = [complex(e) for e in eigs]
    _check_distinct(eigs, DUPLICATE_TOL)
    _check_conjugate_closed(eigs)
    coeffs = np.poly(np.asarray(eigs))  # [1, a_1, ..., a_p]
    scale = max(1.0, float(np.max(np.abs(coeffs))))
    if np.max(np.abs(coeffs.imag)) > COEFF_IMAG_TOL * scale:
        raise NonConjugateSet("polynomial coefficients have non-real residue")
    return CompanionMatrix(coeffs=tuple(float(c) for c in coeffs.real[1:]))


@lru_cache(maxsize=256)
def _axis_decomposition(eigs):
    """Vandermonde factorization (V, V^{-1}) for one axis's eigenvalues."""
    lam = np.asarray(eigs, dtype=complex)
    p = lam.size
    vmat = np.vander(lam, N=p, increasing=True).T  # vmat[j, k] = lam_k^j
    cond = np.linalg.cond(vmat)
    if not np.isfinite(cond) or cond > VANDERMONDE_COND_MAX:
        raise IllConditionedVandermonde(
            f"Vandermonde condition {cond:.3e} exceeds {VANDERMONDE_COND_MAX:.0e}"
        )
    return vmat, np.linalg.inv(vmat)


@dataclass(frozen=True)
class KernelCoefficients:
    """Weights of the kernel's expansion into separable exponentials.

    ``tensor[k_1, ..., k_d]`` multiplies exp(lam_{1,k_1} s_1) * ... *
    exp(lam_{d,k_d} s_d); summing over all index tuples reproduces the
    kernel for s >= 0.
    """

    axis_eigenvalues: tuple
    tensor_data: tuple  # flattened complex entries, row-major

    @property
    def tensor(self):
        shape = tuple(len(axis) for axis in self.axis_eigenvalues)
        return np.asarray(self.tensor_data, dtype=complex).reshape(shape)

    def as_dict(self):
        tens = self.tensor
        return {idx: tens[idx] for idx in np.ndindex(tens.shape)}

    def reconstruct(self, s):
        """Evaluate the expansion at one point (0 outside s >= 0)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if np.any(s < 0):
            return 0.0
        val = self.tensor
        for axis, si in zip(self.axis_eigenvalues, s):
            val = np.tensordot(val, np.exp(np.asarray(axis) * si), axes=([0], [0]))
        return _real_strip(val, what="kernel reconstruction")


@lru_cache(maxsize=128)
def _coeff_tensor(spec):
    """Coefficient tensor via spectral projectors, as a chain product.

    With P_i^{(k)} = V_i E_k V_i^{-1} the projector onto the k-th
    eigenvalue of axis i, the coefficient for (k_1, ..., k_d) is
    b' P_1^{(k_1)} ... P_d^{(k_d)} e_p.  Because each projector is the
    outer product of a column of V_i and a row of V_i^{-1}, the d-fold
    product collapses to a chain of scalar couplings.
    """
    b = np.asarray(spec.b, dtype=complex)
    axes = [np.asarray(a, dtype=complex) for a in spec.eigenvalues]
    decomps = [_axis_decomposition(a) for a in spec.eigenvalues]
    d = len(axes)
    letters = "abcdefghijklm"
    operands = [b @ decomps[0][0]]
    subs = [letters[0]]
    for i in range(1, d):
        operands.append(decomps[i - 1][1] @ decomps[i][0])
        subs.append(letters[i - 1] + letters[i])
    ep = np.zeros(spec.p, dtype=complex)
    ep[-1] = 1.0
    operands.append(decomps[-1][1] @ ep)
    subs.append(letters[d - 1])
    tensor = np.einsum(",".join(subs) + "->" + letters[:d], *operands)
    return tensor


def kernel_coefficients(spec):
    """Coefficients of the kernel's separable eigen-expansion.

    Returns
    -------
    KernelCoefficients
        One (possibly complex) weight per tuple of per-axis eigenvalue
        indices.  The weights of conjugate index tuples are conjugate,
        so every reconstruction is real.
    """
    tensor = _coeff_tensor(spec)
    return KernelCoefficients(
        axis_eigenvalues=spec.eigenvalues,
        tensor_data=tuple(tensor.ravel().tolist()),
    )


def kernel_eval(spec, s):
    """Kernel value g(s) via Vandermonde-diagonalized matrix exponentials.

    Zero whenever any coordinate of ``s`` is negative.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    if s.size != spec.d:
        raise InvalidSpec(f"point has {s.size} coordinates, spec has d = {spec.d}")
    if np.any(s < 0):
        return 0.0
    w = np.asarray(spec.b, dtype=complex)
    for axis, si in zip(spec.eigenvalues, s):
        vmat, vinv = _axis_decomposition(axis)
        w = (w @ vmat) * np.exp(np.asarray(axis, dtype=complex) * si) @ vinv
    return _real_strip(w[-1], what="kernel value")


def kernel_on_grid(spec, axes_points):
    """Kernel values on a tensor-product grid of coordinates.

    Parameters
    ----------
    axes_points : sequence of 1-D arrays
        Coordinates per axis.  Negative coordinates give zero rows, so
        the array is the kernel sampled on the full product grid.

    Returns
    -------
    ndarray of shape (len(axes_points[0]), ..., len(axes_points[d-1]))
    """
    if len(axes_points) != spec.d:
        raise InvalidSpec("one coordinate array per axis required")
    tensor = _coeff_tensor(spec)
    letters = "abcdefghijklm"
    grid_letters = "nopqrstuvw"
    operands = [tensor]
    subs = [letters[: spec.d]]
    for i, pts in enumerate(axes_points):
        pts = np.asarray(pts, dtype=float)
        lam = np.asarray(spec.eigenvalues[i], dtype=complex)
        emat = np.exp(np.outer(lam, pts))
        emat[:, pts < 0] = 0.0
        operands.append(emat)
        subs.append(letters[i] + grid_letters[i])
    out = grid_letters[: spec.d]
    vals = np.einsum(",".join(subs) + "->" + out, *operands)
    resid = np.max(np.abs(vals.imag)) if vals.size else 0.0
    if resid > IMAG_TOL * max(1.0, float(np.max(np.abs(vals.real))) if vals.size else 1.0):
        raise IllConditionedVandermonde(
            f"kernel grid has imaginary residue {resid:.3e}"
        )
    return vals.real


def _pair_axis_contract(spec, axis_matrices, keep_axis=None):
    """Contract sum_{K,K'} C[K] C[K'] prod_i M_i[K_i, K'_i].

    ``axis_matrices[i]`` may have a trailing grid dimension, in which
    case the result keeps one grid axis per such matrix.  With
    ``keep_axis = i`` the K'_i index is left free instead of summed.
    """
    tensor = _coeff_tensor(spec)
    d = spec.d
    letters = "abcdefghijklm"
    grid_letters = "nopqrstuvw"
    sub_k = letters[:d]
    sub_kp = letters[d:2 * d]
    operands = [tensor, tensor]
    subs = [sub_k, sub_kp]
    out = ""
    for i, mat in enumerate(axis_matrices):
        s = sub_k[i] + sub_kp[i]
        if mat.ndim == 3:
            s += grid_letters[i]
            out += grid_letters[i]
        operands.append(mat)
        subs.append(s)
    if keep_axis is not None:
        out = sub_kp[keep_axis] + out
    return np.einsum(",".join(subs) + "->" + out, *operands)


def _pair_sums(axis):
    lam = np.asarray(axis, dtype=complex)
    return lam[:, None] + lam[None, :]


def autocovariance(spec, t):
    """Autocovariance gamma(t) of the field, lags of any sign.

    Integrating the kernel eigen-expansion against its shift gives,
    per axis,

        I(lam, lam', tau) = exp(lam' tau) / (-(lam + lam'))   tau >= 0
                            exp(-lam tau) / (-(lam + lam'))   tau < 0,

    and gamma(t) = kappa2 * sum over eigenvalue-tuple pairs of the
    coefficient products times the per-axis factors.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size != spec.d:
        raise InvalidSpec(f"lag has {t.size} coordinates, spec has d = {spec.d}")
    mats = []
    for axis, ti in zip(spec.eigenvalues, t):
        lam = np.asarray(axis, dtype=complex)
        denom = -_pair_sums(axis)
        if ti >= 0:
            mats.append(np.exp(lam[None, :] * ti) / denom)
        else:
            mats.append(np.exp(-lam[:, None] * ti) / denom)
    val = spec.kappa2 * _pair_axis_contract(spec, mats)
    return _real_strip(val, what="autocovariance")


def autocovariance_grid(spec, axes_points):
    """gamma on a tensor-product grid of lags (vectorized over the grid)."""
    if len(axes_points) != spec.d:
        raise InvalidSpec("one lag array per axis required")
    mats = []
    for axis, pts in zip(spec.eigenvalues, axes_points):
        pts = np.asarray(pts, dtype=float)
        lam = np.asarray(axis, dtype=complex)
        denom = -_pair_sums(axis)
        pos = np.exp(lam[None, :, None] * np.where(pts >= 0, pts, 0.0)[None, None, :])
        neg = np.exp(-lam[:, None, None] * np.where(pts < 0, pts, 0.0)[None, None, :])
        mats.append(np.where(pts[None, None, :] >= 0, pos, neg) / denom[:, :, None])
    vals = spec.kappa2 * _pair_axis_contract(spec, mats)
    resid = np.max(np.abs(vals.imag)) if vals.size else 0.0
    if resid > IMAG_TOL * max(1.0, float(np.max(np.abs(vals.real))) if vals.size else 1.0):
        raise IllConditionedVandermonde(
            f"autocovariance grid has imaginary residue {resid:.3e}"
        )
    return vals.real


def variogram(spec, t):
    """Variogram psi(t) = 2 (gamma(0) - gamma(t))."""
    zero = np.zeros(spec.d)
    return 2.0 * (autocovariance(spec, zero) - autocovariance(spec, t))


def axis_variogram_coefficients(spec, axis):
    """Exponential-sum weights of the variogram on one principal axis.

    The variogram restricted to axis i is a one-dimensional exponential
    sum psi(tau e_i) = 2 kappa2 sum_k dstar_k (1 - exp(lam_{i,k} |tau|)).
    The weights arise from the full second-order expansion by summing
    out every other axis.

    Parameters
    ----------
    axis : int
        Axis index, 0-based.

    Returns
    -------
    list of (eigenvalue, weight) pairs, both complex, aligned with the
    spec's eigenvalue order on that axis.
    """
    if not 0 <= axis < spec.d:
        raise InvalidSpec(f"axis {axis} out of range for d = {spec.d}")
    mats = [1.0 / (-_pair_sums(a)) for a in spec.eigenvalues]
    dstar = _pair_axis_contract(spec, mats, keep_axis=axis)
    return list(zip(spec.eigenvalues[axis], dstar))


def axis_variogram(spec, axis, taus):
    """Variogram ordinates psi(tau e_axis) for an array of taus."""
    pairs = axis_variogram_coefficients(spec, axis)
    lam = np.asarray([p[0] for p in pairs], dtype=complex)
    dstar = np.asarray([p[1] for p in pairs], dtype=complex)
    taus = np.abs(np.atleast_1d(np.asarray(taus, dtype=float)))
    vals = 2.0 * spec.kappa2 * ((1.0 - np.exp(np.outer(taus, lam))) @ dstar)
    resid = float(np.max(np.abs(vals.imag))) if vals.size else 0.0
    if resid > IMAG_TOL * max(1.0, float(np.max(np.abs(vals.real))) if vals.size else 1.0):
        raise IllConditionedVandermonde(
            f"axis variogram has imaginary residue {resid:.3e}"
        )
    return vals.real


def _axis_poly_coeffs(spec):
    """Monic polynomial coefficients [1, a_1, ..., a_p] for each axis."""
    out = []
    for axis in spec.eigenvalues:
        comp = companion_from_eigenvalues(axis)
        out.append(np.concatenate(([1.0], np.asarray(comp.coeffs))))
    return out


def _q_matrix(acoeffs, z):
    """Numerator matrix polynomial a(z) (z I - A)^{-1}, entrywise.

    ``z`` may be an array; the result has shape z.shape + (p, p).
    """
    p = len(acoeffs) - 1
    z = np.asarray(z, dtype=complex)
    powers = {}

    def zpow(n):
        if n not in powers:
            powers[n] = z ** n
        return powers[n]

    out = np.zeros(z.shape + (p, p), dtype=complex)
    for k in range(1, p + 1):
        for l in range(1, p + 1):
            if k <= l:
                entry = zpow(p - 1 + k - l).copy()
                for j in range(1, p - l + 1):
                    entry += acoeffs[j] * zpow(p - 1 - j + k - l)
            else:
                entry = np.zeros_like(z)
                for j in range(p - l + 1, p + 1):
                    entry += acoeffs[j] * zpow(p - 1 - j + k - l)
                entry = -entry
            out[..., k - 1, l - 1] = entry
    return out


def spectral_density(spec, omega):
    """Spectral density f(omega) = kappa2 / (2 pi)^d * |Q(i w) / P(i w)|^2.

    P is the product of the per-axis monic polynomials; Q chains the
    per-axis numerator matrix polynomials a_i(z) (z I - A_i)^{-1}
    between b and e_p.  Accepts a single frequency vector or an array
    of shape (..., d).

    Strictly negative eigenvalue real parts keep P free of real zeros;
    this is asserted, not handled.
    """
    omega = np.asarray(omega, dtype=float)
    scalar = omega.ndim == 1
    omega = np.atleast_2d(omega)
    if omega.shape[-1] != spec.d:
        raise InvalidSpec("frequency must have d components")
    acoeffs = _axis_poly_coeffs(spec)
    z = 1j * omega
    pval = np.ones(omega.shape[:-1], dtype=complex)
    for i in range(spec.d):
        pval = pval * np.polyval(acoeffs[i], z[..., i])
    assert np.all(np.abs(pval) > 0), "pole on the real frequency axis"
    vec = np.broadcast_to(
        np.asarray(spec.b, dtype=complex), omega.shape[:-1] + (spec.p,)
    )
    for i in range(spec.d):
        qmat = _q_matrix(acoeffs[i], z[..., i])
        vec = np.einsum("...k,...kl->...l", vec, qmat)
    qval = vec[..., -1]
    dens = spec.kappa2 / (2.0 * np.pi) ** spec.d * np.abs(qval / pval) ** 2
    return float(dens[0]) if scalar else dens
