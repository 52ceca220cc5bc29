"""Symmetric 3x3 eigen-decomposition and vorticity-alignment metrics.

The per-point decomposition uses the closed-form trigonometric solver with
a cyclic-Jacobi fallback when eigenvalues are nearly degenerate. A separate
vectorized eigenvalue routine serves whole-field monitors where only the
values are needed.

Conventions: eigenvalues sorted descending; the first two eigenvectors are
sign-fixed so their largest-magnitude component is positive (ties broken by
lowest index) and the third is their cross product, which keeps the frame
right-handed. Trajectory-level continuity is handled by the probe layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

_SYM_TOL = 1e-12
_DEGENERACY_TOL = 1e-9


@dataclass
class EigenFrame:
    """Eigenvalues (descending) and right-handed orthonormal eigenvectors.

    ``eigenvectors[i]`` is the unit eigenvector for ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source_tag: str = ""

    def reconstruct(self) -> np.ndarray:
        """Sum of lam_i e_i e_i^T; equals the input matrix up to roundoff."""
        v = self.eigenvectors
        return (v.T * self.eigenvalues) @ v


@dataclass
class AlignmentMetrics:
    """How well a direction w aligns with the eigenframe of a symmetric M.

    cosines: |cos| of the angle between w and each eigenvector.
    rayleigh: (w . M w) / |w|**2, the eigenvalue w would have if aligned.
    residual: |M w - rayleigh * w| / |M w|; zero iff w is an eigenvector.
    """

    cosines: np.ndarray
    best_index: int
    rayleigh: float
    residual: float
    source_tag: str = ""

    @property
    def best_cosine(self) -> float:
        return float(self.cosines[self.best_index])


def _check_symmetric(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (3, 3):
        raise ContractViolation(f"expected a 3x3 matrix, got shape {M.shape}")
    if not np.isfinite(M).all():
        raise ContractViolation("matrix contains non-finite entries")
    scale = np.abs(M).max()
    if np.abs(M - M.T).max() > _SYM_TOL * max(scale, 1e-300):
        raise ContractViolation("matrix is not symmetric to 1e-12 relative")
    return 0.5 * (M + M.T)


def _closed_form_eigenvalues(M: np.ndarray) -> np.ndarray:
    """Trigonometric eigenvalues of a symmetric 3x3, descending."""
    p1 = M[0, 1] ** 2 + M[0, 2] ** 2 + M[1, 2] ** 2
    if p1 == 0.0:
        return np.sort(np.diag(M))[::-1].copy()
    q = np.trace(M) / 3.0
    p2 = np.sum((np.diag(M) - q) ** 2) + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    B = (M - q * np.eye(3)) / p
    r = np.linalg.det(B) / 2.0
    phi = np.arccos(np.clip(r, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.array([e1, e2, e3])


def _jacobi3(M: np.ndarray, sweeps: int = 32):
    """Cyclic Jacobi iteration; robust at eigenvalue degeneracies."""
    A = M.copy()
    V = np.eye(3)
    scale = max(np.abs(A).max(), 1e-300)
    for _ in range(sweeps):
        off = max(abs(A[0, 1]), abs(A[0, 2]), abs(A[1, 2]))
        if off <= 1e-16 * scale:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = A[p, q]
            if abs(apq) <= 1e-18 * scale:
                continue
            theta = (A[q, q] - A[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
            if theta == 0.0:
                t = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            R = np.eye(3)
            R[p, p] = R[q, q] = c
            R[p, q] = s
            R[q, p] = -s
            A = R.T @ A @ R
            V = V @ R
    vals = np.diag(A).copy()
    order = np.argsort(vals)[::-1]
    return vals[order], V[:, order].T  # rows are eigenvectors


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Sign-fix e1, e2 (largest-|component| positive), then e3 = e1 x e2."""
    out = vecs.copy()
    for i in (0, 1):
        j = int(np.argmax(np.abs(out[i])))
        if out[i, j] < 0.0:
            out[i] = -out[i]
    out[2] = np.cross(out[0], out[1])
    return out


def decompose(M, source_tag: str = "") -> EigenFrame:
    """Eigen-decompose a symmetric 3x3 matrix with a deterministic frame.

    Falls back to Jacobi iteration when eigenvalues are within 1e-9
    relative of each other, where the closed-form eigenvectors degrade.
    """
    M = _check_symmetric(M)
    vals = _closed_form_eigenvalues(M)
    scale = max(np.abs(vals).max(), 1e-300)
    gap = min(vals[0] - vals[1], vals[1] - vals[2])
    if gap <= _DEGENERACY_TOL * scale:
        vals, vecs = _jacobi3(M)
        return EigenFrame(vals, _fix_signs(vecs), source_tag)

    def eigvec(lam):
        R = M - lam * np.eye(3)
        cands = [np.cross(R[a], R[b]) for a, b in ((0, 1), (0, 2), (1, 2))]
        norms = [np.linalg.norm(c) for c in cands]
        i = int(np.argmax(norms))
        if norms[i] == 0.0:  # fully degenerate direction; let Jacobi sort it out
            return None
        return cands[i] / norms[i]

    v1 = eigvec(vals[0])
    v3 = eigvec(vals[2])
    if v1 is None or v3 is None:
        vals, vecs = _jacobi3(M)
        return EigenFrame(vals, _fix_signs(vecs), source_tag)
    v3 = v3 - (v3 @ v1) * v1
    v3 /= np.linalg.norm(v3)
    v2 = np.cross(v3, v1)
    vecs = np.array([v1, v2, v3])
    # Rayleigh-refine the values on the computed directions, then resort.
    vals = np.array([v @ M @ v for v in vecs])
    order = np.argsort(vals)[::-1]
    return EigenFrame(vals[order], _fix_signs(vecs[order]), source_tag)


def alignment(M, w, frame: EigenFrame | None = None, source_tag: str = "") -> AlignmentMetrics:
    """Alignment metrics of direction w against the eigenframe of M."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (3,):
        raise ContractViolation(f"w must be a 3-vector, got shape {w.shape}")
    wn = np.linalg.norm(w)
    if wn == 0.0 or not np.isfinite(wn):
        raise ContractViolation("alignment requires a nonzero finite vector")
    if frame is None:
        frame = decompose(M, source_tag)
    M = 0.5 * (np.asarray(M, dtype=np.float64) + np.asarray(M, dtype=np.float64).T)
    what = w / wn
    cosines = np.abs(frame.eigenvectors @ what)
    best = int(np.argmax(cosines))
    Mw = M @ w
    rayleigh = float(w @ Mw / (wn * wn))
    num = np.linalg.norm(Mw - rayleigh * w)
    den = np.linalg.norm(Mw)
    residual = 0.0 if den == 0.0 else float(num / den)
    return AlignmentMetrics(cosines, best, rayleigh, residual,
                            source_tag or frame.source_tag)


def mu_max(frame: EigenFrame) -> float:
    """Largest absolute eigenvalue of the frame."""
    return float(np.abs(frame.eigenvalues).max())


def symmetric_eigenvalues_field(comp6: np.ndarray) -> np.ndarray:
    """Vectorized descending eigenvalues of symmetric tensors.

    comp6: (6, ...) components ordered xx, xy, xz, yy, yz, zz.
    Returns (3, ...). Values-only path for per-gridpoint monitors.
    """
    xx, xy, xz, yy, yz, zz = (np.asarray(comp6[i], dtype=np.float64) for i in range(6))
    p1 = xy**2 + xz**2 + yz**2
    q = (xx + yy + zz) / 3.0
    p2 = (xx - q) ** 2 + (yy - q) ** 2 + (zz - q) ** 2 + 2.0 * p1
    p = np.sqrt(np.maximum(p2, 0.0) / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    bxx, byy, bzz = (xx - q) / safe_p, (yy - q) / safe_p, (zz - q) / safe_p
    bxy, bxz, byz = xy / safe_p, xz / safe_p, yz / safe_p
    detb = (
        bxx * (byy * bzz - byz**2)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    phi = np.arccos(np.clip(detb / 2.0, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.stack([e1, e2, e3])
