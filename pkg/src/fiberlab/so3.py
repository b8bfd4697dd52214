"""Nearest rotations and distances to SO(3), batched over leading axes."""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation


def project_SO3(F) -> np.ndarray:
    """Closest rotation to ``F`` in the Frobenius norm (polar factor).

    Only the orientation-preserving branch is accepted: ``det F > 0`` and
    full rank.
    """
    F = np.asarray(F, dtype=float)
    U, s, Vt = np.linalg.svd(F)
    det = np.linalg.det(F)
    if np.any(s[..., -1] <= 1e-14 * np.maximum(s[..., 0], 1e-300)):
        raise ValueError("cannot project a rank-deficient matrix onto SO(3)")
    if np.any(det <= 0):
        raise ValueError("cannot project a matrix with det <= 0 onto SO(3)")
    R = U @ Vt
    # guard against a reflection sneaking in through round-off
    flip = np.linalg.det(R) < 0
    if np.any(flip):
        U = U.copy()
        U[flip, :, -1] *= -1
        R = U @ Vt
    return R


def dist_SO3(F) -> np.ndarray:
    """Frobenius distance from ``F`` to SO(3), valid for any sign of ``det F``.

    With singular values ``s1 >= s2 >= s3`` the nearest rotation keeps the
    singular directions; for ``det F < 0`` the smallest one is sent to -1.
    """
    F = np.asarray(F, dtype=float)
    # singular values from the eigenvalues of F^T F (ascending), cheaper than an SVD
    lam = np.linalg.eigvalsh(np.swapaxes(F, -1, -2) @ F)
    s = np.sqrt(np.clip(lam, 0.0, None))
    sign = np.where(np.linalg.det(F) < 0, -1.0, 1.0)
    return np.sqrt((s[..., 2] - 1) ** 2 + (s[..., 1] - 1) ** 2 + (s[..., 0] - sign) ** 2)


def rotation_residuals(R) -> tuple[np.ndarray, np.ndarray]:
    """``(|R^T R - I|, |det R - 1|)`` per matrix."""
    R = np.asarray(R, dtype=float)
    orth = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    return orth, np.abs(np.linalg.det(R) - 1.0)


def random_rotations(n: int, seed: int | None = 0) -> np.ndarray:
    return Rotation.random(n, random_state=seed).as_matrix()


def axis_rotation(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    return Rotation.from_rotvec(angle * axis / np.linalg.norm(axis)).as_matrix()
