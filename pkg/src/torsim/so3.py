"""Rotation utilities: exponential-map coordinates, logs, and hat operators.

Rotations are carried as 3-vectors w with R = exp(hat(w)) (axis * angle).
All functions are pure numpy and safe near the zero-angle singularity.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def hat(w):
    """Skew-symmetric cross-product matrix of a 3-vector."""
    w = np.asarray(w, dtype=float)
    return np.array([
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ])


def unhat(W):
    """Inverse of hat (extracts the 3-vector from a skew matrix)."""
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def exp_rotvec(w):
    """Rotation matrix from exponential-map coordinates (Rodrigues)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < _EPS:
        return np.eye(3) + hat(w)
    k = w / theta
    K = hat(k)
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def log_rotmat(R):
    """Exponential-map coordinates of a rotation matrix, |w| <= pi."""
    R = np.asarray(R, dtype=float)
    tr = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    if theta < 1e-8:
        # first-order: skew part of R
        return unhat(R - R.T) * 0.5
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part, sign from skew part
        B = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(B), 0.0))
        # resolve signs via largest component
        i = int(np.argmax(axis))
        if axis[i] > 0:
            axis = B[:, i] / axis[i]
            axis = axis / np.linalg.norm(axis)
        s = unhat(R - R.T)
        if np.dot(s, axis) < 0:
            axis = -axis
        return axis * theta
    return unhat(R - R.T) * (theta / (2.0 * np.sin(theta)))


def reparameterize_rotvec(w, threshold=np.pi):
    """Wrap exponential-map coordinates with |w| past `threshold` back by 2*pi.

    The returned vector encodes the identical rotation: for |w| near 2*pi the
    result has norm |w| - 2*pi (and flipped axis), avoiding the singular shell
    at |w| = 2*pi where the exponential map loses rank.
    """
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta <= threshold:
        return w.copy()
    n = np.floor((theta + np.pi) / (2.0 * np.pi))
    return w * (1.0 - 2.0 * np.pi * n / theta)


def rotation_angle_between(Ra, Rb):
    """Geodesic angle (radians) between two rotation matrices."""
    return np.linalg.norm(log_rotmat(np.asarray(Ra).T @ np.asarray(Rb)))


def exp_rotvec_batch(W):
    """Rodrigues formula applied to an (n, 3) stack of rotation vectors."""
    W = np.asarray(W, dtype=float)
    theta = np.linalg.norm(W, axis=1)
    out = np.tile(np.eye(3), (W.shape[0], 1, 1))
    mask = theta >= _EPS
    if not np.any(mask):
        return out
    k = W[mask] / theta[mask, None]
    K = np.zeros((k.shape[0], 3, 3))
    K[:, 0, 1] = -k[:, 2]
    K[:, 0, 2] = k[:, 1]
    K[:, 1, 0] = k[:, 2]
    K[:, 1, 2] = -k[:, 0]
    K[:, 2, 0] = -k[:, 1]
    K[:, 2, 1] = k[:, 0]
    s = np.sin(theta[mask])[:, None, None]
    c = (1.0 - np.cos(theta[mask]))[:, None, None]
    out[mask] = np.eye(3) + s * K + c * np.einsum("nij,njk->nik", K, K)
    return out
