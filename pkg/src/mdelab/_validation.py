"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DimensionMismatchError, ValidationError


def check_square(X, name="matrix", dtype=None):
    """Return ``X`` as a 2-D square ndarray or raise ``ValidationError``."""
    X = np.asarray(X, dtype=dtype)
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise ValidationError(f"{name} must be a square 2-D array, got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValidationError(f"{name} must be non-empty")
    if not np.all(np.isfinite(X)):
        raise ValidationError(f"{name} contains non-finite entries")
    return X


def check_hermitian(X, name="matrix", atol=1e-10):
    """Return ``X`` as a square array, checking ``X == X*`` entrywise within ``atol``.

    ``atol`` is relative to ``max(1, max|X_ij|)``.
    """
    X = check_square(X, name)
    if not np.iscomplexobj(X):
        X = X.astype(float)
    scale = max(1.0, float(np.max(np.abs(X))))
    dev = float(np.max(np.abs(X - X.conj().T)))
    if dev > atol * scale:
        raise ValidationError(f"{name} is not Hermitian (max |X - X*| = {dev:.3e})")
    return X


def check_same_size(a, b, names=("A", "M")):
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"dimension mismatch: {names[0]} has shape {a.shape}, {names[1]} has shape {b.shape}"
        )


def check_vector(x, N=None, name="vector"):
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {x.shape}")
    if N is not None and x.shape[0] != N:
        raise DimensionMismatchError(f"{name} has length {x.shape[0]}, expected {N}")
    return x


def check_unit_vector(x, N=None, name="vector", atol=1e-8):
    x = check_vector(x, N, name)
    norm = float(np.linalg.norm(x))
    if abs(norm - 1.0) > atol:
        raise ValidationError(f"{name} must have unit norm, got |x| = {norm:.6g}")
    return x


def check_positive_int(n, name="N", minimum=1):
    if not isinstance(n, numbers.Integral) or isinstance(n, bool) or n < minimum:
        raise ValidationError(f"{name} must be an integer >= {minimum}, got {n!r}")
    return int(n)


def as_complex_z(z):
    """Accept a complex number or any object with ``E`` and ``eta`` attributes."""
    if hasattr(z, "E") and hasattr(z, "eta"):
        return complex(z.E, z.eta)
    return complex(z)


def check_upper_half_plane(z):
    z = as_complex_z(z)
    if not z.imag > 0:
        raise ValidationError(f"spectral parameter must satisfy Im z > 0, got {z}")
    return z
