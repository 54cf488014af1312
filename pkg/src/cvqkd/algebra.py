"""Arithmetic in the real normed division algebras and Householder-product orthogonal maps.

Algebra elements are numpy arrays whose last axis has length d in {1, 2, 4, 8}
(reals, complex numbers, quaternions, octonions); every operation broadcasts
over leading axes.  Products follow the Cayley-Dickson doubling rule
(a, b)(c, d) = (a c - d* b, d a + b c*), which reproduces the Hamilton
quaternion table at d = 4.
"""

from __future__ import annotations

import struct

import numpy as np

DIVISION_DIMS = (1, 2, 4, 8)

# Running tally of scalars touched by OrthogonalTransform.apply/apply_inverse.
# The complexity tests read this to assert the O(k*n) application contract.
_scalar_ops = 0


def reset_operation_count():
    global _scalar_ops
    _scalar_ops = 0


def operation_count() -> int:
    return _scalar_ops


def _check_dim(d):
    if d not in DIVISION_DIMS:
        raise ValueError(f"algebra dimension must be one of {DIVISION_DIMS}, got {d}")


def _as_elements(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    _check_dim(x.shape[-1])
    return x


def mul(a, b):
    """Multiply two algebra elements; broadcasts over leading axes."""
    a = _as_elements(a)
    b = _as_elements(b)
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}"
        )
    return _mul(a, b)


def _mul(a, b):
    d = a.shape[-1]
    if d == 1:
        return a * b
    h = d // 2
    a1, a2 = a[..., :h], a[..., h:]
    b1, b2 = b[..., :h], b[..., h:]
    lo = _mul(a1, b1) - _mul(_conj(b2), a2)
    hi = _mul(b2, a1) + _mul(a2, _conj(b1))
    return np.concatenate([lo, hi], axis=-1)


def conj(a):
    """Algebra conjugate: negate every coordinate except the real part."""
    return _conj(_as_elements(a))


def _conj(a):
    out = -a
    out[..., 0] = a[..., 0]
    return out


def norm(a):
    """Euclidean norm of the element(s); multiplicative over mul."""
    return np.linalg.norm(_as_elements(a), axis=-1)


def inv(a):
    """Multiplicative inverse conj(a)/|a|^2; zero elements are an error."""
    a = _as_elements(a)
    n2 = np.sum(a * a, axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise ZeroDivisionError("cannot invert a zero algebra element")
    return _conj(a) / n2


def identity(d):
    _check_dim(d)
    e = np.zeros(d)
    e[0] = 1.0
    return e


def sample_unit(d, rng, size=None):
    """Draw sign vectors with coordinates +-1/sqrt(d), uniform and independent.

    Returns shape (d,) when size is None, else (size, d).  These are the unit
    alphabet elements used by the reverse-reconciliation reduction.
    """
    _check_dim(d)
    shape = (d,) if size is None else (size, d)
    signs = rng.integers(0, 2, size=shape) * 2 - 1
    return signs / np.sqrt(d)


class OrthogonalTransform:
    """A product of Householder reflections on R^n, stored as unit reflectors.

    apply() reflects about each stored row in order; apply_inverse() uses the
    reverse order.  The dense n x n matrix is never formed, so application
    costs O(k*n) per vector.  An empty reflector list is the identity.
    """

    def __init__(self, reflectors):
        reflectors = np.array(reflectors, dtype=float)
        if reflectors.ndim != 2:
            raise ValueError("reflectors must be a (k, n) array")
        if reflectors.shape[0]:
            norms = np.linalg.norm(reflectors, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError("reflectors must be unit vectors")
            reflectors = reflectors / norms[:, None]
        self.reflectors = reflectors

    @property
    def n(self) -> int:
        return self.reflectors.shape[1]

    @property
    def n_reflections(self) -> int:
        return self.reflectors.shape[0]

    def _apply(self, v, rows):
        global _scalar_ops
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != self.n:
            raise ValueError(f"vector length {v.shape[-1]} != transform size {self.n}")
        out = v.copy()
        n_vectors = max(1, int(np.prod(out.shape[:-1])))
        _scalar_ops += out.size
        for u in rows:
            proj = out @ u
            out = out - 2.0 * np.expand_dims(proj, -1) * u
            _scalar_ops += 2 * self.n * n_vectors
        return out

    def apply(self, v):
        return self._apply(v, self.reflectors)

    def apply_inverse(self, v):
        return self._apply(v, self.reflectors[::-1])

    def as_matrix(self):
        """Materialize the dense matrix M with M @ x == apply(x); tests only."""
        return self.apply(np.eye(self.n)).T

    def to_bytes(self) -> bytes:
        head = struct.pack("<II", self.n_reflections, self.n)
        return head + self.reflectors.astype("<f8").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes) -> "OrthogonalTransform":
        if len(data) < 8:
            raise ValueError("truncated transform record")
        k, n = struct.unpack_from("<II", data, 0)
        expected = 8 + 8 * k * n
        if len(data) != expected:
            raise ValueError(f"transform record has {len(data)} bytes, expected {expected}")
        rows = np.frombuffer(data, dtype="<f8", offset=8).reshape(k, n)
        return cls(rows.copy())


def householder(u) -> OrthogonalTransform:
    """Single reflection about the unit vector u (renormalized internally)."""
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(u)
    if r == 0.0:
        raise ValueError("cannot reflect about the zero vector")
    if abs(r - 1.0) > 1e-9:
        raise ValueError("reflector must be a unit vector within 1e-9")
    return OrthogonalTransform((u / r)[None, :])


def _bisector_reflector(x):
    """Unit u such that reflecting e1 about u gives x/|x|; None when x is along +e1."""
    r = np.linalg.norm(x)
    if r == 0.0:
        raise ValueError("degenerate zero draw for reflector target")
    u = x.copy()
    u[0] -= r
    s = np.linalg.norm(u)
    if s <= 1e-12 * r:
        return None
    return u / s


def sample_orthogonal(n, k, rng) -> OrthogonalTransform:
    """Random orthogonal map as a product of k nested Householder stages.

    Stage j acts on the trailing n-k+1+j coordinates and sends that
    subspace's leading basis vector to a uniformly random direction of the
    subspace (reflector built from a normalized standard-normal draw).  Any
    k >= 1 therefore maps e1 to a uniform point of the sphere, and k = n
    samples the Haar measure on O(n).  Stages that draw the target direction
    exactly along the subspace axis reduce to the identity and are skipped.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    rows = []
    for j in range(k):
        m = n - k + 1 + j
        u = _bisector_reflector(rng.standard_normal(m))
        if u is None:
            continue
        row = np.zeros(n)
        row[n - m:] = u
        rows.append(row)
    if not rows:
        return OrthogonalTransform(np.zeros((0, n)))
    return OrthogonalTransform(np.array(rows))
