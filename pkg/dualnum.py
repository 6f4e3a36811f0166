"""
Forward-mode dual numbers over numpy arrays.

A `Dual` carries a value array and a stack of tangents, one per
differentiation direction: ``tangent.shape == (P,) + value.shape``.
Arithmetic propagates all P directions at once, so a single pass through
geometry and kernel code yields the value and P directional derivatives.

The helpers at the bottom (`exp`, `sqrt`, `cross`, `dot`, `norm`, ...)
accept either plain arrays or `Dual` values, which lets the assembly code
be written once and run in both modes.
"""

import numpy as np


def _as_tuple(index):
    return index if isinstance(index, tuple) else (index,)


class Dual:
    __array_ufunc__ = None  # make ndarray <op> Dual defer to the reflected method

    def __init__(self, value, tangent):
        self.value = np.asarray(value)
        tangent = np.asarray(tangent)
        expected = tangent.shape[:1] + self.value.shape
        if tangent.shape != expected:
            tangent = np.broadcast_to(tangent, expected)
        self.tangent = tangent

    @classmethod
    def seed(cls, value, directions):
        """Dual whose tangents are `directions` (shape (P,) + value.shape)."""
        return cls(value, directions)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def ndirections(self):
        return self.tangent.shape[0]

    def __repr__(self):
        return f"Dual(shape={self.shape}, directions={self.ndirections})"

    def _lifted(self, ndim):
        """Tangent reshaped so that it broadcasts against a value of rank `ndim`."""
        extra = ndim - self.value.ndim
        if extra <= 0:
            return self.tangent
        t = self.tangent
        return t.reshape(t.shape[:1] + (1,) * extra + t.shape[1:])

    # arithmetic -------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Dual):
            value = self.value + other.value
            return Dual(value, self._lifted(value.ndim) + other._lifted(value.ndim))
        value = self.value + other
        return Dual(value, self._lifted(value.ndim))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            value = self.value - other.value
            return Dual(value, self._lifted(value.ndim) - other._lifted(value.ndim))
        value = self.value - other
        return Dual(value, self._lifted(value.ndim))

    def __rsub__(self, other):
        value = other - self.value
        return Dual(value, -self._lifted(value.ndim))

    def __neg__(self):
        return Dual(-self.value, -self.tangent)

    def __mul__(self, other):
        if isinstance(other, Dual):
            value = self.value * other.value
            n = value.ndim
            return Dual(value, self._lifted(n) * other.value + other._lifted(n) * self.value)
        other = np.asarray(other)
        value = self.value * other
        return Dual(value, self._lifted(value.ndim) * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            value = self.value / other.value
            n = value.ndim
            return Dual(value, (self._lifted(n) - value * other._lifted(n)) / other.value)
        other = np.asarray(other)
        value = self.value / other
        return Dual(value, self._lifted(value.ndim) / other)

    def __rtruediv__(self, other):
        value = np.asarray(other) / self.value
        return Dual(value, -value / self.value * self._lifted(value.ndim))

    def __pow__(self, exponent):
        if isinstance(exponent, Dual):
            raise TypeError("Dual exponents are not supported")
        value = self.value ** exponent
        return Dual(value, exponent * self.value ** (exponent - 1) * self.tangent)

    def __matmul__(self, other):
        if isinstance(other, Dual):
            raise TypeError("Dual @ Dual is not supported")
        return Dual(self.value @ other, self.tangent @ other)

    def __rmatmul__(self, other):
        if self.value.ndim != 1:
            raise TypeError("matrix @ Dual needs a vector operand")
        other = np.asarray(other)
        return Dual(other @ self.value, self.tangent @ other.T)

    # structure --------------------------------------------------------

    def __getitem__(self, index):
        index = _as_tuple(index)
        return Dual(self.value[index], self.tangent[(slice(None),) + index])

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.value.sum(), self.tangent.reshape(self.ndirections, -1).sum(axis=1))
        axes = _as_tuple(axis)
        shifted = tuple(a if a < 0 else a + 1 for a in axes)
        return Dual(self.value.sum(axis=axes), self.tangent.sum(axis=shifted))

    def reshape(self, *shape):
        value = self.value.reshape(*shape)
        return Dual(value, self.tangent.reshape((self.ndirections,) + value.shape))


# helpers accepting arrays or duals ------------------------------------


def value(x):
    return x.value if isinstance(x, Dual) else np.asarray(x)


def exp(x):
    if isinstance(x, Dual):
        e = np.exp(x.value)
        return Dual(e, e * x.tangent)
    return np.exp(x)


def sqrt(x):
    if isinstance(x, Dual):
        s = np.sqrt(x.value)
        return Dual(s, x.tangent / (2.0 * s))
    return np.sqrt(x)


def cross(a, b):
    """Cross product over the last axis."""
    if isinstance(a, Dual) or isinstance(b, Dual):
        va, vb = value(a), value(b)
        result = np.cross(va, vb)
        n = result.ndim
        t = 0
        if isinstance(a, Dual):
            t = t + np.cross(a._lifted(n), vb)
        if isinstance(b, Dual):
            t = t + np.cross(va, b._lifted(n))
        return Dual(result, t)
    return np.cross(a, b)


def dot(a, b):
    """Inner product over the last axis (no conjugation)."""
    return (a * b).sum(axis=-1)


def norm(a):
    return sqrt(dot(a, a))


def concatenate(parts, axis=0):
    """np.concatenate over a mix of arrays and duals; arrays get zero tangents."""
    values = [value(p) for p in parts]
    result = np.concatenate(values, axis=axis)
    duals = [p for p in parts if isinstance(p, Dual)]
    if not duals:
        return result
    n = duals[0].ndirections
    tangents = [p.tangent if isinstance(p, Dual) else np.zeros((n,) + v.shape, v.dtype) for p, v in zip(parts, values)]
    return Dual(result, np.concatenate(tangents, axis=axis if axis < 0 else axis + 1))
