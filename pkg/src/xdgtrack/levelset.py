"""Height-function level sets ``phi(x, y) = x - S(y)``.

Two kinds are provided: :class:`SplineLevelSet` (linear or cubic Hermite
spline with knot values as optimisation DOFs) and
:class:`PolynomialLevelSet` (a fixed closed-form polynomial height, used for
immersed walls).  Both expose the same geometric interface used by the
cut-cell code: ``height``, ``slope``, ``eval`` and ``local_poly``.
"""

import numpy as np
from numpy.polynomial import polynomial as npoly

_KNOT_TOL = 1e-12


def _hermite_coeffs(x0, x1, c0, c1, h):
    """Monomial coefficients in t in [0, 1] of a cubic Hermite segment."""
    return np.array([
        x0,
        h * c0,
        -3.0 * x0 - 2.0 * h * c0 + 3.0 * x1 - h * c1,
        2.0 * x0 + h * c0 - 2.0 * x1 + h * c1,
    ])


class HeightLevelSet:
    """Shared behaviour of ``x - S(y)`` level sets."""

    def eval(self, x, y):
        """Level-set value; negative left of the interface, positive right."""
        return np.asarray(x, dtype=float) - self.height(y)

    def __call__(self, x, y):
        return self.eval(x, y)

    def interface_normal(self, y):
        """Unit normal of ``{x = S(y)}`` pointing towards ``phi > 0``."""
        s = np.asarray(self.slope(y), dtype=float)
        nrm = np.sqrt(1.0 + s * s)
        return np.stack([1.0 / nrm, -s / nrm], axis=-1)


class SplineLevelSet(HeightLevelSet):
    """Spline height function with knots at fixed y positions.

    Parameters
    ----------
    knots : array_like
        Strictly increasing knot ordinates ``y_0 < ... < y_N``.
    values : array_like
        Interface abscissae ``x_i = S(y_i)``.
    derivatives : array_like or None
        ``S'(y_i)`` for a cubic Hermite spline; ``None`` gives a piecewise
        linear spline.
    """

    def __init__(self, knots, values, derivatives=None):
        self.knots = np.asarray(knots, dtype=float)
        self.values = np.asarray(values, dtype=float).copy()
        if self.knots.ndim != 1 or self.knots.size < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.values.shape != self.knots.shape:
            raise ValueError("values must match knots")
        if derivatives is None:
            self.derivatives = None
        else:
            self.derivatives = np.asarray(derivatives, dtype=float).copy()
            if self.derivatives.shape != self.knots.shape:
                raise ValueError("derivatives must match knots")

    @property
    def kind(self):
        return "linear" if self.derivatives is None else "cubic"

    @property
    def n_knots(self):
        return self.knots.size

    # -- DOF access -------------------------------------------------------
    def dofs(self):
        if self.derivatives is None:
            return self.values.copy()
        return np.concatenate([self.values, self.derivatives])

    @property
    def n_dofs(self):
        return self.n_knots * (1 if self.derivatives is None else 2)

    def set_dofs(self, vec):
        """Return a copy carrying the DOF vector ``vec``."""
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_dofs,):
            raise ValueError(f"expected {self.n_dofs} DOFs, got shape {vec.shape}")
        n = self.n_knots
        if self.derivatives is None:
            return SplineLevelSet(self.knots, vec)
        return SplineLevelSet(self.knots, vec[:n], vec[n:])

    def dof_knot(self, k):
        """Knot index a DOF belongs to."""
        return k % self.n_knots

    # -- evaluation -------------------------------------------------------
    def _segment(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        span = hi - lo
        if np.any(y < lo - _KNOT_TOL * span) or np.any(y > hi + _KNOT_TOL * span):
            raise ValueError(f"y outside spline range [{lo}, {hi}]")
        i = np.clip(np.searchsorted(self.knots, y, side="right") - 1, 0, self.n_knots - 2)
        h = self.knots[i + 1] - self.knots[i]
        t = (y - self.knots[i]) / h
        return i, t, h

    def height(self, y):
        i, t, h = self._segment(y)
        x0, x1 = self.values[i], self.values[i + 1]
        if self.derivatives is None:
            return x0 + t * (x1 - x0)
        c0, c1 = self.derivatives[i], self.derivatives[i + 1]
        t2, t3 = t * t, t * t * t
        return ((1 - 3 * t2 + 2 * t3) * x0 + (t - 2 * t2 + t3) * h * c0
                + (3 * t2 - 2 * t3) * x1 + (t3 - t2) * h * c1)

    def slope(self, y):
        i, t, h = self._segment(y)
        x0, x1 = self.values[i], self.values[i + 1]
        if self.derivatives is None:
            return (x1 - x0) / h
        c0, c1 = self.derivatives[i], self.derivatives[i + 1]
        t2 = t * t
        return ((-6 * t + 6 * t2) * x0 / h + (1 - 4 * t + 3 * t2) * c0
                + (6 * t - 6 * t2) * x1 / h + (3 * t2 - 2 * t) * c1)

    def segment_index(self, y0, y1):
        i = int(np.argmin(np.abs(self.knots - y0)))
        if i >= self.n_knots - 1 or abs(self.knots[i + 1] - y1) > 1e-9 * (y1 - y0) \
                or abs(self.knots[i] - y0) > 1e-9 * (y1 - y0):
            raise ValueError(f"[{y0}, {y1}] is not a knot interval")
        return i

    def local_poly(self, y0, y1):
        """Monomial coefficients of S in t = (y - y0) / (y1 - y0) on a knot interval."""
        i = self.segment_index(y0, y1)
        x0, x1 = self.values[i], self.values[i + 1]
        if self.derivatives is None:
            return np.array([x0, x1 - x0])
        return _hermite_coeffs(x0, x1, self.derivatives[i], self.derivatives[i + 1], y1 - y0)

    # -- io ----------------------------------------------------------------
    def to_text(self):
        lines = []
        for i, y in enumerate(self.knots):
            row = [repr(float(y)), repr(float(self.values[i]))]
            if self.derivatives is not None:
                row.append(repr(float(self.derivatives[i])))
            lines.append(" ".join(row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        rows = [list(map(float, ln.split())) for ln in text.splitlines() if ln.strip()]
        arr = np.array(rows)
        if arr.shape[1] == 2:
            return cls(arr[:, 0], arr[:, 1])
        if arr.shape[1] == 3:
            return cls(arr[:, 0], arr[:, 1], arr[:, 2])
        raise ValueError("expected 2 or 3 columns per knot line")

    def __repr__(self):
        return f"SplineLevelSet(kind={self.kind!r}, n_knots={self.n_knots})"


class PolynomialLevelSet(HeightLevelSet):
    """Fixed level set ``x - X(y)`` with ``X`` a polynomial in y (no DOFs)."""

    def __init__(self, coeffs):
        self.coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
        self._dcoeffs = npoly.polyder(self.coeffs) if self.coeffs.size > 1 else np.zeros(1)

    def height(self, y):
        return npoly.polyval(np.asarray(y, dtype=float), self.coeffs)

    def slope(self, y):
        return npoly.polyval(np.asarray(y, dtype=float), self._dcoeffs)

    def local_poly(self, y0, y1):
        # substitute y = y0 + (y1 - y0) t
        out = np.zeros(1)
        lin = np.array([y0, y1 - y0])
        power = np.ones(1)
        for c in self.coeffs:
            out = npoly.polyadd(out, c * power)
            power = npoly.polymul(power, lin)
        return np.asarray(out)

    @classmethod
    def line(cls, x_at_y0, slope_dxdy, y0=0.0):
        """Straight line through ``(x_at_y0, y0)`` with ``dx/dy = slope_dxdy``."""
        return cls([x_at_y0 - slope_dxdy * y0, slope_dxdy])

    def __repr__(self):
        return f"PolynomialLevelSet({self.coeffs.tolist()})"


def fit_height_function(f, df, knots, kind="cubic"):
    """Interpolating spline of a height function ``y -> x`` at ``knots``."""
    knots = np.asarray(knots, dtype=float)
    values = np.array([f(y) for y in knots], dtype=float)
    if kind == "linear":
        return SplineLevelSet(knots, values)
    if kind != "cubic":
        raise ValueError(f"unknown spline kind {kind!r}")
    return SplineLevelSet(knots, values, np.array([df(y) for y in knots], dtype=float))
