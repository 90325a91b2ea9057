"""Rational transfer functions, state-space realizations and Tustin discretization.

Polynomials store real coefficients in ascending degree, ``[c0, c1, ...]`` is
``c0 + c1*s + ...``.  Transfer functions keep a monic denominator.  Common
pole/zero factors are cancelled only when the numerator vanishes at a
denominator root to within ``CANCEL_RTOL``; every cancellation is logged and
recorded on the result.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.linalg import expm

log = logging.getLogger(__name__)

CANCEL_RTOL = 1e-12
ROOT_RTOL = 1e-8
POLE_HIT_TOL = 1e-9
CLUSTER_RTOL = 1e-5


class LTIError(ValueError):
    """Invalid transfer-function operation."""


class AlgebraicLoopError(LTIError):
    pass


class RootFindingError(ArithmeticError):
    def __init__(self, msg: str, residual: float):
        super().__init__(f"{msg} (residual {residual:.3e})")
        self.residual = residual


class PoleEvaluationWarning(RuntimeWarning):
    pass


class MarginalDiscretizationWarning(RuntimeWarning):
    pass


def default_grid(n: int = 400, lo: float = 1e-1, hi: float = 1e4) -> np.ndarray:
    """Log-spaced frequency grid in rad/s."""
    return np.logspace(np.log10(lo), np.log10(hi), n)


# ---------------------------------------------------------------------------
# Polynomial


class Polynomial:
    """Immutable real polynomial, coefficients in ascending degree."""

    __slots__ = ("_c",)

    def __init__(self, coeffs: Iterable[float] | float):
        c = np.atleast_1d(np.asarray(coeffs, dtype=float)).copy()
        if c.ndim != 1:
            raise LTIError("polynomial coefficients must be one-dimensional")
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise LTIError(f"non-finite polynomial coefficients {c}")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if nz.size else np.zeros(1)
        c.setflags(write=False)
        self._c = c

    @classmethod
    def from_roots(cls, roots: Sequence[complex], lead: float = 1.0) -> "Polynomial":
        if len(roots) == 0:
            return cls([lead])
        return cls(lead * np.real(P.polyfromroots(roots)))

    @property
    def coeffs(self) -> np.ndarray:
        return self._c

    @property
    def degree(self) -> int:
        return self._c.size - 1

    @property
    def lead(self) -> float:
        return float(self._c[-1])

    def is_zero(self) -> bool:
        return self._c.size == 1 and self._c[0] == 0.0

    def norm(self) -> float:
        return float(np.max(np.abs(self._c)))

    def __call__(self, x):
        # numpy's polyval is Horner's scheme
        return P.polyval(x, self._c)

    def scale_at(self, x) -> np.ndarray:
        """Sum of |c_i| |x|^i, the natural size of p(x) for rounding checks."""
        return P.polyval(np.abs(x), np.abs(self._c))

    def __add__(self, other):
        return Polynomial(P.polyadd(self._c, _as_poly(other)._c))

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(-self._c)

    def __sub__(self, other):
        return Polynomial(P.polysub(self._c, _as_poly(other)._c))

    def __rsub__(self, other):
        return _as_poly(other) - self

    def __mul__(self, other):
        return Polynomial(P.polymul(self._c, _as_poly(other)._c))

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Polynomial([1.0])
        for _ in range(n):
            out = out * self
        return out

    def __divmod__(self, other):
        q, r = P.polydiv(self._c, _as_poly(other)._c)
        return Polynomial(q), Polynomial(r)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self._c.shape == other._c.shape and bool(np.all(self._c == other._c))

    def __hash__(self):
        return hash(self._c.tobytes())

    def allclose(self, other: "Polynomial", rtol: float = 1e-10) -> bool:
        """Coefficient-wise match relative to the larger coefficient norm."""
        d = (self - other).coeffs
        scale = max(self.norm(), other.norm(), np.finfo(float).tiny)
        return bool(np.max(np.abs(d)) <= rtol * scale)

    def roots(self) -> np.ndarray:
        """All complex roots, via companion-matrix eigenvalues.

        Coefficients are normalised by the largest magnitude before the
        eigenvalue solve.  Roots that fail the backward-error check are
        polished with Newton steps; persistent failure raises.
        """
        if self.degree < 1:
            return np.zeros(0, dtype=complex)
        c = self._c / self.norm()
        r = np.roots(c[::-1]).astype(complex)
        dp = P.polyder(c)
        for i, x in enumerate(r):
            for _ in range(50):
                if _residual(c, x) <= ROOT_RTOL:
                    break
                d = P.polyval(x, dp)
                if d == 0:
                    break
                x = x - P.polyval(x, c) / d
            res = _residual(c, x)
            if res > ROOT_RTOL:
                raise RootFindingError(f"root finder did not converge for {self!r}", res)
            r[i] = x
        # snap conjugate noise on real roots
        r = np.where(np.abs(r.imag) <= 1e-14 * np.maximum(1.0, np.abs(r)), r.real + 0j, r)
        return r

    def __repr__(self):
        return f"Polynomial({self._c.tolist()})"


def _residual(c: np.ndarray, x: complex) -> float:
    scale = P.polyval(abs(x), np.abs(c))
    return float(abs(P.polyval(x, c)) / scale) if scale > 0 else 0.0


def _as_poly(x) -> Polynomial:
    return x if isinstance(x, Polynomial) else Polynomial([float(x)])


S = Polynomial([0.0, 1.0])


# ---------------------------------------------------------------------------
# Rational transfer functions


def _divide_exact(p: Polynomial, factor: Polynomial) -> Polynomial:
    """Quotient of ``p`` by a factor known to divide it.

    Long division from the top is stable for small roots, from the bottom
    (reversed coefficients) for large ones; keep whichever reproduces ``p``
    better.
    """
    fwd = Polynomial(P.polydiv(p.coeffs, factor.coeffs)[0])
    q_rev = P.polydiv(p.coeffs[::-1], factor.coeffs[::-1])[0]
    bwd = np.zeros(p.degree - factor.degree + 1)
    bwd[: q_rev.size] = q_rev
    bwd = Polynomial(bwd[::-1])
    err = [float(np.max(np.abs((p - factor * q).coeffs))) for q in (fwd, bwd)]
    return fwd if err[0] <= err[1] else bwd


def _deflate(num: Polynomial, den: Polynomial, rtol: float):
    """Remove factors common to ``num`` and ``den``; return (num, den, roots)."""
    cancelled: list[complex] = []
    # exact factors of s first, they need no root finding
    while den.degree >= 1 and num.degree >= 1 and den.coeffs[0] == 0.0 and num.coeffs[0] == 0.0:
        num, den = Polynomial(num.coeffs[1:]), Polynomial(den.coeffs[1:])
        cancelled.append(0j)
    changed = True
    while changed and den.degree >= 1 and num.degree >= 1 and not num.is_zero():
        changed = False
        try:
            cand = den.roots()
        except RootFindingError:
            break
        for r in cand:
            # a multiple root comes back as a cluster accurate only to
            # eps**(1/m); the cluster mean is accurate to rounding
            near = cand[np.abs(cand - r) <= CLUSTER_RTOL * max(1.0, abs(r))]
            if near.size > 1:
                r = complex(np.mean(near))
                if abs(r.imag) <= CLUSTER_RTOL * max(1.0, abs(r)):
                    r = complex(r.real, 0.0)
            if r.imag < 0:
                continue
            if abs(num(r)) > rtol * float(num.scale_at(r)):
                continue
            if r.imag == 0.0:
                factor, found = Polynomial([-r.real, 1.0]), [complex(r.real, 0.0)]
            else:
                factor, found = Polynomial([abs(r) ** 2, -2.0 * r.real, 1.0]), [r, r.conjugate()]
            if factor.degree > num.degree:
                continue
            cancelled.extend(found)
            num, den = _divide_exact(num, factor), _divide_exact(den, factor)
            changed = True
            break
    return num, den, cancelled


@dataclass(frozen=True, eq=False)
class RationalTransferFunction:
    """``num(s)/den(s)`` with a monic denominator.

    Parameters
    ----------
    num, den : Polynomial or coefficient sequence (ascending degree)
    cancel : bool
        Cancel common factors detected to ``CANCEL_RTOL``.
    """

    num: Polynomial
    den: Polynomial
    cancel: bool = field(default=True, repr=False)
    cancelled: tuple = field(default=(), repr=False)

    def __post_init__(self):
        num, den = _as_poly_any(self.num), _as_poly_any(self.den)
        if den.is_zero():
            raise LTIError("transfer function denominator is the zero polynomial")
        cancelled = list(self.cancelled)
        if num.is_zero():
            den = Polynomial([1.0])
        elif self.cancel:
            num, den, c = _deflate(num, den, CANCEL_RTOL)
            if c:
                log.info("cancelled common factor(s) at s = %s", np.round(c, 9).tolist())
            cancelled.extend(c)
        lead = den.lead
        object.__setattr__(self, "num", Polynomial(num.coeffs / lead))
        object.__setattr__(self, "den", Polynomial(den.coeffs / lead))
        object.__setattr__(self, "cancelled", tuple(cancelled))

    # construction helpers
    @classmethod
    def gain(cls, k: float) -> "RationalTransferFunction":
        return cls(Polynomial([k]), Polynomial([1.0]))

    @classmethod
    def from_zpk(cls, zeros, poles, k: float) -> "RationalTransferFunction":
        return cls(Polynomial.from_roots(zeros, k), Polynomial.from_roots(poles))

    # algebra
    def __add__(self, other):
        o = as_tf(other)
        return RationalTransferFunction(self.num * o.den + o.num * self.den, self.den * o.den)

    __radd__ = __add__

    def __neg__(self):
        return RationalTransferFunction(-self.num, self.den, cancel=False)

    def __sub__(self, other):
        return self + (-as_tf(other))

    def __rsub__(self, other):
        return as_tf(other) - self

    def __mul__(self, other):
        o = as_tf(other)
        return RationalTransferFunction(self.num * o.num, self.den * o.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = as_tf(other)
        if o.num.is_zero():
            raise ZeroDivisionError("division by the zero transfer function")
        return RationalTransferFunction(self.num * o.den, self.den * o.num)

    def __rtruediv__(self, other):
        return as_tf(other) / self

    # evaluation
    def __call__(self, s):
        return self.num(s) / self.den(s)

    @property
    def order(self) -> int:
        return self.den.degree

    def is_proper(self) -> bool:
        return self.num.degree <= self.den.degree

    def is_strictly_proper(self) -> bool:
        return self.num.degree < self.den.degree or self.num.is_zero()

    def dc_gain(self) -> float:
        return float(np.real(self(0.0)))

    def poles(self) -> np.ndarray:
        return poles(self)

    def zeros(self) -> np.ndarray:
        return self.num.roots()

    def freq_response(self, omegas) -> np.ndarray:
        return freq_response(self, omegas)

    def equivalent(self, other: "RationalTransferFunction", rtol: float = 1e-10) -> bool:
        """True when ``self.num*other.den == other.num*self.den`` coefficient-wise."""
        other = as_tf(other)
        return (self.num * other.den).allclose(other.num * self.den, rtol)

    def __repr__(self):
        return f"TF(num={self.num.coeffs.tolist()}, den={self.den.coeffs.tolist()})"


TF = RationalTransferFunction


def _as_poly_any(x) -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    return Polynomial(x)


def as_tf(x) -> RationalTransferFunction:
    if isinstance(x, RationalTransferFunction):
        return x
    if isinstance(x, Polynomial):
        return RationalTransferFunction(x, Polynomial([1.0]))
    return RationalTransferFunction.gain(float(x))


def integrator() -> RationalTransferFunction:
    return RationalTransferFunction([1.0], [0.0, 1.0])


def tf_add(g, h) -> RationalTransferFunction:
    return as_tf(g) + h


def tf_mul(g, h) -> RationalTransferFunction:
    return as_tf(g) * h


def tf_div(g, h) -> RationalTransferFunction:
    return as_tf(g) / h


def tf_feedback(g, h=1.0, sign: int = -1) -> RationalTransferFunction:
    """Closed loop ``g / (1 - sign*g*h)``; negative feedback by default."""
    g, h = as_tf(g), as_tf(h)
    ret = g.num * h.num
    char = g.den * h.den - sign * ret
    if char.is_zero():
        raise AlgebraicLoopError("1 + g*h is identically zero")
    return RationalTransferFunction(g.num * h.den, char)


def poles(g) -> np.ndarray:
    g = as_tf(g)
    if g.den.degree < 1:
        raise LTIError("transfer function has no poles (constant denominator)")
    return g.den.roots()


def freq_response(g, omegas) -> np.ndarray:
    """Complex gain ``g(j*omega)``.

    Points closer than ``POLE_HIT_TOL`` to an imaginary-axis pole are skipped
    (NaN) with a :class:`PoleEvaluationWarning`.
    """
    g = as_tf(g)
    w = np.atleast_1d(np.asarray(omegas, dtype=float))
    out = np.empty(w.shape, dtype=complex)
    bad = np.zeros(w.shape, dtype=bool)
    if g.den.degree >= 1:
        p = g.den.roots()
        axis = p[np.abs(p.real) <= POLE_HIT_TOL]
        for q in axis:
            bad |= np.abs(w - q.imag) <= POLE_HIT_TOL
    jw = 1j * w[~bad]
    out[~bad] = g.num(jw) / g.den(jw)
    if bad.any():
        out[bad] = np.nan
        warnings.warn(
            f"skipped {int(bad.sum())} frequency point(s) on imaginary-axis poles",
            PoleEvaluationWarning,
            stacklevel=2,
        )
    return out


# ---------------------------------------------------------------------------
# State space


@dataclass(frozen=True, eq=False)
class StateSpaceModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, C, D = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.B, self.C, self.D))
        n = A.shape[0]
        if A.shape != (n, n):
            raise LTIError(f"A must be square, got {A.shape}")
        if n == 0:
            A = np.zeros((0, 0))
        if B.shape[0] != n or C.shape[1] != n or D.shape != (C.shape[0], B.shape[1]):
            raise LTIError(f"inconsistent dimensions A{A.shape} B{B.shape} C{C.shape} D{D.shape}")
        for name, m in zip("ABCD", (A, B, C, D)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def freq_response(self, omegas) -> np.ndarray:
        """Array of shape (len(omegas), p, m)."""
        w = np.atleast_1d(np.asarray(omegas, dtype=float))
        n = self.n_states
        out = np.empty((w.size,) + self.D.shape, dtype=complex)
        eye = np.eye(n)
        for i, wi in enumerate(w):
            out[i] = self.C @ np.linalg.solve(1j * wi * eye - self.A, self.B) + self.D if n else self.D
        return out

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.A)

    def derivative(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u

    def output(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.C @ x + self.D @ u


def realize(g) -> StateSpaceModel:
    """Controllable-canonical realization of a proper SISO transfer function."""
    g = as_tf(g)
    if not g.is_proper():
        raise LTIError("cannot realize an improper transfer function")
    n = g.den.degree
    a = g.den.coeffs  # monic
    b = np.zeros(n + 1)
    b[: g.num.coeffs.size] = g.num.coeffs
    d = b[n]
    r = b[:n] - d * a[:n]
    A = np.zeros((n, n))
    if n:
        A[:-1, 1:] = np.eye(n - 1)
        A[-1, :] = -a[:n]
    B = np.zeros((n, 1))
    if n:
        B[-1, 0] = 1.0
    return StateSpaceModel(A, B, r.reshape(1, n), [[d]])


# ---------------------------------------------------------------------------
# Discrete filters


class DiscreteFilter:
    """SISO difference equation ``num_d(z)/den_d(z)`` in transposed direct form II.

    ``num_d`` and ``den_d`` are polynomials in z (ascending degree); ``den_d``
    is monic and at least the degree of ``num_d``.
    """

    def __init__(self, num_d, den_d, sample_period: float):
        num_d, den_d = _as_poly_any(num_d), _as_poly_any(den_d)
        if den_d.is_zero():
            raise LTIError("zero denominator")
        if num_d.degree > den_d.degree and not num_d.is_zero():
            raise LTIError("non-causal discrete filter (num order > den order)")
        if sample_period <= 0:
            raise LTIError("sample period must be positive")
        lead = den_d.lead
        self.num_d = Polynomial(num_d.coeffs / lead)
        self.den_d = Polynomial(den_d.coeffs / lead)
        self.sample_period = float(sample_period)
        n = self.den_d.degree
        # z^-1 form: b[k] multiplies u[n-k]
        b = np.zeros(n + 1)
        nc = self.num_d.coeffs
        b[n - np.arange(nc.size)] = nc
        self._b = b.tolist()
        self._a = self.den_d.coeffs[::-1].tolist()
        self._n = n
        self.state = [0.0] * n

    @property
    def order(self) -> int:
        return self._n

    def reset(self) -> None:
        self.state = [0.0] * self._n

    def _advance(self, u: float):
        b, a, s, n = self._b, self._a, self.state, self._n
        y = b[0] * u + (s[0] if n else 0.0)
        new = [0.0] * n
        for i in range(n):
            nxt = s[i + 1] if i + 1 < n else 0.0
            new[i] = nxt + b[i + 1] * u - a[i + 1] * y
        return y, new

    def peek(self, u: float) -> float:
        """Output for input ``u`` without committing the state update."""
        return self._advance(u)[0]

    def step(self, u: float) -> float:
        y, self.state = self._advance(u)
        return y

    def dc_gain(self) -> float:
        return float(self.num_d(1.0) / self.den_d(1.0))

    def freq_response(self, omegas) -> np.ndarray:
        z = np.exp(1j * np.atleast_1d(np.asarray(omegas, dtype=float)) * self.sample_period)
        return self.num_d(z) / self.den_d(z)

    def __repr__(self):
        return f"DiscreteFilter(num_d={self.num_d.coeffs.tolist()}, den_d={self.den_d.coeffs.tolist()}, T={self.sample_period})"


def discretize_tustin(g, sample_period: float, prewarp: float | None = None) -> DiscreteFilter:
    """Bilinear substitution ``s <- c (z-1)/(z+1)``.

    ``c = 2/T`` by default.  With ``prewarp = w0`` (rad/s, below Nyquist)
    ``c = w0 / tan(w0 T / 2)`` so the discrete response is exact at ``w0``.
    """
    g = as_tf(g)
    if not g.is_proper():
        raise LTIError("Tustin discretization needs a proper transfer function")
    if sample_period <= 0:
        raise LTIError("sample period must be positive")
    n = g.den.degree
    c = 2.0 / sample_period
    if prewarp is not None:
        if not 0 < prewarp < math.pi / sample_period:
            raise LTIError("prewarp frequency must lie in (0, pi/T)")
        c = prewarp / math.tan(0.5 * prewarp * sample_period)
    zm, zp = Polynomial([-1.0, 1.0]), Polynomial([1.0, 1.0])

    def sub(p: Polynomial) -> Polynomial:
        out = Polynomial([0.0])
        for i, ci in enumerate(p.coeffs):
            if ci != 0.0:
                out = out + (ci * c**i) * zm**i * zp ** (n - i)
        return out

    num_d, den_d = sub(g.num), sub(g.den)
    if abs(den_d(-1.0)) <= 1e-12 * float(den_d.scale_at(-1.0)):
        warnings.warn("discrete pole at z = -1 (marginal)", MarginalDiscretizationWarning, stacklevel=2)
    return DiscreteFilter(num_d, den_d, sample_period)


@dataclass(frozen=True)
class Block:
    """State-space block with named input and output signals."""

    ss: StateSpaceModel
    inputs: tuple
    outputs: tuple


def connect(blocks: Sequence[Block], wiring: dict, external: Sequence[str], outputs: Sequence[str]) -> StateSpaceModel:
    """Interconnect named blocks into one state-space model.

    ``wiring`` maps each block input name to ``{signal: gain}`` where a signal
    is any block output or an external input.  Block inputs that are external
    names and absent from ``wiring`` are fed directly.
    """
    out_names = [o for b in blocks for o in b.outputs]
    in_names = [i for b in blocks for i in b.inputs]
    if len(set(out_names)) != len(out_names):
        raise LTIError("duplicate block output names")
    n = sum(b.ss.n_states for b in blocks)
    ny, nu, nr = len(out_names), len(in_names), len(external)
    A = np.zeros((n, n))
    B = np.zeros((n, nu))
    C = np.zeros((ny, n))
    D = np.zeros((ny, nu))
    xo = yo = uo = 0
    for b in blocks:
        ns, p, m = b.ss.n_states, len(b.outputs), len(b.inputs)
        A[xo:xo + ns, xo:xo + ns] = b.ss.A
        B[xo:xo + ns, uo:uo + m] = b.ss.B
        C[yo:yo + p, xo:xo + ns] = b.ss.C
        D[yo:yo + p, uo:uo + m] = b.ss.D
        xo, yo, uo = xo + ns, yo + p, uo + m
    # u = M y + N r
    M = np.zeros((nu, ny))
    N = np.zeros((nu, nr))
    for iu, name in enumerate(in_names):
        terms = wiring.get(name)
        if terms is None:
            if name not in external:
                raise LTIError(f"block input {name!r} is not wired")
            terms = {name: 1.0}
        for sig, gain in terms.items():
            if sig in out_names:
                M[iu, out_names.index(sig)] += gain
            elif sig in external:
                N[iu, list(external).index(sig)] += gain
            else:
                raise LTIError(f"unknown signal {sig!r}")
    L = np.eye(ny) - D @ M
    if abs(np.linalg.det(L)) < 1e-12:
        raise AlgebraicLoopError("interconnection has an algebraic loop")
    Li = np.linalg.inv(L)
    Cy, Dy = Li @ C, Li @ D @ N  # y = Cy x + Dy r
    Acl = A + B @ M @ Cy
    Bcl = B @ (M @ Dy + N)
    sel = [out_names.index(o) for o in outputs]
    return StateSpaceModel(Acl, Bcl, Cy[sel], Dy[sel])


def pade_delay(delay: float) -> RationalTransferFunction:
    """First-order Pade approximation of ``exp(-s*delay)``."""
    if delay <= 0:
        return RationalTransferFunction.gain(1.0)
    a = 2.0 / delay
    return RationalTransferFunction([a, -1.0], [a, 1.0])


def step_response(g, t) -> np.ndarray:
    """Unit-step response of a proper SISO system on a uniform time grid.

    Uses the exact zero-order-hold transition matrix, so the result is exact
    at the grid points for a step input.
    """
    ss = realize(g) if isinstance(g, (RationalTransferFunction, int, float)) else g
    t = np.asarray(t, dtype=float)
    dt = t[1] - t[0]
    n = ss.n_states
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = ss.A
    M[:n, n] = ss.B[:, 0]
    E = expm(M * dt)
    Ad, Bd = E[:n, :n], E[:n, n]
    x = np.zeros(n)
    y = np.empty(t.size)
    for i in range(t.size):
        y[i] = (ss.C[0] @ x) + ss.D[0, 0]
        x = Ad @ x + Bd
    return y
