"""Fragmentation kernels, their cell averages and the mass-balance checks.

A :class:`KernelModel` bundles the continuous breakage rate ``a(x)``, the
daughter density ``b(x|y)``, the coupling functions ``b_i(y)`` feeding the
discrete regime, and the discrete rates ``a_i`` / daughter numbers
``b_{i,j}``.  Cell averages are computed by composite Gauss-Legendre
quadrature (5 nodes per cell and dimension) unless the model supplies closed
forms, as :class:`PowerLawModel` does.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate

from .errors import (
    CouplingBoundViolation,
    KernelError,
    QuadratureFailure,
    UnboundedKernel,
)
from .expr import Expression
from .mesh import Mesh

logger = logging.getLogger(__name__)

GAUSS_NODES = 5
_XI, _W = np.polynomial.legendre.leggauss(GAUSS_NODES)


class KernelModel:
    """Rates and daughter distributions of the mixed fragmentation model.

    Parameters
    ----------
    N, R:
        Discrete/continuous cutoff (positive integer) and truncation point.
    a:
        Vectorised ``a(x)``.
    b:
        Vectorised ``b(x, y)``; only evaluated where ``x < y``.
    b_i:
        Vectorised ``b_i(i, y)`` for integer ``i`` in ``1..N``.
    a_disc:
        ``(a_1, ..., a_N)`` with ``a_1 = 0``.
    b_disc:
        ``N x N`` array, entry ``[i-1, j-1]`` holds ``b_{i,j}`` for ``i < j``.
    b_disc_exact:
        Optional rational version of ``b_disc`` used by the exact discrete
        mass check.
    """

    def __init__(self, N, R, a, b, b_i, a_disc, b_disc, b_disc_exact=None, name="custom"):
        if int(N) != N or N < 1:
            raise KernelError(f"N must be a positive integer, got {N}")
        if not R > N:
            raise KernelError(f"R={R} must exceed N={N}")
        self.N = int(N)
        self.R = float(R)
        self.a = a
        self.b = b
        self.b_i = b_i
        self.a_disc = np.array(a_disc, dtype=float)
        if self.a_disc.shape != (self.N,):
            raise KernelError(f"a_disc must have length N={self.N}")
        if self.a_disc[0] != 0:
            raise KernelError("a_1 must be 0: monomers cannot fragment")
        if np.any(self.a_disc < 0) or not np.all(np.isfinite(self.a_disc)):
            raise KernelError("discrete rates must be finite and nonnegative")
        bd = np.array(b_disc, dtype=float)
        if bd.shape != (self.N, self.N):
            raise KernelError(f"b_disc must be {self.N}x{self.N}")
        self.b_disc = np.triu(bd, k=1)
        if np.any(self.b_disc < 0) or not np.all(np.isfinite(self.b_disc)):
            raise KernelError("discrete daughter numbers must be finite and nonnegative")
        self.b_disc_exact = b_disc_exact
        self.name = name

    def daughter(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        with np.errstate(all="ignore"):
            vals = np.asarray(self.b(x, y), dtype=float)
        return np.where(x < y, vals, 0.0)

    def coupling(self, i, y):
        with np.errstate(all="ignore"):
            return np.asarray(self.b_i(np.asarray(i), np.asarray(y, float)), dtype=float)

    def rate(self, x):
        with np.errstate(all="ignore"):
            x = np.asarray(x, float)
            return np.broadcast_to(np.asarray(self.a(x), dtype=float), x.shape)

    def b_disc_value(self, i: int, j: int) -> Fraction:
        if self.b_disc_exact is not None:
            return Fraction(self.b_disc_exact[i - 1][j - 1])
        return Fraction(float(self.b_disc[i - 1, j - 1]))

    def with_R(self, R: float) -> "KernelModel":
        """Same physics on a different truncation interval."""
        return KernelModel(self.N, R, self.a, self.b, self.b_i, self.a_disc,
                           self.b_disc, self.b_disc_exact, self.name)

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, N={self.N}, R={self.R:g})"


def _int_pow(l, r, p):
    """Elementwise ``int_l^r y**p dy`` for ``0 < l < r``, robust for thin cells."""
    l = np.asarray(l, float)
    r = np.asarray(r, float)
    t = np.log1p((r - l) / l)
    q = p + 1.0
    if q == 0.0:
        return t
    return l**q * np.expm1(q * t) / q


class PowerLawModel(KernelModel):
    """``a(x) = x**alpha``, ``b(x|y) = (nu+2) x**nu / y**(nu+1)`` with the
    matching discrete and coupling terms; ``-2 < nu <= 0``."""

    def __init__(self, alpha: float, nu: float, N: int = 5, R: float = 15.0):
        alpha = float(alpha)
        nu = float(nu)
        if not -2.0 < nu <= 0.0:
            raise KernelError(f"nu must lie in (-2, 0], got {nu}")
        self.alpha = alpha
        self.nu = nu
        N = int(N)
        a_disc = [0.0] + [float(i) ** alpha for i in range(2, N + 1)]
        exact = [[Fraction(2, j - 1) if i < j else Fraction(0) for j in range(1, N + 1)]
                 for i in range(1, N + 1)]
        b_disc = [[float(v) for v in row] for row in exact]
        super().__init__(
            N, R,
            a=lambda x: x**alpha,
            b=lambda x, y: (nu + 2.0) * x**nu / y ** (nu + 1.0),
            b_i=lambda i, y: self.coupling_weight(i) / y ** (nu + 1.0),
            a_disc=a_disc,
            b_disc=b_disc,
            b_disc_exact=exact,
            name=f"powerlaw(alpha={alpha:g}, nu={nu:g})",
        )

    def coupling_weight(self, i):
        i = np.asarray(i, dtype=float)
        p = self.nu + 2.0
        return (i**p - (i - 1.0) ** p) / i

    def with_R(self, R: float) -> "PowerLawModel":
        return PowerLawModel(self.alpha, self.nu, self.N, R)

    # closed-form cell averages
    def exact_average_rate(self, mesh: Mesh) -> np.ndarray:
        l, r = mesh.edges[:-1], mesh.edges[1:]
        return _int_pow(l, r, self.alpha) / mesh.widths

    def exact_average_daughter(self, mesh: Mesh) -> np.ndarray:
        nu = self.nu
        l, r, dx = mesh.edges[:-1], mesh.edges[1:], mesh.widths
        inner = _int_pow(l, r, nu)  # x-integral per cell
        outer = _int_pow(l, r, -(nu + 1.0))  # y-integral per cell
        B = np.triu((nu + 2.0) * np.outer(inner / dx, outer / dx), k=1)
        # diagonal: integrate over the triangle x < y of one cell
        if nu == -1.0:
            t = dx / l
            diag = l * ((1.0 + t) * np.log1p(t) - t)
        else:
            diag = (nu + 2.0) / (nu + 1.0) * (dx - l ** (nu + 1.0) * outer)
        B[np.diag_indices_from(B)] = diag / dx**2
        return B

    def exact_average_coupling(self, mesh: Mesh) -> np.ndarray:
        l, r, dx = mesh.edges[:-1], mesh.edges[1:], mesh.widths
        avg = _int_pow(l, r, -(self.nu + 1.0)) / dx
        w = self.coupling_weight(np.arange(1, self.N + 1))
        return np.outer(w, avg)

    def exact_suprema(self) -> tuple[float, float]:
        N, R, nu = float(self.N), self.R, self.nu
        alpha_R = max(N**self.alpha, R**self.alpha)
        # x**nu peaks at x = N; y**-(nu+1) peaks at y = N or y = R
        beta_R = (nu + 2.0) * N**nu * max(N ** -(nu + 1.0), R ** -(nu + 1.0))
        return alpha_R, beta_R


def expression_model(N, R, a: str, b: str, b_i: str, a_disc, b_disc) -> KernelModel:
    """Build a :class:`KernelModel` from expression strings.

    ``a`` is in ``x``; ``b`` in ``x, y``; ``b_i`` in ``i, y``; ``b_disc`` is an
    expression in ``i, j`` or an explicit ``N x N`` nested list.
    """
    N = int(N)
    ea = Expression(a, ("x",))
    eb = Expression(b, ("x", "y"))
    ebi = Expression(b_i, ("i", "y"))
    if isinstance(b_disc, str):
        ebd = Expression(b_disc, ("i", "j"))
        exact = [[ebd.exact(i=i, j=j) if i < j else Fraction(0) for j in range(1, N + 1)]
                 for i in range(1, N + 1)]
    else:
        rows = [[Fraction(v) for v in row] for row in b_disc]
        exact = [[rows[i][j] if i < j else Fraction(0) for j in range(N)] for i in range(N)]
    model = KernelModel(
        N, R,
        a=lambda x: ea(x=x),
        b=lambda x, y: eb(x=x, y=y),
        b_i=lambda i, y: ebi(i=i, y=y),
        a_disc=a_disc,
        b_disc=[[float(v) for v in row] for row in exact],
        b_disc_exact=exact,
        name="expr",
    )
    check_sampled_nonnegative(model)
    check_coupling_bound(model)
    return model


# ---------------------------------------------------------------------------
# quadrature

def _cell_nodes(lo, hi):
    """Gauss nodes/weights on each interval ``[lo, hi]``; shapes ``(n, 5)``."""
    lo = np.asarray(lo, float)[..., None]
    hi = np.asarray(hi, float)[..., None]
    half = 0.5 * (hi - lo)
    return lo + half * (_XI + 1.0), half * _W


def _finite(values, what):
    if not np.all(np.isfinite(values)):
        raise QuadratureFailure(f"{what} evaluated to a non-finite value at a quadrature node")
    return values


def _use_exact(model, method):
    if method not in ("auto", "exact", "quadrature"):
        raise ValueError(f"unknown averaging method {method!r}")
    has = isinstance(model, PowerLawModel)
    if method == "exact" and not has:
        raise KernelError(f"{model!r} has no closed-form averages")
    return has and method != "quadrature"


def average_rate(model: KernelModel, mesh: Mesh, method: str = "auto") -> np.ndarray:
    """Cell averages ``A_i`` of the breakage rate."""
    if _use_exact(model, method):
        return model.exact_average_rate(mesh)
    x, w = _cell_nodes(mesh.edges[:-1], mesh.edges[1:])
    vals = _finite(model.rate(x), "a(x)")
    return (vals * w).sum(axis=1) / mesh.widths


def average_daughter(model: KernelModel, mesh: Mesh, method: str = "auto") -> np.ndarray:
    """Double cell averages ``B_{i,j}`` of ``b(x|y)`` over ``Lambda_i x Lambda_j``.

    Entries below the diagonal vanish because ``b(x|y) = 0`` for ``x > y``;
    diagonal cells integrate over the triangle ``x < y`` by iterated Gauss
    quadrature.
    """
    if _use_exact(model, method):
        return model.exact_average_daughter(mesh)
    lo, hi, dx = mesh.edges[:-1], mesh.edges[1:], mesh.widths
    n = mesh.cell_count
    x, wx = _cell_nodes(lo, hi)
    y, wy = _cell_nodes(lo, hi)
    B = np.zeros((n, n))
    for i in range(n - 1):
        vals = model.daughter(x[i][:, None, None], y[i + 1:][None, :, :])
        _finite(vals, "b(x|y)")
        # fixed-order reduction: inner over x nodes, then y nodes
        B[i, i + 1:] = np.einsum("p,pjq,jq->j", wx[i], vals, wy[i + 1:]) / (dx[i] * dx[i + 1:])
    # triangle {lo < x < y < hi}: outer y nodes, inner x nodes on [lo, y]
    xt, wt = _cell_nodes(np.broadcast_to(lo[:, None], y.shape), y)
    vals = _finite(model.daughter(xt, y[..., None]), "b(x|y)")
    inner = (vals * wt).sum(axis=-1)
    B[np.diag_indices(n)] = (inner * wy).sum(axis=-1) / dx**2
    return B


def average_coupling(model: KernelModel, mesh: Mesh, method: str = "auto") -> np.ndarray:
    """Cell averages ``B~_{i,j}`` of ``b_i`` over ``Lambda_j``; shape ``(N, I_h)``."""
    if _use_exact(model, method):
        return model.exact_average_coupling(mesh)
    y, w = _cell_nodes(mesh.edges[:-1], mesh.edges[1:])
    i = np.arange(1, model.N + 1)[:, None, None]
    vals = _finite(model.coupling(i, y[None, :, :]), "b_i(y)")
    vals = np.broadcast_to(vals, (model.N,) + y.shape)
    return (vals * w).sum(axis=-1) / mesh.widths


# ---------------------------------------------------------------------------
# compatibility conditions

def check_continuous_mass_condition(model: KernelModel, y: float, quad_tol: float = 1e-12) -> float:
    """``|int_N^y x b(x|y) dx + sum_j j b_j(y) - y|`` for one ``y`` in ``(N, R)``."""
    N = float(model.N)
    if not N < y < model.R:
        raise KernelError(f"y={y} outside ({N}, {model.R})")

    def integrand(x):
        return x * float(model.b(np.float64(x), np.float64(y)))

    val, err = integrate.quad(integrand, N, y, epsabs=quad_tol, epsrel=1e-13, limit=200)
    if not (math.isfinite(val) and math.isfinite(err)):
        raise QuadratureFailure(f"x b(x|{y}) is not integrable numerically")
    j = np.arange(1, model.N + 1)
    discrete = math.fsum(j * model.coupling(j, y))
    return abs(val + discrete - y)


def check_discrete_mass_condition(model: KernelModel, i: int) -> float:
    """``|sum_{j<i} j b_{j,i} - i|`` evaluated in rational arithmetic."""
    if not 2 <= i <= model.N:
        raise KernelError(f"i={i} outside 2..{model.N}")
    total = sum((j * model.b_disc_value(j, i) for j in range(1, i)), Fraction(0))
    return float(abs(total - i))


def check_sampled_nonnegative(model: KernelModel, samples: int = 401) -> None:
    x = np.linspace(model.N, model.R, samples)
    if np.any(model.rate(x) < 0):
        raise KernelError("a(x) is negative somewhere on (N, R)")
    X, Y = np.meshgrid(x, x, indexing="ij")
    if np.any(model.daughter(X, Y) < 0):
        raise KernelError("b(x|y) is negative somewhere on N < x < y < R")
    i = np.arange(1, model.N + 1)[:, None]
    if np.any(model.coupling(i, x[None, :]) < 0):
        raise KernelError("a coupling function b_i is negative somewhere on (N, R)")


def check_coupling_bound(model: KernelModel, samples: int = 1001) -> None:
    """Sampled check of ``b_i(y) <= y``; raises :class:`CouplingBoundViolation`."""
    y = np.linspace(model.N, model.R, samples)[1:]
    i = np.arange(1, model.N + 1)[:, None]
    vals = np.broadcast_to(model.coupling(i, y[None, :]), (model.N, y.size))
    bad = np.argwhere(vals > y[None, :] * (1 + 1e-12))
    if bad.size:
        ii, jj = bad[0]
        raise CouplingBoundViolation(
            f"b_{ii + 1}({y[jj]:g}) = {vals[ii, jj]:g} exceeds y; the stability bound needs b_i(y) <= y"
        )


@dataclass(frozen=True)
class Suprema:
    alpha_R: float
    beta_R: float
    K_R: float
    exact: bool

    def __iter__(self):
        return iter((self.alpha_R, self.beta_R, self.K_R))


def essential_suprema(model: KernelModel, sample_budget: int = 2001, ceiling: float = 1e12) -> Suprema:
    """``alpha(R)``, ``beta(R)`` and ``K(R) = alpha(R) beta(R) R``.

    Exact for power-law models; otherwise a dense-sampling estimate inflated
    by 5% (``exact=False``).
    """
    if isinstance(model, PowerLawModel):
        a_sup, b_sup = model.exact_suprema()
        return Suprema(a_sup, b_sup, a_sup * b_sup * model.R, True)
    x = np.linspace(model.N, model.R, sample_budget)
    a_vals = model.rate(x)
    side = max(2, int(math.isqrt(sample_budget * 50)))
    g = np.linspace(model.N, model.R, side)
    X, Y = np.meshgrid(g, g, indexing="ij")
    upper = X < Y
    b_vals = np.asarray(model.b(X[upper], Y[upper]), dtype=float)
    for name, vals in (("a", a_vals), ("b", b_vals)):
        if not np.all(np.isfinite(vals)) or (vals.size and vals.max() > ceiling):
            raise UnboundedKernel(f"{name} exceeds {ceiling:g} on the truncated domain")
    a_sup = 1.05 * float(a_vals.max())
    b_sup = 1.05 * float(b_vals.max()) if b_vals.size else 0.0
    return Suprema(a_sup, b_sup, a_sup * b_sup * model.R, False)


# ---------------------------------------------------------------------------
# coefficient bundle

@dataclass(frozen=True, eq=False)
class AveragedCoefficients:
    """Cell-averaged kernels plus the discrete terms the scheme needs."""

    A: np.ndarray
    B: np.ndarray
    B_tilde: np.ndarray
    alpha_R: float
    beta_R: float
    K_R: float
    a_disc: np.ndarray
    b_disc: np.ndarray
    suprema_exact: bool = True

    @property
    def cell_count(self) -> int:
        return len(self.A)

    @property
    def N(self) -> int:
        return len(self.a_disc)

    def check_bounds(self, R: float, rtol: float = 1e-12) -> list[str]:
        """Return violated bound descriptions (empty when all hold)."""
        problems = []
        for name, arr in (("A", self.A), ("B", self.B), ("B_tilde", self.B_tilde)):
            if np.any(arr < 0):
                problems.append(f"{name} has negative entries")
        if self.A.size and self.A.max() > self.alpha_R * (1 + rtol):
            problems.append("some A_i exceeds alpha(R)")
        if self.B.size and self.B.max() > self.beta_R * (1 + rtol):
            problems.append("some B_ij exceeds beta(R)")
        if self.B_tilde.size and self.B_tilde.max() > R * (1 + rtol):
            problems.append("some B~_ij exceeds R")
        return problems


def build_coefficients(model: KernelModel, mesh: Mesh, method: str = "auto",
                       sample_budget: int = 2001) -> AveragedCoefficients:
    if abs(mesh.N - model.N) > 0 or abs(mesh.R - model.R) > 1e-12 * model.R:
        raise KernelError(f"mesh spans ({mesh.N:g}, {mesh.R:g}) but model covers ({model.N}, {model.R:g})")
    sup = essential_suprema(model, sample_budget)
    return AveragedCoefficients(
        A=average_rate(model, mesh, method),
        B=average_daughter(model, mesh, method),
        B_tilde=average_coupling(model, mesh, method),
        alpha_R=sup.alpha_R,
        beta_R=sup.beta_R,
        K_R=sup.K_R,
        a_disc=model.a_disc.copy(),
        b_disc=model.b_disc.copy(),
        suprema_exact=sup.exact,
    )


def write_coefficients_csv(coeffs: AveragedCoefficients, fh) -> None:
    """Dump ``(name, i, j, value)`` rows for audit; ``j`` is empty for ``A``."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["name", "i", "j", "value"])
    for i, v in enumerate(coeffs.A):
        w.writerow(["A", i, "", format(v, ".17g")])
    for (i, j), v in np.ndenumerate(coeffs.B):
        w.writerow(["B", i, j, format(v, ".17g")])
    for (i, j), v in np.ndenumerate(coeffs.B_tilde):
        w.writerow(["B_tilde", i + 1, j, format(v, ".17g")])


def reconstruction_error(model: KernelModel, mesh: Mesh, points_x, points_y=None, method="auto"):
    """Max pointwise errors of the piecewise-constant reconstructions ``a^h``,
    ``b^h`` and ``b_i^h`` at the given sample points (``x < y`` for ``b``)."""
    x = np.asarray(points_x, float)
    a_err = np.max(np.abs(mesh.reconstruct(average_rate(model, mesh, method), x) - model.rate(x)))
    out = {"a": float(a_err)}
    Bt = average_coupling(model, mesh, method)
    idx = mesh.locate(x)
    i = np.arange(1, model.N + 1)[:, None]
    out["b_i"] = float(np.max(np.abs(Bt[:, idx] - model.coupling(i, x[None, :]))))
    if points_y is not None:
        y = np.asarray(points_y, float)
        B = average_daughter(model, mesh, method)
        out["b"] = float(np.max(np.abs(B[mesh.locate(x), mesh.locate(y)] - model.daughter(x, y))))
    return out

