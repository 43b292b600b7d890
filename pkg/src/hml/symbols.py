"""Symbol matrices and eigen-structure of the 6x6 Maxwell system.

Everything here is a pure function of small inputs: a material model, a
point x in space, and a spacetime frequency direction zeta = (zeta0, zeta')
on the unit sphere of R^4.  The matrices are the first-order symbol
P = zeta0*A0 + sum_j zeta_j*A^j, the divergence symbol B, the dispersion
matrix L = A0^{-1} * sum_j zeta_j A^j, and the Poisson-bracket machinery
driving the propagation checks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Q_MATRICES",
    "FrequencyDirection",
    "MaterialModel",
    "SymbolMatrix",
    "EigenStructure",
    "TestSymbol",
    "antisym_E",
    "assemble_system_matrices",
    "assemble_P",
    "assemble_divergence_symbol",
    "dispersion_matrix",
    "propagation_basis",
    "eigen_structure",
    "poisson_bracket",
    "propagation_operator",
    "curl_coefficient_trace",
]


class DegenerateDirectionError(ValueError):
    """Raised when zeta' = 0 and the eigenbasis is not canonical."""


class DomainError(ValueError):
    """Raised when a model is evaluated outside its declared box."""


class UnsupportedGeneratorError(ValueError):
    """Raised when a generator is asked for an incompatible model kind."""


# Generators of the antisymmetric curl block: E(zeta') = sum_j zeta_j * Q_j.
Q_MATRICES = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)
Q_MATRICES.setflags(write=False)


@dataclass(frozen=True)
class FrequencyDirection:
    """Unit spacetime frequency zeta = (zeta0, zeta') on S^3.

    zeta0 is dual to t, zeta' = (zeta1, zeta2, zeta3) dual to x.
    Construction normalizes, so zeta0**2 + |zeta'|**2 == 1 always holds.
    """

    zeta0: float
    zetaP: np.ndarray

    def __post_init__(self):
        zp = np.asarray(self.zetaP, dtype=float).reshape(3)
        norm = float(np.sqrt(self.zeta0**2 + zp @ zp))
        if norm == 0.0:
            raise ValueError("zero frequency vector cannot be normalized")
        object.__setattr__(self, "zeta0", float(self.zeta0) / norm)
        zp = zp / norm
        zp.setflags(write=False)
        object.__setattr__(self, "zetaP", zp)

    @classmethod
    def from_vec4(cls, vec: Sequence[float]) -> "FrequencyDirection":
        v = np.asarray(vec, dtype=float).reshape(4)
        return cls(v[0], v[1:])

    @property
    def vec4(self) -> np.ndarray:
        return np.concatenate(([self.zeta0], self.zetaP))

    @property
    def zetaP_norm(self) -> float:
        return float(np.linalg.norm(self.zetaP))


ScalarField = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def _const_field(value: float) -> ScalarField:
    def f(x1, x2, x3):
        return np.broadcast_to(np.float64(value), np.broadcast(x1, x2, x3).shape).copy()

    return f


def _zero_grad(x1, x2, x3):
    shape = np.broadcast(x1, x2, x3).shape
    return np.zeros((3,) + shape)


@dataclass(frozen=True)
class MaterialModel:
    """Coefficient fields eps(x), eta(x), sigma(x) with analytic gradients.

    ``kind`` is "constant" (zero gradients) or "scalar_smooth".  All three
    coefficients are scalar fields multiplying the identity; eps and eta
    must be bounded below by a strictly positive constant, sigma >= 0.
    Scalar fields take three broadcastable coordinate arrays and return
    an array; gradient fields return shape (3,) + broadcast shape.
    """

    kind: str
    eps: ScalarField
    eta: ScalarField
    sigma: ScalarField
    grad_eps: Callable = _zero_grad
    grad_eta: Callable = _zero_grad
    eps_min: float = 1e-12
    eta_min: float = 1e-12
    domain: tuple | None = None  # ((lo1,lo2,lo3),(hi1,hi2,hi3)) or None

    @classmethod
    def constant(cls, eps: float = 1.0, eta: float = 1.0, sigma: float = 0.0) -> "MaterialModel":
        if eps <= 0 or eta <= 0:
            raise ValueError("eps and eta must be strictly positive")
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        return cls(
            kind="constant",
            eps=_const_field(eps),
            eta=_const_field(eta),
            sigma=_const_field(sigma),
            eps_min=eps,
            eta_min=eta,
        )

    @classmethod
    def scalar_smooth(
        cls,
        eps: ScalarField,
        eta: ScalarField,
        sigma: ScalarField,
        grad_eps: Callable,
        grad_eta: Callable,
        eps_min: float,
        eta_min: float,
        domain: tuple | None = None,
    ) -> "MaterialModel":
        if eps_min <= 0 or eta_min <= 0:
            raise ValueError("lower bounds must be strictly positive")
        return cls(
            kind="scalar_smooth",
            eps=eps,
            eta=eta,
            sigma=sigma,
            grad_eps=grad_eps,
            grad_eta=grad_eta,
            eps_min=eps_min,
            eta_min=eta_min,
            domain=domain,
        )

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def check_in_domain(self, x: Sequence[float]) -> None:
        if self.domain is None:
            return
        lo, hi = self.domain
        x = np.asarray(x, dtype=float).reshape(3)
        if np.any(x < np.asarray(lo) - 1e-12) or np.any(x > np.asarray(hi) + 1e-12):
            raise DomainError(f"point {x.tolist()} outside model domain {self.domain}")

    def eps_at(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(3)
        return float(self.eps(x[0], x[1], x[2]))

    def eta_at(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(3)
        return float(self.eta(x[0], x[1], x[2]))

    def sigma_at(self, x) -> float:
        x = np.asarray(x, dtype=float).reshape(3)
        return float(self.sigma(x[0], x[1], x[2]))

    def grad_eps_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(3)
        return np.asarray(self.grad_eps(x[0], x[1], x[2]), dtype=float).reshape(3)

    def grad_eta_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(3)
        return np.asarray(self.grad_eta(x[0], x[1], x[2]), dtype=float).reshape(3)

    def speed_at(self, x) -> float:
        """Propagation speed v(x) = 1/sqrt(eps(x)*eta(x))."""
        return 1.0 / np.sqrt(self.eps_at(x) * self.eta_at(x))


@dataclass(frozen=True)
class SymbolMatrix:
    """A 6x6 symbol value together with the evaluation point (x, zeta)."""

    entries: np.ndarray
    eval_point: tuple

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def antisym_E(zetaP) -> np.ndarray:
    """Antisymmetric 3x3 matrix acting as p -> zeta' x p."""
    z = np.asarray(zetaP, dtype=float).reshape(3)
    return np.array(
        [
            [0.0, -z[2], z[1]],
            [z[2], 0.0, -z[0]],
            [-z[1], z[0], 0.0],
        ]
    )


def assemble_system_matrices(model: MaterialModel, x) -> tuple:
    """(A0, A1, A2, A3, C) of the symmetric first-order system at x.

    A0 = blockdiag(eps*Id, eta*Id), A^k has off-diagonal blocks Q_k^T / Q_k,
    C = blockdiag(sigma*Id, 0).
    """
    model.check_in_domain(x)
    eps = model.eps_at(x)
    eta = model.eta_at(x)
    sig = model.sigma_at(x)
    A0 = np.zeros((6, 6))
    A0[:3, :3] = eps * np.eye(3)
    A0[3:, 3:] = eta * np.eye(3)
    Ak = []
    for k in range(3):
        A = np.zeros((6, 6))
        A[:3, 3:] = Q_MATRICES[k].T
        A[3:, :3] = Q_MATRICES[k]
        Ak.append(A)
    C = np.zeros((6, 6))
    C[:3, :3] = sig * np.eye(3)
    return (A0, Ak[0], Ak[1], Ak[2], C)


def assemble_P(model: MaterialModel, x, zeta: FrequencyDirection) -> SymbolMatrix:
    """P(x, zeta) = zeta0*A0 + sum_j zeta_j*A^j = [[zeta0 eps Id, -E], [E, zeta0 eta Id]]."""
    model.check_in_domain(x)
    eps = model.eps_at(x)
    eta = model.eta_at(x)
    E = antisym_E(zeta.zetaP)
    P = np.zeros((6, 6))
    P[:3, :3] = zeta.zeta0 * eps * np.eye(3)
    P[3:, 3:] = zeta.zeta0 * eta * np.eye(3)
    P[:3, 3:] = -E
    P[3:, :3] = E
    return SymbolMatrix(P, (tuple(np.asarray(x, float).reshape(3)), zeta))


def assemble_divergence_symbol(zetaP) -> np.ndarray:
    """B(zeta') = blockdiag(diag(zeta'), diag(zeta')); det of each block is z1*z2*z3."""
    z = np.asarray(zetaP, dtype=float).reshape(3)
    return np.diag(np.concatenate([z, z]))


def dispersion_matrix(model: MaterialModel, x, zetaP) -> np.ndarray:
    """L(x, zeta') = A0^{-1} sum_j zeta_j A^j = [[0, -E/eps], [E/eta, 0]]."""
    model.check_in_domain(x)
    eps = model.eps_at(x)
    eta = model.eta_at(x)
    E = antisym_E(zetaP)
    L = np.zeros((6, 6))
    L[:3, 3:] = -E / eps
    L[3:, :3] = E / eta
    return L


def propagation_basis(zetaP) -> tuple:
    """Right-handed orthonormal triple (zhat, z1, z2) attached to zeta' != 0.

    In polar coordinates zhat = (sin t cos p, sin t sin p, cos t),
    z1 = (cos t cos p, cos t sin p, -sin t), z2 = (-sin p, cos p, 0).
    On the polar axis (theta = 0 or pi) the azimuth is fixed to p = 0.
    """
    z = np.asarray(zetaP, dtype=float).reshape(3)
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise DegenerateDirectionError("propagation basis undefined for zeta' = 0")
    zhat = z / norm
    ct = np.clip(zhat[2], -1.0, 1.0)
    st = np.sqrt(max(0.0, 1.0 - ct * ct))
    if st < 1e-300:
        cp, sp = 1.0, 0.0
    else:
        cp, sp = zhat[0] / st, zhat[1] / st
    z1 = np.array([ct * cp, ct * sp, -st])
    z2 = np.array([-sp, cp, 0.0])
    return zhat, z1, z2


@dataclass(frozen=True)
class EigenStructure:
    """Spectrum and basis of P'(x, zeta) = A0^{-1} P = zeta0*Id + L.

    omegas = (w0, w+, w-) = (zeta0, zeta0 + v|zeta'|, zeta0 - v|zeta'|), each
    of multiplicity two.  ``basis`` holds the six eigenvectors as columns in
    the order (b0_1, b0_2, b+_1, b+_2, b-_1, b-_2); they are orthonormal in
    the A0 inner product.
    """

    omegas: tuple
    basis: np.ndarray
    speed: float

    MODE_ORDER = ("long-e", "long-h", "trans+1", "trans+2", "trans-1", "trans-2")

    def vector(self, mode: str) -> np.ndarray:
        return self.basis[:, self.MODE_ORDER.index(mode)]

    def omega_of_mode(self, mode: str) -> float:
        if mode.startswith("long"):
            return self.omegas[0]
        return self.omegas[1] if "+" in mode else self.omegas[2]

    @property
    def omega_per_column(self) -> np.ndarray:
        w0, wp, wm = self.omegas
        return np.array([w0, w0, wp, wp, wm, wm])


def eigen_structure(model: MaterialModel, x, zeta: FrequencyDirection) -> EigenStructure:
    """Analytic eigen-decomposition of P' = zeta0*Id + L at (x, zeta)."""
    zp = zeta.zetaP
    r = float(np.linalg.norm(zp))
    if r == 0.0:
        raise DegenerateDirectionError(
            "all eigenvalues collapse to zeta0 at zeta' = 0; basis not canonical"
        )
    model.check_in_domain(x)
    eps = model.eps_at(x)
    eta = model.eta_at(x)
    v = 1.0 / np.sqrt(eps * eta)
    zhat, z1, z2 = propagation_basis(zp)
    se, sh = 1.0 / np.sqrt(eps), 1.0 / np.sqrt(eta)
    b0_1 = np.concatenate([se * zhat, np.zeros(3)])
    b0_2 = np.concatenate([np.zeros(3), sh * zhat])
    ce, ch = 1.0 / np.sqrt(2 * eps), 1.0 / np.sqrt(2 * eta)
    bp_1 = np.concatenate([ce * z1, ch * z2])
    bp_2 = np.concatenate([ce * z2, -ch * z1])
    bm_1 = np.concatenate([ce * z1, -ch * z2])
    bm_2 = np.concatenate([ce * z2, ch * z1])
    basis = np.column_stack([b0_1, b0_2, bp_1, bp_2, bm_1, bm_2])
    omegas = (zeta.zeta0, zeta.zeta0 + v * r, zeta.zeta0 - v * r)
    return EigenStructure(omegas=omegas, basis=basis, speed=v)


@dataclass(frozen=True)
class TestSymbol:
    """Smooth test function psi(xt, zeta) with analytic first derivatives.

    xt = (t, x1, x2, x3).  ``dx`` returns the 4-gradient in xt, ``dzeta``
    the 4-gradient in zeta (of the 0-homogeneous extension when psi is
    restricted to the sphere).  Instances are built from a small closed
    family so that bracket evaluation stays exact to rounding.
    """

    value: Callable[[np.ndarray, np.ndarray], float]
    dx: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dzeta: Callable[[np.ndarray, np.ndarray], np.ndarray]
    label: str = "psi"

    __test__ = False  # not a pytest case despite the name

    @classmethod
    def constant(cls, c: float = 1.0) -> "TestSymbol":
        return cls(
            value=lambda xt, z: c,
            dx=lambda xt, z: np.zeros(4),
            dzeta=lambda xt, z: np.zeros(4),
            label=f"const({c})",
        )

    @classmethod
    def monomial_x(cls, powers: Sequence[int], coeff: float = 1.0) -> "TestSymbol":
        """coeff * t^p0 * x1^p1 * x2^p2 * x3^p3, independent of zeta."""
        p = tuple(int(q) for q in powers)

        def value(xt, z):
            return coeff * float(np.prod([xt[i] ** p[i] for i in range(4)]))

        def dx(xt, z):
            g = np.zeros(4)
            for i in range(4):
                if p[i] == 0:
                    continue
                terms = [xt[j] ** p[j] for j in range(4) if j != i]
                g[i] = coeff * p[i] * xt[i] ** (p[i] - 1) * float(np.prod(terms))
            return g

        return cls(value=value, dx=dx, dzeta=lambda xt, z: np.zeros(4), label=f"x^{p}")

    @classmethod
    def zeta_linear(cls, direction: Sequence[float]) -> "TestSymbol":
        """psi(zeta) = d . zeta, extended 0-homogeneously off the sphere."""
        d = np.asarray(direction, dtype=float).reshape(4)

        def value(xt, z):
            return float(d @ z)

        def dzeta(xt, z):
            # gradient of d.(zeta/|zeta|) restricted to |zeta| = 1
            return d - float(d @ z) * np.asarray(z)

        return cls(value=value, dx=lambda xt, z: np.zeros(4), dzeta=dzeta, label=f"zeta.{d.tolist()}")

    def __mul__(self, other: "TestSymbol") -> "TestSymbol":
        def value(xt, z):
            return self.value(xt, z) * other.value(xt, z)

        def dx(xt, z):
            return self.dx(xt, z) * other.value(xt, z) + self.value(xt, z) * other.dx(xt, z)

        def dzeta(xt, z):
            return self.dzeta(xt, z) * other.value(xt, z) + self.value(xt, z) * other.dzeta(xt, z)

        return TestSymbol(value=value, dx=dx, dzeta=dzeta, label=f"{self.label}*{other.label}")


def _dP_dx(model: MaterialModel, x, zeta: FrequencyDirection) -> np.ndarray:
    """Spatial derivatives of P: dP/dx_j = zeta0 * blockdiag(d_j eps Id, d_j eta Id)."""
    ge = model.grad_eps_at(x)
    gh = model.grad_eta_at(x)
    out = np.zeros((3, 6, 6))
    for j in range(3):
        out[j, :3, :3] = zeta.zeta0 * ge[j] * np.eye(3)
        out[j, 3:, 3:] = zeta.zeta0 * gh[j] * np.eye(3)
    return out


def poisson_bracket(model: MaterialModel, psi: TestSymbol, xt, zeta: FrequencyDirection) -> np.ndarray:
    """{P, psi} = sum_l (dP/dzeta_l dpsi/dxt_l - dpsi/dzeta_l dP/dxt_l) at (xt, zeta)."""
    xt = np.asarray(xt, dtype=float).reshape(4)
    x = xt[1:]
    A0, A1, A2, A3, _ = assemble_system_matrices(model, x)
    dP_dzeta = (A0, A1, A2, A3)
    gpsi_x = np.asarray(psi.dx(xt, zeta.vec4), dtype=float).reshape(4)
    gpsi_z = np.asarray(psi.dzeta(xt, zeta.vec4), dtype=float).reshape(4)
    out = np.zeros((6, 6))
    for l in range(4):
        out += dP_dzeta[l] * gpsi_x[l]
    dPx = _dP_dx(model, x, zeta)  # P does not depend on t
    for j in range(3):
        out -= gpsi_z[1 + j] * dPx[j]
    return out


def propagation_operator(model: MaterialModel, psi: TestSymbol, xt, zeta: FrequencyDirection) -> np.ndarray:
    """{P, psi} + psi * sum_k d_k A^k - 2 psi S, with S = (C + C^T)/2.

    For Maxwell's system sum_k d_k A^k vanishes identically (A^j constant,
    A0 time-independent), so the middle term contributes nothing.
    """
    xt = np.asarray(xt, dtype=float).reshape(4)
    x = xt[1:]
    bracket = poisson_bracket(model, psi, xt, zeta)
    sig = model.sigma_at(x)
    S = np.zeros((6, 6))
    S[:3, :3] = sig * np.eye(3)
    return bracket - 2.0 * float(psi.value(xt, zeta.vec4)) * S


def curl_coefficient_trace(zetaP, l: int, bracketing: str = "product_then_trace") -> float:
    """Tr((zeta' (x) zeta') * dE/dzeta_l), the scalar weight in the transport rows.

    dE/dzeta_l is the constant generator Q_l.  Both bracketings of the
    trace/ product are cyclic rearrangements and agree; the value vanishes
    identically because Q_l is antisymmetric.  Kept as an explicit numeric
    evaluation so the transport rows can be assembled exactly as printed.
    """
    z = np.asarray(zetaP, dtype=float).reshape(3)
    dyad = np.outer(z, z)
    Q = Q_MATRICES[l]
    if bracketing == "product_then_trace":
        return float(np.trace(dyad @ Q))
    if bracketing == "trace_then_product":
        return float(np.trace(Q @ dyad))
    raise ValueError(f"unknown bracketing {bracketing!r}")
