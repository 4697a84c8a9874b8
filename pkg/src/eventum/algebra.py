"""Exact algebra of quantum stochastic differentials and boundary generators.

Quantum Ito differentials for vacuum noise with d channels are represented
by (d+2) x (d+2) matrices over the ordered index set (-, 1..d, +): the
matrix unit with a single 1 in row ``mu``, column ``kappa`` stands for the
integrator increment dA^kappa_mu.  Matrix multiplication then realizes the
vacuum product rule

    dA^kappa_mu dA^nu_iota = delta^kappa_iota dA^nu_mu,

with the convention that delta^iota_kappa vanishes whenever iota = '+' or
kappa = '-'.  In particular the one-channel basis

    dt    = unit(-, +)                    dw = unit(-, o) + unit(o, +)
    dm    = dw + unit(o, o)               d- = unit(-, o)
    d+    = unit(o, +)                    dA = unit(o, o)

reproduces the Hudson-Parthasarathy table dA- dA+ = dt, dA- dA = dA-,
dA dA+ = dA+, (dA)^2 = dA, all other basis pairs zero.

Entries are kept as complex numbers with exact rational real and imaginary
parts so that every table identity holds bit-exactly, not within a floating
tolerance.  Floating point enters only in the operator-valued blocks of
:class:`BoundaryGenerator` and :class:`StochasticGenerator`, which live at
the opposite end of this module: they encode the scattering description of
a continuously measured system (blocks G, G_+, G^-, G^-_+ with arrival
intensity nu and free energy E) and its Fock-space counterpart (blocks
S, L^j = S^j_+, K = -S^-_+, K_j = -S^-_j).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "ExactComplex",
    "ItoMatrix",
    "BASIS_KINDS",
    "basis_differential",
    "index_labels",
    "minus_index",
    "matrix_unit",
    "mul",
    "star",
    "general_product_coefficient",
    "ito_correction",
    "star_coefficients",
    "epsilon_noise_square",
    "EpsilonNoiseIdentity",
    "BoundaryGenerator",
    "StochasticGenerator",
    "PseudoUnitarityResidual",
    "pseudo_unitarity_residual",
    "sign_convention_residuals",
    "g_to_s",
    "random_pseudo_unitary_generator",
    "product_table",
    "product_table_report",
    "format_product_table",
]

ScalarLike = Union[int, Fraction, float, complex, "ExactComplex"]


@dataclass(frozen=True)
class ExactComplex:
    """Complex number with exact rational real and imaginary parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    @staticmethod
    def coerce(value: ScalarLike) -> "ExactComplex":
        if isinstance(value, ExactComplex):
            return value
        if isinstance(value, (int, Fraction)):
            return ExactComplex(Fraction(value), Fraction(0))
        if isinstance(value, float):
            return ExactComplex(Fraction(value), Fraction(0))
        if isinstance(value, complex):
            return ExactComplex(Fraction(value.real), Fraction(value.imag))
        raise InvalidArgumentError(f"cannot coerce {value!r} to ExactComplex")

    def __add__(self, other: ScalarLike) -> "ExactComplex":
        o = ExactComplex.coerce(other)
        return ExactComplex(self.re + o.re, self.im + o.im)

    def __sub__(self, other: ScalarLike) -> "ExactComplex":
        o = ExactComplex.coerce(other)
        return ExactComplex(self.re - o.re, self.im - o.im)

    def __mul__(self, other: ScalarLike) -> "ExactComplex":
        o = ExactComplex.coerce(other)
        return ExactComplex(self.re * o.re - self.im * o.im,
                            self.re * o.im + self.im * o.re)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self) -> "ExactComplex":
        return ExactComplex(-self.re, -self.im)

    def conjugate(self) -> "ExactComplex":
        return ExactComplex(self.re, -self.im)

    def is_zero(self) -> bool:
        return self.re == 0 and self.im == 0

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def __str__(self) -> str:
        if self.im == 0:
            return str(self.re)
        if self.re == 0:
            return f"{self.im}j"
        sign = "+" if self.im >= 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}j"


_ZERO = ExactComplex()
_ONE = ExactComplex(Fraction(1))


def index_labels(d: int = 1) -> tuple:
    """Ordered index set (-, 1..d, +) used for rows and columns."""
    if d < 1:
        raise InvalidArgumentError("need at least one channel")
    return ("-",) + tuple(range(1, d + 1)) + ("+",)


def minus_index(label):
    """Involution of the index set: '-' <-> '+', channels fixed."""
    if label == "-":
        return "+"
    if label == "+":
        return "-"
    return label


@dataclass(frozen=True)
class ItoMatrix:
    """Exact matrix representative of a quantum Ito differential.

    ``dim = d + 2`` for ``d`` channels; row/column 0 is the '-' index,
    rows/columns 1..d the channels, the last row/column the '+' index.
    Strict block triangularity (zero '+' row, zero '-' column) is enforced
    at construction and is preserved by products and by the Minkowski
    involution, so the class is closed under both.
    """

    dim: int
    entries: tuple

    def __post_init__(self):
        if self.dim < 3:
            raise InvalidArgumentError("ItoMatrix needs dim >= 3 (d >= 1)")
        if len(self.entries) != self.dim or any(len(r) != self.dim for r in self.entries):
            raise InvalidArgumentError("entries must form a dim x dim square")
        if any(not e.is_zero() for e in self.entries[-1]):
            raise InvalidArgumentError("row '+' must vanish (block triangularity)")
        if any(not row[0].is_zero() for row in self.entries):
            raise InvalidArgumentError("column '-' must vanish (block triangularity)")

    @staticmethod
    def zeros(dim: int = 3) -> "ItoMatrix":
        row = (_ZERO,) * dim
        return ItoMatrix(dim, (row,) * dim)

    @staticmethod
    def from_rows(rows: Sequence[Sequence[ScalarLike]]) -> "ItoMatrix":
        dim = len(rows)
        ent = tuple(tuple(ExactComplex.coerce(v) for v in row) for row in rows)
        return ItoMatrix(dim, ent)

    @property
    def d(self) -> int:
        return self.dim - 2

    def labels(self) -> tuple:
        return index_labels(self.d)

    def _pos(self, label) -> int:
        try:
            return self.labels().index(label)
        except ValueError:
            raise InvalidArgumentError(f"unknown index label {label!r}") from None

    def entry(self, iota, kappa) -> ExactComplex:
        """Entry at (row iota, column kappa), labels from the index set."""
        return self.entries[self._pos(iota)][self._pos(kappa)]

    def __add__(self, other: "ItoMatrix") -> "ItoMatrix":
        if self.dim != other.dim:
            raise InvalidArgumentError("dimension mismatch")
        rows = tuple(tuple(a + b for a, b in zip(ra, rb))
                     for ra, rb in zip(self.entries, other.entries))
        return ItoMatrix(self.dim, rows)

    def __sub__(self, other: "ItoMatrix") -> "ItoMatrix":
        return self + (-other)

    def __neg__(self) -> "ItoMatrix":
        return self.scale(ExactComplex(Fraction(-1)))

    def scale(self, c: ScalarLike) -> "ItoMatrix":
        cc = ExactComplex.coerce(c)
        rows = tuple(tuple(cc * v for v in row) for row in self.entries)
        return ItoMatrix(self.dim, rows)

    def __matmul__(self, other: "ItoMatrix") -> "ItoMatrix":
        return mul(self, other)

    def is_zero(self) -> bool:
        return all(v.is_zero() for row in self.entries for v in row)

    def star(self) -> "ItoMatrix":
        return star(self)

    def to_complex(self) -> np.ndarray:
        return np.array([[complex(v) for v in row] for row in self.entries])

    def to_lists(self) -> list:
        """Entries as nested lists of strings, exact and JSON-friendly."""
        return [[str(v) for v in row] for row in self.entries]


def matrix_unit(mu, kappa, d: int = 1) -> ItoMatrix:
    """Representative of dA^kappa_mu: single 1 in row mu, column kappa.

    mu ranges over (-, 1..d), kappa over (1..d, +); anything else would
    break block triangularity and is rejected.
    """
    labels = index_labels(d)
    if mu not in labels[:-1]:
        raise InvalidArgumentError(f"row index {mu!r} must be in {labels[:-1]}")
    if kappa not in labels[1:]:
        raise InvalidArgumentError(f"column index {kappa!r} must be in {labels[1:]}")
    dim = d + 2
    i, j = labels.index(mu), labels.index(kappa)
    rows = [[_ZERO] * dim for _ in range(dim)]
    rows[i][j] = _ONE
    return ItoMatrix(dim, tuple(tuple(r) for r in rows))


BASIS_KINDS = ("time", "wiener", "poisson", "annihilate", "create", "count")


def basis_differential(kind: str, d: int = 1) -> ItoMatrix:
    """One of the six named basis differentials as an exact 3x3 matrix.

    time       dt  = [[0,0,1],[0,0,0],[0,0,0]]
    wiener     dw  = [[0,1,0],[0,0,1],[0,0,0]]
    poisson    dm  = [[0,1,0],[0,1,1],[0,0,0]]
    annihilate d-  = dw dm - dt
    create     d+  = dm dw - dt
    count      dA  = dm - dw
    """
    if d != 1:
        raise InvalidArgumentError("named basis differentials are one-channel (d = 1)")
    if kind == "time":
        return matrix_unit("-", "+")
    if kind == "wiener":
        return matrix_unit("-", 1) + matrix_unit(1, "+")
    if kind == "poisson":
        return matrix_unit("-", 1) + matrix_unit(1, 1) + matrix_unit(1, "+")
    if kind == "annihilate":
        return matrix_unit("-", 1)
    if kind == "create":
        return matrix_unit(1, "+")
    if kind == "count":
        return matrix_unit(1, 1)
    raise InvalidArgumentError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")


def mul(a: ItoMatrix, b: ItoMatrix) -> ItoMatrix:
    """Exact matrix product; realizes the vacuum (HP) product table."""
    if a.dim != b.dim:
        raise InvalidArgumentError("dimension mismatch")
    n = a.dim
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            acc = _ZERO
            for k in range(n):
                if not a.entries[i][k].is_zero() and not b.entries[k][j].is_zero():
                    acc = acc + a.entries[i][k] * b.entries[k][j]
            row.append(acc)
        rows.append(tuple(row))
    return ItoMatrix(n, tuple(rows))


def star(a: ItoMatrix) -> ItoMatrix:
    """Minkowski involution J a^dagger J, with J the (-) <-> (+) exchange.

    An anti-multiplicative involution: star(star(a)) = a and
    star(mul(a, b)) = mul(star(b), star(a)).
    """
    n = a.dim

    def p(i: int) -> int:
        if i == 0:
            return n - 1
        if i == n - 1:
            return 0
        return i

    rows = tuple(tuple(a.entries[p(j)][p(i)].conjugate() for j in range(n))
                 for i in range(n))
    return ItoMatrix(n, rows)


def general_product_coefficient(mu, kappa, iota, nu, d: int = 1) -> int:
    """delta^kappa_iota in dA^kappa_mu dA^nu_iota = delta^kappa_iota dA^nu_mu.

    mu, iota range over (-, 1..d); kappa, nu over (1..d, +).  The delta
    vanishes unless iota = kappa, which under these domain restrictions can
    only happen for matching channel indices (never for iota = '+' or
    kappa = '-', which are outside the admissible ranges).
    """
    labels = index_labels(d)
    rows, cols = labels[:-1], labels[1:]
    if mu not in rows or iota not in rows:
        raise InvalidArgumentError(f"lower indices must be in {rows}")
    if kappa not in cols or nu not in cols:
        raise InvalidArgumentError(f"upper indices must be in {cols}")
    return 1 if kappa == iota else 0


def _coerce_block(value) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(value, dtype=complex))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidArgumentError("coefficient entries must be square operators")
    return arr


def _coefficient_domain(d: int):
    labels = index_labels(d)
    return [(i, k) for i in labels[:-1] for k in labels[1:]]


def _normalize_coefficients(coeff: Mapping, d: int) -> dict:
    domain = _coefficient_domain(d)
    shapes = set()
    out = {}
    for key, value in coeff.items():
        if key not in domain:
            raise InvalidArgumentError(f"coefficient index {key!r} outside (iota, kappa) domain")
        block = _coerce_block(value)
        shapes.add(block.shape)
        out[key] = block
    if len(shapes) > 1:
        raise InvalidArgumentError(f"coefficient blocks have mismatched shapes: {sorted(shapes)}")
    n = shapes.pop()[0] if shapes else 1
    zero = np.zeros((n, n), dtype=complex)
    return {key: out.get(key, zero) for key in domain}


def star_coefficients(beta: Mapping, d: int = 1) -> dict:
    """Quantum Ito involution on a coefficient array:
    beta*^iota_kappa = (beta^{-kappa}_{-iota})^dagger."""
    b = _normalize_coefficients(beta, d)
    return {(i, k): b[(minus_index(k), minus_index(i))].conj().T
            for (i, k) in _coefficient_domain(d)}


def ito_correction(alpha: Mapping, beta: Mapping, d: int = 1) -> dict:
    """Coefficient array of the Ito correction term d(psi) d(phi)^dagger.

    For dpsi = alpha^iota_kappa dA^kappa_iota and dphi = beta^iota_kappa
    dA^kappa_iota the product differential picks up c^iota_kappa dA^kappa_iota
    with

        c^iota_kappa = sum_j alpha^iota_j beta*^j_kappa,

    the sum running over channel indices only.  Returns the full (iota,
    kappa)-indexed dict, zero blocks included.
    """
    a = _normalize_coefficients(alpha, d)
    bs = star_coefficients(beta, d)
    channels = list(range(1, d + 1))
    out = {}
    for (i, k) in _coefficient_domain(d):
        acc = None
        for j in channels:
            term = a[(i, j)] @ bs[(j, k)]
            acc = term if acc is None else acc + term
        out[(i, k)] = acc
    return out


@dataclass(frozen=True)
class EpsilonNoiseIdentity:
    """Both sides of (dy)^2 - dt = epsilon dy for y = A+ + A_- + epsilon A."""

    epsilon: Fraction
    differential: ItoMatrix
    lhs: ItoMatrix
    rhs: ItoMatrix

    @property
    def holds(self) -> bool:
        return self.lhs == self.rhs


def epsilon_noise_square(epsilon) -> EpsilonNoiseIdentity:
    """Verify the epsilon-parametrized standard-noise square identity exactly.

    epsilon = 0 gives the Wiener case (dy)^2 = dt, epsilon = 1 the
    standard-Poisson-type case (dy)^2 = dt + dy.  Exact for any rational
    epsilon >= 0 (floats are converted exactly).
    """
    eps = Fraction(epsilon) if not isinstance(epsilon, Fraction) else epsilon
    if eps < 0:
        raise InvalidArgumentError("epsilon must be nonnegative")
    b = (basis_differential("create") + basis_differential("annihilate")
         + basis_differential("count").scale(eps))
    lhs = mul(b, b) - basis_differential("time")
    rhs = b.scale(eps)
    return EpsilonNoiseIdentity(eps, b, lhs, rhs)


# ---------------------------------------------------------------------------
# Operator-valued boundary and stochastic generators
# ---------------------------------------------------------------------------


def _blocks(array, shape_hint: str) -> np.ndarray:
    arr = np.asarray(array, dtype=complex)
    if shape_hint == "dxd" and arr.ndim == 2:
        # scalar-entried d x d block promoted to 1-dim system operators
        arr = arr[:, :, None, None]
    if shape_hint == "d" and arr.ndim == 1:
        arr = arr[:, None, None]
    return arr


@dataclass(frozen=True)
class BoundaryGenerator:
    """Scattering blocks (G, G_+, G^-, G^-_+) with intensity nu and energy E.

    All blocks are dense complex matrices over a common system dimension n:
    G has shape (d, d, n, n), G_plus and G_minus (d, n, n), G_pm and E
    (n, n).  E must be exactly Hermitian entrywise.
    """

    G: np.ndarray
    G_plus: np.ndarray
    G_minus: np.ndarray
    G_pm: np.ndarray
    nu: float
    E: np.ndarray
    hbar: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "G", _blocks(self.G, "dxd"))
        object.__setattr__(self, "G_plus", _blocks(self.G_plus, "d"))
        object.__setattr__(self, "G_minus", _blocks(self.G_minus, "d"))
        object.__setattr__(self, "G_pm", np.asarray(self.G_pm, dtype=complex))
        object.__setattr__(self, "E", np.asarray(self.E, dtype=complex))
        d, n = self.d, self.n
        if self.nu <= 0:
            raise InvalidArgumentError("nu must be positive")
        if self.hbar <= 0:
            raise InvalidArgumentError("hbar must be positive")
        for name, blk, shape in (("G", self.G, (d, d, n, n)),
                                 ("G_plus", self.G_plus, (d, n, n)),
                                 ("G_minus", self.G_minus, (d, n, n)),
                                 ("G_pm", self.G_pm, (n, n)),
                                 ("E", self.E, (n, n))):
            if blk.shape != shape:
                raise InvalidArgumentError(
                    f"{name} has shape {blk.shape}, expected {shape}")
        if not np.array_equal(self.E, self.E.conj().T):
            raise InvalidArgumentError("E must be exactly Hermitian")

    @property
    def d(self) -> int:
        return self.G.shape[0]

    @property
    def n(self) -> int:
        return self.G.shape[-1]

    def scattering_block(self) -> np.ndarray:
        """G flattened to a (d*n, d*n) matrix, channel-major blocks."""
        d, n = self.d, self.n
        return self.G.transpose(0, 2, 1, 3).reshape(d * n, d * n)


@dataclass(frozen=True)
class StochasticGenerator:
    """Fock-space generator blocks S, S_+, S^-, S^-_+ of a decoherence flow.

    Named aliases follow the standard form of the decoherence wave equation:
    L^j = S^j_+, K = -S^-_+, K_j = -S^-_j.  The mean-square normalization
    residual || K + K^dagger - sum_j L_j^dagger L^j || is zero exactly when
    the flow is an isometry on the vacuum sector.
    """

    S: np.ndarray
    S_plus: np.ndarray
    S_minus: np.ndarray
    S_pm: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", _blocks(self.S, "dxd"))
        object.__setattr__(self, "S_plus", _blocks(self.S_plus, "d"))
        object.__setattr__(self, "S_minus", _blocks(self.S_minus, "d"))
        object.__setattr__(self, "S_pm", np.asarray(self.S_pm, dtype=complex))
        d, n = self.d, self.n
        for name, blk, shape in (("S", self.S, (d, d, n, n)),
                                 ("S_plus", self.S_plus, (d, n, n)),
                                 ("S_minus", self.S_minus, (d, n, n)),
                                 ("S_pm", self.S_pm, (n, n))):
            if blk.shape != shape:
                raise InvalidArgumentError(
                    f"{name} has shape {blk.shape}, expected {shape}")

    @property
    def d(self) -> int:
        return self.S.shape[0]

    @property
    def n(self) -> int:
        return self.S.shape[-1]

    @property
    def L(self) -> np.ndarray:
        """Channel coupling operators L^j = S^j_+, shape (d, n, n)."""
        return self.S_plus

    @property
    def K(self) -> np.ndarray:
        """Damping operator K = -S^-_+."""
        return -self.S_pm

    @property
    def K_channels(self) -> np.ndarray:
        """Annihilation-side operators K_j = -S^-_j, shape (d, n, n)."""
        return -self.S_minus

    def exchange_is_identity(self, tol: float = 0.0) -> bool:
        d, n = self.d, self.n
        eye = np.zeros((d, d, n, n), dtype=complex)
        for i in range(d):
            eye[i, i] = np.eye(n)
        return bool(np.max(np.abs(self.S - eye)) <= tol)

    def normalization_residual(self) -> float:
        """Spectral norm of K + K^dagger - sum_j L_j^dagger L^j."""
        K = self.K
        acc = K + K.conj().T
        for j in range(self.d):
            acc -= self.L[j].conj().T @ self.L[j]
        return float(np.linalg.norm(acc, 2))


class PseudoUnitarityResidual(tuple):
    """Triple (r1, r2, r3) of operator-norm residuals of the boundary
    pseudo-unitarity conditions; all three vanish iff the triangular block
    matrix built from the generator is pseudo-unitary."""

    def __new__(cls, r1: float, r2: float, r3: float):
        return super().__new__(cls, (r1, r2, r3))

    r1 = property(lambda self: self[0])
    r2 = property(lambda self: self[1])
    r3 = property(lambda self: self[2])


def _plus_dag_G(g: BoundaryGenerator) -> np.ndarray:
    """Covector (G_+^dagger G)_k = sum_i G_+^i{}^dagger G^i_k, shape (d, n, n)."""
    return np.einsum("iab,ikbc->kac", g.G_plus.conj().transpose(0, 2, 1), g.G)


def pseudo_unitarity_residual(g: BoundaryGenerator) -> PseudoUnitarityResidual:
    """Residuals of the three boundary unitarity conditions.

    r1 = || G^- + nu G_+^dagger G ||        (stacked over channels)
    r2 = || G^-_+ + (nu/2) G_+^dagger G_+ + (i/hbar) E ||
    r3 = || G^dagger G - I ||               (on the (d n) x (d n) block)

    Norms are spectral norms; channel-indexed blocks are stacked into a
    single block row (r1) before taking the norm.
    """
    d, n = g.d, g.n
    cov = g.G_minus + g.nu * _plus_dag_G(g)
    r1 = float(np.linalg.norm(np.hstack([cov[k] for k in range(d)]), 2))
    quad = np.einsum("iab,ibc->ac", g.G_plus.conj().transpose(0, 2, 1), g.G_plus)
    res2 = g.G_pm + 0.5 * g.nu * quad + (1j / g.hbar) * g.E
    r2 = float(np.linalg.norm(res2, 2))
    blk = g.scattering_block()
    r3 = float(np.linalg.norm(blk.conj().T @ blk - np.eye(d * n), 2))
    return PseudoUnitarityResidual(r1, r2, r3)


def sign_convention_residuals(g: BoundaryGenerator) -> dict:
    """Report r1 under both sign conventions for the G^- block.

    The unitarity condition fixes G^- = -nu G_+^dagger G; the opposite
    convention G^- = +nu G_+^dagger G also circulates.  Both residuals are
    reported so that no sign guess is baked into a default.
    """
    d = g.d
    pg = _plus_dag_G(g)
    minus_conv = g.G_minus + g.nu * pg
    plus_conv = g.G_minus - g.nu * pg
    return {
        "r1_condition_sign": float(np.linalg.norm(np.hstack(list(minus_conv)), 2)),
        "r1_opposite_sign": float(np.linalg.norm(np.hstack(list(plus_conv)), 2)),
    }


def g_to_s(g: BoundaryGenerator, phi: Iterable[complex]) -> StochasticGenerator:
    """Map boundary blocks to Fock-space generator blocks.

    With phi a unit vector of probe amplitudes and phi_k = nu conj(phi^k):

        S^i_+ = nu^{1/2} (G^i_+ + G^i_k phi^k - phi^i)
        S^-_k = nu^{-1/2} (G^-_k + phi_i G^i_k - phi_k)
        S^-_+ = G^-_+ + phi_i G^i_+ + G^-_k phi^k
                      + phi_i (G^i_k - delta^i_k I) phi^k
        S^i_k = G^i_k

    A phi of all zeros is accepted as the documented "displacement off"
    special case; any other non-unit phi is rejected.
    """
    phi = np.asarray(list(phi), dtype=complex)
    d, n = g.d, g.n
    if phi.shape != (d,):
        raise InvalidArgumentError(f"phi must have {d} components")
    norm = float(np.linalg.norm(phi))
    if norm != 0.0 and abs(norm - 1.0) > 1e-12:
        raise InvalidArgumentError(f"phi must be a unit vector (or zero); got norm {norm}")
    phi_lower = g.nu * phi.conj()
    nu = g.nu
    eye = np.eye(n)

    g_phi = np.einsum("ikab,k->iab", g.G, phi)               # (G phi)^i
    s_plus = np.sqrt(nu) * (g.G_plus + g_phi - phi[:, None, None] * eye)

    phi_g = np.einsum("i,ikab->kab", phi_lower, g.G)         # (phi G)_k
    s_minus = (g.G_minus + phi_g - phi_lower[:, None, None] * eye) / np.sqrt(nu)

    s_pm = (g.G_pm
            + np.einsum("i,iab->ab", phi_lower, g.G_plus)
            + np.einsum("kab,k->ab", g.G_minus, phi)
            + np.einsum("i,ikab,k->ab", phi_lower, g.G, phi)
            - (phi_lower @ phi) * eye)
    return StochasticGenerator(S=g.G, S_plus=s_plus, S_minus=s_minus, S_pm=s_pm)


def random_pseudo_unitary_generator(rng: np.random.Generator, n: int = 4,
                                    d: int = 1, nu: float = 2.0,
                                    hbar: float = 1.0,
                                    kind: str = "diffusive") -> BoundaryGenerator:
    """Random generator satisfying the pseudo-unitarity conditions by
    construction.

    kind = "diffusive": G = I, random G_+, with G^- = -nu G_+^dagger G and
    G^-_+ = -(nu/2) G_+^dagger G_+ - (i/hbar) E for a random Hermitian E.
    kind = "jump": random unitary G, G_+ = 0 = G^-, G^-_+ = -(i/hbar) E.
    """
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    E = a + a.conj().T
    E = 0.5 * (E + E.conj().T)  # exact Hermiticity after rounding
    if kind == "diffusive":
        G = np.zeros((d, d, n, n), dtype=complex)
        for i in range(d):
            G[i, i] = np.eye(n)
        G_plus = rng.normal(size=(d, n, n)) + 1j * rng.normal(size=(d, n, n))
    elif kind == "jump":
        q, _ = np.linalg.qr(rng.normal(size=(d * n, d * n))
                            + 1j * rng.normal(size=(d * n, d * n)))
        G = q.reshape(d, n, d, n).transpose(0, 2, 1, 3)
        G_plus = np.zeros((d, n, n), dtype=complex)
    else:
        raise InvalidArgumentError(f"unknown kind {kind!r}")
    gdagg = np.einsum("iab,ikbc->kac", G_plus.conj().transpose(0, 2, 1), G)
    G_minus = -nu * gdagg
    quad = np.einsum("iab,ibc->ac", G_plus.conj().transpose(0, 2, 1), G_plus)
    G_pm = -0.5 * nu * quad - (1j / hbar) * E
    return BoundaryGenerator(G=G, G_plus=G_plus, G_minus=G_minus, G_pm=G_pm,
                             nu=nu, E=E, hbar=hbar)


# ---------------------------------------------------------------------------
# Product-table report
# ---------------------------------------------------------------------------


def product_table() -> dict:
    """All 36 ordered products of the six basis differentials, exact."""
    basis = {kind: basis_differential(kind) for kind in BASIS_KINDS}
    return {(a, b): mul(basis[a], basis[b])
            for a in BASIS_KINDS for b in BASIS_KINDS}


def _basis_name(m: ItoMatrix) -> str:
    if m.is_zero():
        return "0"
    for kind in BASIS_KINDS:
        if m == basis_differential(kind):
            return kind
    return "?"


def product_table_report() -> dict:
    """JSON-ready report: basis matrices, products, and identity checks."""
    basis = {kind: basis_differential(kind) for kind in BASIS_KINDS}
    table = product_table()
    dw, dm, dt = basis["wiener"], basis["poisson"], basis["time"]
    identities = {
        "annihilate = wiener*poisson - time": mul(dw, dm) - dt == basis["annihilate"],
        "create = poisson*wiener - time": mul(dm, dw) - dt == basis["create"],
        "count = poisson - wiener": dm - dw == basis["count"],
        "annihilate*create = time": table[("annihilate", "create")] == dt,
        "annihilate*count = annihilate": table[("annihilate", "count")] == basis["annihilate"],
        "count*create = create": table[("count", "create")] == basis["create"],
        "count*count = count": table[("count", "count")] == basis["count"],
        "wiener*wiener = time": table[("wiener", "wiener")] == dt,
        "time*time = 0": table[("time", "time")].is_zero(),
    }
    epsilon_cases = {}
    for eps in (Fraction(0), Fraction(1, 2), Fraction(1), Fraction(2)):
        check = epsilon_noise_square(eps)
        epsilon_cases[str(eps)] = check.holds
    return {
        "basis": {kind: basis[kind].to_lists() for kind in BASIS_KINDS},
        "products": {f"{a} * {b}": m.to_lists() for (a, b), m in table.items()},
        "product_names": {f"{a} * {b}": _basis_name(m) for (a, b), m in table.items()},
        "identities": identities,
        "epsilon_square_identity": epsilon_cases,
    }


def format_product_table() -> str:
    """Aligned text rendering of the 6 x 6 product table."""
    table = product_table()
    names = [[_basis_name(table[(a, b)]) for b in BASIS_KINDS] for a in BASIS_KINDS]
    width = max(len(k) for k in BASIS_KINDS + ("0",))
    header = " " * (width + 2) + "  ".join(k.rjust(width) for k in BASIS_KINDS)
    lines = [header]
    for a, row in zip(BASIS_KINDS, names):
        lines.append(a.rjust(width) + " |" + "  ".join(v.rjust(width) for v in row))
    return "\n".join(lines)


def product_table_json() -> str:
    return json.dumps(product_table_report(), indent=2)
