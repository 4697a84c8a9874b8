"""Exactness tests for the quantum Ito matrix algebra."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventum.algebra import (
    BASIS_KINDS,
    BoundaryGenerator,
    ExactComplex,
    ItoMatrix,
    basis_differential,
    epsilon_noise_square,
    format_product_table,
    g_to_s,
    general_product_coefficient,
    index_labels,
    ito_correction,
    matrix_unit,
    minus_index,
    mul,
    product_table_report,
    pseudo_unitarity_residual,
    random_pseudo_unitary_generator,
    sign_convention_residuals,
    star,
    star_coefficients,
)
from eventum.errors import InvalidArgumentError


def as_int_rows(m):
    return [[complex(v) for v in row] for row in m.entries]


# ---------------------------------------------------------------------------
# Basis matrices and displayed forms
# ---------------------------------------------------------------------------


def test_basis_matrices_match_displayed_forms():
    expected = {
        "time": [[0, 0, 1], [0, 0, 0], [0, 0, 0]],
        "wiener": [[0, 1, 0], [0, 0, 1], [0, 0, 0]],
        "poisson": [[0, 1, 0], [0, 1, 1], [0, 0, 0]],
        "annihilate": [[0, 1, 0], [0, 0, 0], [0, 0, 0]],
        "create": [[0, 0, 0], [0, 0, 1], [0, 0, 0]],
        "count": [[0, 0, 0], [0, 1, 0], [0, 0, 0]],
    }
    for kind, rows in expected.items():
        assert basis_differential(kind) == ItoMatrix.from_rows(rows)


def test_unknown_kind_rejected():
    with pytest.raises(InvalidArgumentError):
        basis_differential("brownian")
    with pytest.raises(InvalidArgumentError):
        basis_differential("wiener", d=2)


def test_algebraic_combinations_exact():
    dt = basis_differential("time")
    dw = basis_differential("wiener")
    dm = basis_differential("poisson")
    assert mul(dw, dm) - dt == basis_differential("annihilate")
    assert mul(dm, dw) - dt == basis_differential("create")
    assert dm - dw == basis_differential("count")


def test_wiener_poisson_noncommutative_displayed():
    dw = basis_differential("wiener")
    dm = basis_differential("poisson")
    assert mul(dw, dm) == ItoMatrix.from_rows([[0, 1, 1], [0, 0, 0], [0, 0, 0]])
    assert mul(dm, dw) == ItoMatrix.from_rows([[0, 0, 1], [0, 0, 1], [0, 0, 0]])
    assert mul(dw, dm) != mul(dm, dw)


def hp_expected_product(a, b):
    """Independent oracle: expand into matrix units and apply the delta rule."""
    def units(m):
        out = []
        labels = m.labels()
        for i, mu in enumerate(labels):
            for j, kappa in enumerate(labels):
                v = m.entries[i][j]
                if not v.is_zero():
                    out.append((mu, kappa, v))
        return out

    acc = ItoMatrix.zeros(a.dim)
    for (mu, kappa, va) in units(a):
        for (iota, nu, vb) in units(b):
            if general_product_coefficient(mu, kappa, iota, nu, d=a.d):
                acc = acc + matrix_unit(mu, nu, d=a.d).scale(va * vb)
    return acc


def test_all_36_products_match_delta_rule_oracle():
    for ka in BASIS_KINDS:
        for kb in BASIS_KINDS:
            a, b = basis_differential(ka), basis_differential(kb)
            assert mul(a, b) == hp_expected_product(a, b), (ka, kb)


def test_hp_table_entries():
    dt = basis_differential("time")
    dmin = basis_differential("annihilate")
    dplus = basis_differential("create")
    dA = basis_differential("count")
    assert mul(dmin, dplus) == dt
    assert mul(dmin, dA) == dmin
    assert mul(dA, dplus) == dplus
    assert mul(dA, dA) == dA
    # every other ordered basis pair among {time, annihilate, create, count}
    # multiplies to zero
    four = {"time": dt, "annihilate": dmin, "create": dplus, "count": dA}
    nonzero = {("annihilate", "create"), ("annihilate", "count"),
               ("count", "create"), ("count", "count")}
    for ka, a in four.items():
        for kb, b in four.items():
            if (ka, kb) not in nonzero:
                assert mul(a, b).is_zero(), (ka, kb)


def test_wiener_square_and_dt_nilpotence():
    dt = basis_differential("time")
    dw = basis_differential("wiener")
    assert mul(dw, dw) == dt
    assert mul(dt, dt).is_zero()


def test_mul_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        mul(ItoMatrix.zeros(3), ItoMatrix.zeros(4))


def test_block_triangularity_enforced():
    with pytest.raises(InvalidArgumentError):
        ItoMatrix.from_rows([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(InvalidArgumentError):
        ItoMatrix.from_rows([[0, 0, 0], [1, 0, 0], [0, 0, 0]])


# ---------------------------------------------------------------------------
# Minkowski involution
# ---------------------------------------------------------------------------


def test_star_on_basis():
    assert star(basis_differential("wiener")) == basis_differential("wiener")
    assert star(basis_differential("time")) == basis_differential("time")
    assert star(basis_differential("poisson")) == basis_differential("poisson")
    assert star(basis_differential("annihilate")) == basis_differential("create")
    assert star(basis_differential("create")) == basis_differential("annihilate")
    assert star(basis_differential("count")) == basis_differential("count")


def random_exact_matrix(rng, d=1):
    labels = index_labels(d)
    dim = d + 2
    m = ItoMatrix.zeros(dim)
    for mu in labels[:-1]:
        for kappa in labels[1:]:
            re = Fraction(int(rng.integers(-6, 7)), int(rng.integers(1, 5)))
            im = Fraction(int(rng.integers(-6, 7)), int(rng.integers(1, 5)))
            m = m + matrix_unit(mu, kappa, d=d).scale(ExactComplex(re, im))
    return m


def test_star_is_antimultiplicative_involution_random():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        d = 1 if trial % 3 else 2
        a = random_exact_matrix(rng, d)
        b = random_exact_matrix(rng, d)
        assert star(star(a)) == a
        assert star(mul(a, b)) == mul(star(b), star(a))


rationals = st.fractions(min_value=-10, max_value=10, max_denominator=12)


@st.composite
def ito_matrices(draw, d=1):
    m = ItoMatrix.zeros(d + 2)
    labels = index_labels(d)
    for mu in labels[:-1]:
        for kappa in labels[1:]:
            value = ExactComplex(draw(rationals), draw(rationals))
            m = m + matrix_unit(mu, kappa, d=d).scale(value)
    return m


@given(ito_matrices(), ito_matrices())
@settings(max_examples=200, deadline=None)
def test_star_properties_hypothesis(a, b):
    assert star(star(a)) == a
    assert star(mul(a, b)) == mul(star(b), star(a))
    assert star(a + b) == star(a) + star(b)


@given(st.fractions(min_value=0, max_value=50, max_denominator=40))
@settings(max_examples=200, deadline=None)
def test_epsilon_identity_hypothesis(eps):
    assert epsilon_noise_square(eps).holds


# ---------------------------------------------------------------------------
# General product coefficient
# ---------------------------------------------------------------------------


def test_general_product_coefficient_examples():
    assert general_product_coefficient("-", "+", "-", "+") == 0
    assert general_product_coefficient("-", 1, 1, "+") == 1
    assert general_product_coefficient(1, 1, 1, 1) == 1


def test_general_product_coefficient_domain_errors():
    with pytest.raises(InvalidArgumentError):
        general_product_coefficient("+", 1, 1, 1)
    with pytest.raises(InvalidArgumentError):
        general_product_coefficient("-", "-", 1, 1)
    with pytest.raises(InvalidArgumentError):
        general_product_coefficient("-", 3, 1, 1, d=2)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_delta_rule_agrees_with_matrix_units_brute_force(d):
    labels = index_labels(d)
    rows, cols = labels[:-1], labels[1:]
    for mu in rows:
        for kappa in cols:
            for iota in rows:
                for nu in cols:
                    prod = mul(matrix_unit(mu, kappa, d), matrix_unit(iota, nu, d))
                    coeff = general_product_coefficient(mu, kappa, iota, nu, d)
                    expected = matrix_unit(mu, nu, d).scale(coeff) if coeff \
                        else ItoMatrix.zeros(d + 2)
                    assert prod == expected


# ---------------------------------------------------------------------------
# Ito correction of operator-valued differentials
# ---------------------------------------------------------------------------


def test_ito_correction_pure_dt_term_is_zero():
    alpha = {("-", "+"): np.array([[2.0 + 1.0j]])}
    out = ito_correction(alpha, alpha)
    assert all(np.allclose(v, 0) for v in out.values())


def test_ito_correction_wiener_squared_gives_dt():
    wiener = {("-", 1): 1.0, (1, "+"): 1.0}
    out = ito_correction(wiener, wiener)
    assert np.allclose(out[("-", "+")], 1.0)
    for key, value in out.items():
        if key != ("-", "+"):
            assert np.allclose(value, 0.0), key


def test_ito_correction_creation_only_vanishes():
    L = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    alpha = {(1, "+"): L}
    out = ito_correction(alpha, alpha)
    assert all(np.allclose(v, 0) for v in out.values())


def test_star_coefficients_is_involution():
    rng = np.random.default_rng(3)
    d, n = 2, 3
    labels = index_labels(d)
    alpha = {(i, k): rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
             for i in labels[:-1] for k in labels[1:]}
    twice = star_coefficients(star_coefficients(alpha, d), d)
    for key in alpha:
        assert np.allclose(twice[key], alpha[key])


def test_ito_correction_shape_mismatch_rejected():
    with pytest.raises(InvalidArgumentError):
        ito_correction({("-", 1): np.eye(2), (1, "+"): np.eye(3)}, {})


def test_minus_index_involution():
    for label in ("-", "+", 1, 2):
        assert minus_index(minus_index(label)) == label


# ---------------------------------------------------------------------------
# Epsilon-parametrized noises
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("eps", [0, Fraction(1, 2), 1, 2, Fraction(7, 3)])
def test_epsilon_noise_square_identity_exact(eps):
    check = epsilon_noise_square(eps)
    assert check.holds
    assert check.lhs == check.rhs


def test_epsilon_zero_is_wiener_case():
    check = epsilon_noise_square(0)
    assert check.lhs.is_zero()
    assert check.differential == basis_differential("wiener")


def test_epsilon_one_is_poisson_type_case():
    check = epsilon_noise_square(1)
    # (dy)^2 = dt + dy with y the compensated standard Poisson noise
    assert check.differential == basis_differential("poisson")
    assert mul(check.differential, check.differential) == \
        basis_differential("time") + check.differential


def test_epsilon_negative_rejected():
    with pytest.raises(InvalidArgumentError):
        epsilon_noise_square(-1)


# ---------------------------------------------------------------------------
# Pseudo-unitarity and the G -> S transformation
# ---------------------------------------------------------------------------


def jump_generator(G, E, nu=1.0, hbar=1.0):
    n = G.shape[-1]
    zero = np.zeros((1, n, n), dtype=complex)
    return BoundaryGenerator(G=G[None, None], G_plus=zero, G_minus=zero,
                             G_pm=-(1j / hbar) * E, nu=nu, E=E, hbar=hbar)


def test_jump_generator_is_pseudo_unitary():
    rng = np.random.default_rng(0)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    E = a + a.conj().T
    E = 0.5 * (E + E.conj().T)
    res = pseudo_unitarity_residual(jump_generator(q, E, nu=3.0))
    assert max(res) < 1e-12


def test_scalar_system_pseudo_unitary_example():
    # n = 1, d = 1: nu = 4, G = 1, G_+ = g, G^- = -4 conj(g), and
    # G^-_+ = -2|g|^2 - i E / hbar solve the conditions exactly.
    g = 0.3 - 0.7j
    E = np.array([[1.25]])
    gen = BoundaryGenerator(
        G=np.array([[1.0]]), G_plus=np.array([g]),
        G_minus=np.array([-4.0 * np.conj(g)]),
        G_pm=np.array([[-2.0 * abs(g) ** 2 - 1j * 1.25]]),
        nu=4.0, E=E, hbar=1.0)
    res = pseudo_unitarity_residual(gen)
    assert max(res) < 1e-14


def test_non_unitary_scattering_flagged():
    n = 3
    zero = np.zeros((1, n, n), dtype=complex)
    gen = BoundaryGenerator(G=2.0 * np.eye(n)[None, None], G_plus=zero,
                            G_minus=zero, G_pm=np.zeros((n, n)),
                            nu=1.0, E=np.zeros((n, n)))
    res = pseudo_unitarity_residual(gen)
    assert res.r3 == pytest.approx(3.0, abs=1e-12)


def test_sign_convention_report_both_residuals():
    rng = np.random.default_rng(5)
    gen = random_pseudo_unitary_generator(rng, n=3, kind="diffusive")
    both = sign_convention_residuals(gen)
    assert both["r1_condition_sign"] < 1e-12
    assert both["r1_opposite_sign"] > 1.0e-2


def test_g_to_s_identity_scattering_scalings():
    rng = np.random.default_rng(11)
    gen = random_pseudo_unitary_generator(rng, n=3, nu=2.5, kind="diffusive")
    phi = np.array([np.exp(0.4j)])
    s = g_to_s(gen, phi)
    assert np.allclose(s.S_plus, np.sqrt(gen.nu) * gen.G_plus)
    assert np.allclose(s.S_minus, gen.G_minus / np.sqrt(gen.nu))


def test_g_to_s_zero_phi_disables_displacement():
    rng = np.random.default_rng(12)
    n = 3
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    E = a + a.conj().T
    E = 0.5 * (E + E.conj().T)
    gen = jump_generator(np.eye(n), E, nu=2.0)
    s = g_to_s(gen, np.zeros(1))
    assert np.allclose(s.S_plus, 0)
    assert np.allclose(s.S_minus, 0)
    assert np.allclose(s.S_pm, gen.G_pm)


def test_g_to_s_jump_model_limit_form():
    # G_+ = 0 = G^-: S^i_+ = nu^{1/2} (G - I)^i_k phi^k
    rng = np.random.default_rng(13)
    n = 4
    q, _ = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    E = np.zeros((n, n))
    nu = 9.0
    gen = jump_generator(q, E, nu=nu)
    phi = np.array([1j])
    s = g_to_s(gen, phi)
    assert np.allclose(s.S_plus[0], np.sqrt(nu) * (q - np.eye(n)) * phi[0])


def test_g_to_s_rejects_non_unit_phi():
    rng = np.random.default_rng(14)
    gen = random_pseudo_unitary_generator(rng, n=2)
    with pytest.raises(InvalidArgumentError):
        g_to_s(gen, np.array([0.5]))


@pytest.mark.parametrize("kind", ["diffusive", "jump"])
def test_pseudo_unitarity_implies_normalization(kind):
    rng = np.random.default_rng(21)
    for _ in range(25):
        gen = random_pseudo_unitary_generator(
            rng, n=int(rng.integers(2, 6)), nu=float(rng.uniform(0.5, 5.0)),
            kind=kind)
        assert max(pseudo_unitarity_residual(gen)) < 1e-10
        phi = rng.normal(size=1) + 1j * rng.normal(size=1)
        phi /= np.linalg.norm(phi)
        s = g_to_s(gen, phi)
        assert s.normalization_residual() < 1e-10


def test_hermiticity_of_E_enforced():
    n = 2
    zero = np.zeros((1, n, n), dtype=complex)
    E_bad = np.array([[0.0, 1.0], [0.0, 0.0]])
    with pytest.raises(InvalidArgumentError):
        BoundaryGenerator(G=np.eye(n)[None, None], G_plus=zero, G_minus=zero,
                          G_pm=np.zeros((n, n)), nu=1.0, E=E_bad)


# ---------------------------------------------------------------------------
# Report surfaces
# ---------------------------------------------------------------------------


def test_product_table_report_all_identities_pass():
    report = product_table_report()
    assert all(report["identities"].values())
    assert all(report["epsilon_square_identity"].values())
    assert report["product_names"]["wiener * wiener"] == "time"
    assert report["product_names"]["annihilate * create"] == "time"


def test_format_product_table_is_aligned_text():
    text = format_product_table()
    lines = text.splitlines()
    assert len(lines) == 7
    assert "wiener" in lines[0]
