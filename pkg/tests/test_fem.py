import math

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from spdelab import fem
from spdelab.dynamics import FEMBackend
from spdelab.errors import PreconditionError
from spdelab.noise import NoiseModel
from spdelab.rates import fit_rate
from spdelab.spectral import dirichlet_eigenvalues


def test_assemble_single_node():
    ops = fem.assemble(1)
    assert ops.h == 0.5
    assert ops.mass[0, 0] == pytest.approx(1 / 3)
    assert ops.stiffness[0, 0] == pytest.approx(4.0)
    assert ops.eigenvalues[0] == pytest.approx(12.0)


def test_three_node_first_eigenvalue():
    mu1 = fem.assemble(3).eigenvalues[0]
    assert mu1 == pytest.approx(96 * (1 - math.cos(math.pi / 4)) / (2 + math.cos(math.pi / 4)), rel=1e-12)
    assert mu1 == pytest.approx(10.3866, abs=1e-4)
    assert mu1 > math.pi**2


def test_matrix_patterns():
    ops = fem.assemble(6)
    h = ops.h
    assert np.allclose(ops.mass[2, 1:4], h / 6 * np.array([1, 4, 1]))
    assert np.allclose(ops.stiffness[2, 1:4], np.array([-1, 2, -1]) / h)
    rows = ops.stiffness.sum(axis=1)
    assert np.allclose(rows[1:-1], 0.0, atol=1e-12)
    assert rows[0] == pytest.approx(1 / h) and rows[-1] == pytest.approx(1 / h)
    c = np.random.default_rng(0).normal(size=(3, 6))
    assert np.allclose(ops.mass_apply(c), c @ ops.mass.T)


@pytest.mark.parametrize("M", [1, 2, 7, 31, 100])
def test_eigenpairs_closed_form(M):
    ops = fem.assemble(M)
    mu = fem.discrete_eigenvalues(M)
    assert np.allclose(ops.eigenvalues, mu, rtol=1e-10)
    assert np.all(np.diff(mu) > 0) and np.all(mu > 0)
    V = fem.discrete_eigenvectors(M)
    assert np.allclose(V.T @ ops.mass @ V, np.eye(M), atol=1e-10)
    assert np.allclose(ops.stiffness @ V, ops.mass @ V * mu, atol=1e-8 * mu.max())
    Vs = ops.eigenvectors
    assert np.allclose(Vs.T @ ops.mass @ Vs, np.eye(M), atol=1e-10)


def test_discrete_eigenvalues_converge():
    errs = [abs(fem.discrete_eigenvalues(M)[1] - 4 * math.pi**2) for M in (15, 31, 63, 127)]
    assert np.all(np.diff(errs) < 0)
    assert fit_rate([1 / 16, 1 / 32, 1 / 64, 1 / 128], errs).slope == pytest.approx(2.0, abs=0.05)


def test_cross_gram_matches_quadrature():
    J, M = 12, 5
    G = fem.cross_gram(J, M)
    h = 1 / (M + 1)
    for j in (1, 4, 12):
        for i in (1, 3, 5):
            hat = lambda x: max(0.0, 1 - abs(x - i * h) / h)  # noqa: E731
            f = lambda x: math.sqrt(2) * math.sin(j * math.pi * x) * hat(x)  # noqa: E731
            val = quad(f, (i - 1) * h, (i + 1) * h, points=[i * h], epsabs=1e-14, epsrel=1e-13)[0]
            assert G[j - 1, i - 1] == pytest.approx(val, abs=1e-10)


def test_projection_properties():
    M, J = 15, 40
    ops, G = fem.assemble(M), fem.cross_gram(J, M)
    rng = np.random.default_rng(1)
    x = rng.normal(size=J) / np.arange(1, J + 1)
    c = fem.project(ops, G, x)
    # P_h x is no longer than x
    assert ops.norm(c) <= np.linalg.norm(x)
    # idempotence: re-project the V_h function through a long sine expansion
    Jf = 4000
    Gf = fem.cross_gram(Jf, M)
    sine = Gf @ c  # sine coefficients of the P1 function
    c2 = fem.project(ops, Gf, sine)
    assert np.allclose(c2, c, atol=1e-9)
    with pytest.raises(PreconditionError):
        fem.project(ops, fem.cross_gram(J + 1, M), x)


def test_projection_exact_on_vh():
    # the Galerkin equations are solved exactly when the right-hand side is mass @ c
    ops = fem.assemble(9)
    c = np.random.default_rng(2).normal(size=9)
    rhs = ops.mass @ c
    got = sla.solve_banded((1, 1), ops.banded(0.0), rhs)
    assert np.allclose(got, c, atol=1e-12)


def test_projection_error_rate():
    hs, errs = [], []
    for M in (15, 31, 63, 127):
        ops = fem.assemble(M)
        c = fem.project(ops, fem.cross_gram(1, M), np.array([1.0]))
        errs.append(math.sqrt(1.0 - ops.norm(c) ** 2))
        hs.append(ops.h)
    assert 1.9 <= fit_rate(hs, errs).slope <= 2.1


def test_step_apply():
    M = 11
    ops = fem.assemble(M)
    c = np.random.default_rng(3).normal(size=M)
    tiny = fem.step_apply(ops, 1e-12, c)
    assert np.max(np.abs(tiny - c)) / np.max(np.abs(c)) < 1e-6
    V, mu = fem.discrete_eigenvectors(M), fem.discrete_eigenvalues(M)
    k = 0.01
    for j in (0, 5, 10):
        assert np.allclose(fem.step_apply(ops, k, V[:, j]), V[:, j] / (1 + k * mu[j]), atol=1e-12)
    assert ops.norm(fem.step_apply(ops, k, c)) <= ops.norm(c)
    with pytest.raises(PreconditionError):
        fem.step_apply(ops, 0.0, c)


def test_opnorm_examples():
    M, k = 15, 1 / 32
    ops = fem.assemble(M)
    mu = fem.discrete_eigenvalues(M)
    assert fem.opnorm_L(np.eye(M), ops) == pytest.approx(1.0, rel=1e-12)
    S = fem.step_matrix(ops, k)
    assert fem.opnorm_L(S, ops) == pytest.approx(1 / (1 + k * mu[0]), rel=1e-10)
    AS = ops.frac_power(0.5) @ S
    assert fem.opnorm_L(AS, ops) == pytest.approx(np.max(np.sqrt(mu) / (1 + k * mu)), rel=1e-10)
    for n in (1, 4, 17):
        # solve path (repeated tridiagonal solves) against the spectral mapping
        assert fem.opnorm_L(fem.step_matrix(ops, k, n), ops) == pytest.approx(
            (1 + k * mu[0]) ** -n, rel=1e-10)


def test_hs_norm_examples():
    assert fem.hs_norm_q(np.zeros((3, 8)), NoiseModel(0.0, 8)) == 0.0
    J = 2000
    lam = dirichlet_eigenvalues(J)
    with pytest.warns(RuntimeWarning):
        v = fem.hs_norm_q(np.diag(lam**-0.5), NoiseModel(0.0, J))
    assert v == pytest.approx(1 / math.sqrt(6), abs=1e-4)
    # ||S^n P_h Q^(1/2)|| decreases in n
    M, L, k = 15, 64, 1 / 16
    be = FEMBackend(M, L)
    P = be.embed(np.eye(L)).T
    S = fem.step_matrix(be.ops, k)
    vals = []
    V = P
    for n in range(6):
        V = S @ V
        vals.append(fem.hs_norm_q(V, NoiseModel(1.0, L), be.ops, warn=False))
    assert np.all(np.diff(vals) < 0)


def test_alias_moment_matches_explicit_sum():
    M = 7
    Z = fem.cross_gram(20000, M) @ fem.discrete_eigenvectors(M)
    i = np.arange(1, 20001.0)[:, None]
    for p in (0.0, 0.8, 2.0):
        explicit = np.sum(i**-p * Z**2, axis=0)
        assert np.allclose(fem.alias_moment(M, p), explicit, rtol=1e-9)
    assert np.allclose(fem.noise_gram_diag(M, 0.0), 1.0, atol=1e-12)  # Parseval on V_h


def test_compat_norm():
    for M in (3, 15, 63):
        exact = fem.compat_norm(M, 0.5)
        assert exact <= 1 + 1e-8
        assert fem.compat_norm(M, 0.5, J=8 * M) <= exact + 1e-10
        assert fem.compat_norm(M, 0.5, J=16 * M) == pytest.approx(exact, rel=2e-2)
    with pytest.raises(PreconditionError):
        fem.compat_norm(7, 0.7)


def _explicit_error_norm(M, k, n, rho, J, Jout=6000):
    """||(S(nk) - S_h^n P_h) A^(rho/2)|| on J input modes, image in Jout sine modes."""
    ops = fem.assemble(M)
    lam = dirichlet_eigenvalues(Jout)
    P = np.linalg.solve(ops.mass, fem.cross_gram(J, M).T)
    img = fem.cross_gram(Jout, M) @ fem.step_matrix(ops, k, n) @ P
    E = -img
    E[np.arange(J), np.arange(J)] += np.exp(-lam[:J] * n * k)
    return np.linalg.norm(E * lam[:J] ** (rho / 2), 2)


@pytest.mark.parametrize("M,k,n,rho", [(7, 1 / 16, 4, 0.0), (7, 1 / 8, 1, 1.0), (15, 1 / 32, 8, -1.0)])
def test_error_opnorm_against_explicit_matrices(M, k, n, rho):
    J = 4 * M
    assert fem.error_opnorm(M, k, n, rho, J) == pytest.approx(
        _explicit_error_norm(M, k, n, rho, J), rel=1e-6)


def test_assumption_probe_trivial_case():
    rep = fem.assumption_probe(0.0, 0.0, [1 / 8, 1 / 16, 1 / 32], [1 / 8, 1 / 32, 1 / 64])
    assert rep.max_ratio <= 2.0
    assert set(rep.columns) <= set(rep.rows[0])


def test_assumption_probe_theta2_bounded_and_sharp():
    hs = [1 / 16, 1 / 32, 1 / 64, 1 / 128]
    ks = [2.0**-e for e in range(4, 9)]
    cells = np.array(list(fem._cell_max(fem.assumption_probe(2.0, 0.0, hs, ks).rows).values()))
    # uniformly bounded, and the bound is attained up to a constant on every cell
    assert cells.max() < 0.3 and cells.min() > 0.1
    # at the final time alone the error sits well below the singular bound
    final = fem.assumption_probe(2.0, 0.0, hs, ks, n_grid="final")
    assert final.max_ratio < 0.01
    # at n = N the max ratio over the k-grid is stable under mesh refinement
    c = fem._cell_max(final.rows)
    per_h = np.array([max(v for (h, _), v in c.items() if h == hh) for hh in hs])
    assert (per_h.max() - per_h.min()) / per_h.max() < 0.2


def test_assumption_probe_range_checked():
    with pytest.raises(PreconditionError, match="rho"):
        fem.assumption_probe(1.0, 1.5, [1 / 8], [1 / 8])
    with pytest.raises(PreconditionError, match="theta"):
        fem.assumption_probe(2.5, 0.0, [1 / 8], [1 / 8])


def test_negnorm_probe_consistency_and_bounds():
    t = 0.5
    nums = []
    for M, k in [(7, 1 / 16), (15, 1 / 64), (31, 1 / 256)]:
        rep = fem.negnorm_probe(0.4, 0.5, [1 / (M + 1)], [k], t_grid=[t])
        nums.append(rep.rows[0]["norm"])
    assert np.all(np.diff(nums) < 0) and nums[-1] < 0.2 * nums[0]
    rep = fem.negnorm_probe(0.4, 0.5, [1 / 16, 1 / 32, 1 / 64, 1 / 128], [1 / 64, 1 / 256, 1 / 1024])
    assert math.isfinite(rep.max_ratio)
    assert rep.max_path_growth <= 0.05
    with pytest.raises(PreconditionError):
        fem.negnorm_probe(0.5, 0.5, [1 / 8], [1 / 8])


@settings(max_examples=20, deadline=None)
@given(rho=st.floats(0.0, 1.0))
def test_analytic_probe_bounded(rho):
    rep = fem.analytic_probe(rho, [1 / 8, 1 / 32, 1 / 128], [1 / 16, 1 / 64])
    # n^rho x^rho (1 + x)^-n <= (nx)^rho / (1 + nx) <= 1 for rho <= 1
    assert rep.max_ratio <= 1.0 + 1e-12


def test_analytic_probe_rejects_rho_above_one():
    # with rho > 1 the first step already blows up like (k mu_max)^(rho - 1)
    with pytest.raises(PreconditionError):
        fem.analytic_probe(1.5, [1 / 8], [1 / 16])
