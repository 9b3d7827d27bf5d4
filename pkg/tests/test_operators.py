from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import UNIT, discretized, grids
from fibermercer import (
    DiscreteKernel,
    Factor,
    KernelSpec,
    ModuleElement,
    PIOKernels,
    adjoint_embed,
    apply_partial_integral,
    apply_T,
    discretize,
    equivalence_report,
    gauss_legendre,
    injectivity_diagnostic,
    l2inf_norm,
    module_inner_product,
    parameter_grid,
    rkhs_inner_product,
    self_adjointness_defect,
    spectral_field,
)
from fibermercer.errors import GridMismatch, InvalidArgument
from fibermercer.operators import EquivalenceTolerances


def random_element(dk, rng):
    return ModuleElement(dk.pgrid, dk.quad, rng.standard_normal((dk.pgrid.size, dk.quad.size)))


def low_rank(r: int, p: int = 8, m: int = 4):
    profiles = [(1.0 / n, 1.0 / n) for n in range(1, r + 1)]
    return discretize(KernelSpec.low_rank(profiles), gauss_legendre(p, UNIT), parameter_grid(m, UNIT))


class TestModuleElement:
    def test_shape_and_finiteness(self):
        quad, pgrid = grids(4, 3)
        with pytest.raises(GridMismatch):
            ModuleElement(pgrid, quad, np.zeros((3, 5)))
        with pytest.raises(InvalidArgument):
            ModuleElement(pgrid, quad, np.full((3, 4), np.inf))

    def test_scaling_by_fiber_function(self):
        quad, pgrid = grids(4, 3)
        f = ModuleElement.from_function(lambda om, t: t, pgrid, quad)
        g = f.scaled(pgrid.points)
        np.testing.assert_array_equal(g.values, pgrid.points[:, None] * quad.nodes[None, :])
        np.testing.assert_array_equal((f + f).values, 2 * f.values)


class TestApplyT:
    def test_eigenfunction(self, builtin_kernel):
        fld = spectral_field(builtin_kernel)
        f = ModuleElement(fld.pgrid, fld.quad, fld.eigenfunctions[:, 0])
        expect = fld.lambdas[:, :1] * fld.eigenfunctions[:, 0]
        np.testing.assert_allclose(apply_T(builtin_kernel, f).values, expect, atol=1e-10)

    def test_zero(self):
        dk = discretized("gaussian")
        assert not apply_T(dk, ModuleElement.zeros(dk.pgrid, dk.quad)).values.any()

    def test_brownian_on_constant_is_second_order(self):
        # int_0^1 min(t, s) ds = t - t^2/2; the kink at s = t caps Gauss-Legendre at O(P^-2)
        errs = []
        for p in (32, 64, 128):
            dk = discretize(KernelSpec.brownian(), gauss_legendre(p, UNIT), parameter_grid(1, UNIT))
            out = apply_T(dk, ModuleElement.from_function(lambda om, t: np.ones_like(t), dk.pgrid, dk.quad))
            t = dk.quad.nodes
            errs.append(np.abs(out.values[0] - (t - t**2 / 2)).max())
        assert errs[1] < 1e-4
        assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0

    def test_smooth_kernel_on_constant(self):
        # separable: T1 = a(omega) phi(t) int phi
        dk = discretize(KernelSpec.separable((1.0, 1.0), Factor("sin", k=1)), *grids(32, 3))
        out = apply_T(dk, ModuleElement.from_function(lambda om, t: np.ones_like(om * t), dk.pgrid, dk.quad))
        expect = (1 + dk.pgrid.points[:, None]) * np.sin(np.pi * dk.quad.nodes)[None, :] * (2 / np.pi)
        np.testing.assert_allclose(out.values, expect, atol=1e-13)

    def test_grid_mismatch(self):
        dk = discretized("brownian", p=8)
        other = discretized("brownian", p=9)
        with pytest.raises(GridMismatch):
            apply_T(dk, ModuleElement.zeros(other.pgrid, other.quad))


class TestPartialIntegral:
    def test_identity(self, rng):
        dk = discretized("gaussian", p=6, m=3)
        f = random_element(dk, rng)
        out = apply_partial_integral(PIOKernels(c=np.ones((3, 6))), f)
        np.testing.assert_array_equal(out.values, f.values)

    def test_m_term_is_T(self, builtin_kernel, rng):
        f = random_element(builtin_kernel, rng)
        np.testing.assert_array_equal(apply_partial_integral(PIOKernels(m=builtin_kernel.values), f).values,
                                      apply_T(builtin_kernel, f).values)

    def test_empty_operator_is_zero(self, rng):
        dk = discretized("gaussian", p=4, m=2)
        assert not apply_partial_integral(PIOKernels(), random_element(dk, rng)).values.any()

    @pytest.mark.parametrize("shape", [(2, 2), (3, 3)])
    def test_separable_n_matches_quadruple_sum(self, shape, rng):
        m, p = shape
        quad, pgrid = gauss_legendre(p, UNIT), parameter_grid(m, UNIT)
        u, v = rng.standard_normal((m, p)), rng.standard_normal((m, p))
        f = ModuleElement(pgrid, quad, rng.standard_normal((m, p)))
        out = apply_partial_integral(PIOKernels(n=np.einsum("ji,qk->jiqk", u, v)), f).values
        for j in range(m):
            for i in range(p):
                total = sum(pgrid.weights[q] * quad.weights[k] * v[q, k] * f.values[q, k]
                            for q in range(m) for k in range(p))
                assert out[j, i] == pytest.approx(u[j, i] * total, abs=1e-12)

    def test_l_term_integrates_over_omega(self, rng):
        quad, pgrid = grids(3, 4)
        f = ModuleElement(pgrid, quad, rng.standard_normal((4, 3)))
        out = apply_partial_integral(PIOKernels(l=np.ones((4, 3, 4))), f).values
        expect = np.broadcast_to(pgrid.weights @ f.values, (4, 3))
        np.testing.assert_allclose(out, expect, atol=1e-15)

    def test_terms_add(self, rng):
        dk = discretized("brownian", p=5, m=3)
        f = random_element(dk, rng)
        c = rng.standard_normal((3, 5))
        both = apply_partial_integral(PIOKernels(c=c, m=dk.values), f).values
        np.testing.assert_allclose(both, c * f.values + apply_T(dk, f).values, atol=1e-15)

    def test_shape_mismatch(self, rng):
        dk = discretized("brownian", p=5, m=3)
        with pytest.raises(GridMismatch):
            apply_partial_integral(PIOKernels(n=np.zeros((3, 5, 3, 4))), random_element(dk, rng))


class TestInnerProductAndNorm:
    def test_constants(self):
        quad, pgrid = grids(5, 3)
        one = ModuleElement.from_function(lambda om, t: np.ones_like(om * t), pgrid, quad)
        np.testing.assert_allclose(module_inner_product(one, one), 1.0, rtol=1e-14)
        assert not module_inner_product(one, ModuleElement.zeros(pgrid, quad)).any()

    def test_eigenfunctions_orthonormal(self):
        fld = spectral_field(discretized("gaussian"))
        x = fld.eigenfunctions
        for n in range(3):
            for k in range(3):
                ip = module_inner_product(ModuleElement(fld.pgrid, fld.quad, x[:, n]),
                                          ModuleElement(fld.pgrid, fld.quad, x[:, k]))
                np.testing.assert_allclose(ip, float(n == k), atol=1e-10)

    def test_ess_sup_is_grid_max(self):
        quad, pgrid = grids(5, 4)
        f = ModuleElement.from_function(lambda om, t: om + 0 * t, pgrid, quad)
        norm = l2inf_norm(f)
        assert norm.ess_sup == pytest.approx(0.875, rel=1e-14)
        assert l2inf_norm(ModuleElement.zeros(pgrid, quad)).ess_sup == 0.0

    def test_unit_eigenfunctions(self):
        fld = spectral_field(discretized("brownian"))
        norm = l2inf_norm(ModuleElement(fld.pgrid, fld.quad, fld.eigenfunctions[:, 0]))
        np.testing.assert_allclose(norm.per_fiber, 1.0, atol=1e-10)


class TestAdjoint:
    def test_on_eigenfunction(self):
        dk = discretized("low_rank")
        fld = spectral_field(dk)
        g = ModuleElement(fld.pgrid, fld.quad, fld.eigenfunctions[:, 0])
        np.testing.assert_allclose(adjoint_embed(dk, g).values, fld.lambdas[:, :1] * fld.eigenfunctions[:, 0],
                                   atol=1e-12)

    def test_spectral_identity(self, builtin_kernel, rng):
        fld = spectral_field(builtin_kernel)
        b = rng.standard_normal(fld.lambdas.shape) * np.sqrt(fld.lambdas)
        f = ModuleElement(fld.pgrid, fld.quad, np.einsum("jn,jnp->jp", b, fld.eigenfunctions))
        g = random_element(builtin_kernel, rng)
        diff = module_inner_product(f, g) - rkhs_inner_product(f, adjoint_embed(builtin_kernel, g), fld)
        assert np.abs(diff).max() <= 1e-8

    def test_nullspace(self):
        dk = low_rank(2)
        fld = spectral_field(dk)
        w = dk.quad.weights
        probe = np.zeros((dk.pgrid.size, dk.quad.size))
        probe[:, 0] = 1.0
        x = fld.eigenfunctions
        g = ModuleElement(dk.pgrid, dk.quad, probe - np.einsum("jnp,jp,p,jnq->jq", x, probe, w, x))
        assert np.abs(adjoint_embed(dk, g).values).max() <= 1e-8 * l2inf_norm(g).ess_sup


class TestSelfAdjointness:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_symmetric_kernel(self, seed):
        rng = np.random.default_rng(seed)
        dk = discretized("gaussian", p=12, m=3)
        f, g = random_element(dk, rng), random_element(dk, rng)
        scale = np.abs(dk.values).max() * np.abs(f.values).max() * np.abs(g.values).max()
        assert self_adjointness_defect(dk, f, g) <= 1e-12 * scale

    def test_same_argument(self, rng):
        dk = discretized("brownian")
        f = random_element(dk, rng)
        assert self_adjointness_defect(dk, f, f) == 0.0

    def test_asymmetrized_control(self, rng):
        dk = discretized("brownian")
        t = dk.quad.nodes
        skewed = DiscreteKernel(dk.pgrid, dk.quad, dk.values + (t[:, None] - t[None, :]))
        assert self_adjointness_defect(skewed, random_element(dk, rng), random_element(dk, rng)) > 0


class TestInjectivity:
    @pytest.mark.parametrize("sigma", [0.1, 0.2, 0.5])
    def test_gaussian_verdict_follows_min_lambda(self, sigma):
        dk = discretize(KernelSpec.gaussian((sigma,)), *grids(16, 2))
        rep = injectivity_diagnostic(spectral_field(dk), dk, tau=1e-12)
        # oracle: dense eigensolve of the weighted fiber
        w = np.sqrt(dk.quad.weights)
        ev = np.linalg.eigvalsh(w[:, None] * dk.values[0] * w[None, :])
        assert rep.per_fiber_min_lambda[0] == pytest.approx(ev[0], abs=1e-15 * ev[-1])
        assert rep.passed == bool(ev[0] > 1e-12 * ev[-1])

    def test_rank_one(self):
        dk = discretize(KernelSpec.low_rank([(1.0,)]), *grids(4, 2))
        rep = injectivity_diagnostic(spectral_field(dk), dk)
        assert rep.numerical_rank.tolist() == [1, 1] and not rep.passed

    def test_zero(self):
        dk = discretize(KernelSpec.separable((0.0,)), *grids(4, 2))
        rep = injectivity_diagnostic(spectral_field(dk), dk)
        assert rep.numerical_rank.tolist() == [0, 0] and not rep.passed


class TestEquivalence:
    def test_full_rank(self):
        dk = low_rank(8)
        rep = equivalence_report(spectral_field(dk), dk)
        assert all(rep.verdicts.values()) and rep.consistent
        assert rep.resolution == 8 and rep.cond3_min_terms == 8

    @pytest.mark.parametrize("r", [1, 4, 7])
    def test_rank_deficient(self, r):
        dk = low_rank(r)
        rep = equivalence_report(spectral_field(dk), dk)
        assert not any(rep.verdicts.values()) and rep.consistent
        assert rep.cond1_parseval_max_defect > 0.1

    def test_zero_kernel(self):
        dk = discretize(KernelSpec.separable((0.0,)), *grids(6, 2))
        rep = equivalence_report(spectral_field(dk), dk)
        assert not any(rep.verdicts.values()) and rep.consistent
        assert rep.to_dict()["consistent"] is True

    def test_tolerances_reported(self):
        dk = low_rank(8)
        tol = EquivalenceTolerances(parseval=1e-6, tau=1e-10, reconstruction=1e-7)
        d = equivalence_report(spectral_field(dk), dk, tol).to_dict()
        assert d["tolerances"] == {"parseval": 1e-6, "tau": 1e-10, "reconstruction": 1e-7}


class TestProjectionKernel:
    def test_sections_are_fixed_points(self):
        # all eigenvalues in {0, 1}: T is idempotent, so S_K* maps each section to itself
        dk = discretize(KernelSpec.low_rank([(1.0,), (1.0,), (1.0,)]), *grids(16, 3))
        for k in (0, 7, 15):
            section = ModuleElement(dk.pgrid, dk.quad, dk.values[:, :, k])
            np.testing.assert_allclose(adjoint_embed(dk, section).values, section.values, atol=1e-13)

    def test_general_kernel_is_not_idempotent(self):
        dk = discretized("brownian")
        section = ModuleElement(dk.pgrid, dk.quad, dk.values[:, :, 10])
        assert np.abs(adjoint_embed(dk, section).values - section.values).max() > 1e-2
