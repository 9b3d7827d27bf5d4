from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import UNIT, builtin_specs, grids
from fibermercer import (
    DiscreteKernel,
    Factor,
    Interval,
    KernelSpec,
    discretize,
    eval_kernel,
    gauss_legendre,
    load_tabulated,
    parameter_grid,
    trapezoid_rule,
    validate_kernel,
    write_tabulated,
)
from fibermercer.errors import GridMismatch, InvalidArgument, ParseError, UnsupportedOperation
from fibermercer.kernel import format_real, pikt_text


class TestEvaluate:
    def test_brownian_is_min(self):
        assert eval_kernel(KernelSpec.brownian(), 0.5, 0.3, 0.7) == 0.3

    def test_gaussian_diagonal_is_one(self):
        assert eval_kernel(KernelSpec.gaussian((1.0,)), 0.2, 0.4, 0.4) == 1.0

    def test_gaussian_uses_two_sigma_squared(self):
        k = eval_kernel(KernelSpec.gaussian((0.5,)), 0.0, 0.0, 1.0)
        assert k == pytest.approx(math.exp(-2.0), rel=1e-15)

    def test_low_rank_single_term(self):
        spec = KernelSpec.low_rank([(0.0, 1.0)])
        assert eval_kernel(spec, 0.25, 0.5, 0.5) == pytest.approx(0.5, abs=1e-15)

    def test_separable_polynomial_factor(self):
        spec = KernelSpec.separable((2.0, 1.0), Factor("polynomial", coefficients=(1.0, 0.0, 1.0)))
        # a(0.5) = 2.5, phi(t) = 1 + t^2
        assert eval_kernel(spec, 0.5, 0.5, 1.0) == pytest.approx(2.5 * 1.25 * 2.0, rel=1e-15)

    @pytest.mark.parametrize("args", [(1.5, 0.2, 0.2), (0.5, -0.1, 0.2), (0.5, 0.2, 1.01)])
    def test_out_of_range(self, args):
        with pytest.raises(InvalidArgument):
            eval_kernel(KernelSpec.brownian(), *args)

    def test_tabulated_has_no_pointwise_values(self):
        quad, pgrid = grids(4, 2)
        spec = KernelSpec.tabulated(discretize(KernelSpec.brownian(), quad, pgrid))
        with pytest.raises(UnsupportedOperation):
            eval_kernel(spec, 0.5, 0.5, 0.5)

    @pytest.mark.parametrize(
        "spec",
        [KernelSpec.gaussian((0.1, -1.0)), KernelSpec.brownian((0.1, -1.0)), KernelSpec.low_rank([(0.1, -1.0)])],
        ids=["sigma", "amplitude", "profile"],
    )
    def test_sign_constraints_enforced_on_grid(self, spec):
        with pytest.raises(InvalidArgument):
            discretize(spec, *grids(4, 4))

    def test_affine_limits(self):
        with pytest.raises(InvalidArgument):
            KernelSpec.gaussian((1.0, 0.0, 1.0))
        with pytest.raises(InvalidArgument):
            KernelSpec.brownian((1.0, 0.0, 1.0))

    def test_low_rank_restricted_to_unit_interval(self):
        with pytest.raises(InvalidArgument):
            KernelSpec.low_rank([(1.0,)], s_interval=Interval(0.0, 2.0))

    def test_factor_validation(self):
        with pytest.raises(InvalidArgument):
            Factor("cos")
        with pytest.raises(InvalidArgument):
            Factor("sin", k=0)
        with pytest.raises(InvalidArgument):
            Factor.from_dict({"kind": "sin", "k": 1, "coefficients": [1]})


class TestDiscretize:
    def test_brownian_two_nodes(self):
        quad = gauss_legendre(2, UNIT)
        dk = discretize(KernelSpec.brownian(), quad, parameter_grid(1, UNIT))
        t = quad.nodes
        np.testing.assert_array_equal(dk.values[0], np.minimum.outer(t, t))
        assert dk.shape == (1, 2, 2)

    @pytest.mark.parametrize("name", sorted(builtin_specs()))
    def test_fibers_bitwise_symmetric(self, name):
        dk = discretize(builtin_specs()[name], *grids(17, 3))
        np.testing.assert_array_equal(dk.values, np.swapaxes(dk.values, 1, 2))

    def test_gaussian_unit_diagonal(self):
        dk = discretize(KernelSpec.gaussian((0.1, 0.2)), *grids(9, 4))
        assert np.all(np.diagonal(dk.values, axis1=1, axis2=2) == 1.0)

    def test_matches_pointwise_evaluation(self):
        spec = builtin_specs()["low_rank"]
        quad, pgrid = grids(5, 3)
        dk = discretize(spec, quad, pgrid)
        for j, om in enumerate(pgrid.points):
            for i, t in enumerate(quad.nodes):
                for k, s in enumerate(quad.nodes):
                    assert dk.values[j, i, k] == pytest.approx(eval_kernel(spec, om, t, s), rel=1e-14, abs=1e-15)

    def test_tabulated_round_trip_and_grid_check(self, tmp_path):
        quad, pgrid = grids(6, 3)
        dk = discretize(KernelSpec.gaussian((0.3,)), quad, pgrid)
        write_tabulated(dk, tmp_path / "g.pikt")
        back = load_tabulated(tmp_path / "g.pikt")
        again = discretize(KernelSpec.tabulated(back), back.quad, back.pgrid)
        np.testing.assert_array_equal(again.values, dk.values)
        with pytest.raises(GridMismatch):
            discretize(KernelSpec.tabulated(back), trapezoid_rule(6, UNIT), back.pgrid)

    def test_discrete_kernel_rejects_bad_shapes(self):
        quad, pgrid = grids(3, 2)
        with pytest.raises(GridMismatch):
            DiscreteKernel(pgrid, quad, np.zeros((2, 3, 2)))
        with pytest.raises(InvalidArgument):
            DiscreteKernel(pgrid, quad, np.full((2, 3, 3), np.nan))


class TestPikt:
    @given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
    @settings(max_examples=50, deadline=None)
    def test_format_real_round_trips(self, xs):
        for x in xs:
            assert float(format_real(x)) == x

    def test_round_trip_is_bitwise(self, tmp_path):
        quad, pgrid = gauss_legendre(7, Interval(-1.0, 2.0)), parameter_grid(3, Interval(0.0, 0.3))
        rng = np.random.default_rng(7)
        dk = DiscreteKernel(pgrid, quad, rng.standard_normal((3, 7, 7)) * 1e-7)
        path = tmp_path / "k.pikt"
        write_tabulated(dk, path)
        back = load_tabulated(path)
        np.testing.assert_array_equal(back.values, dk.values)
        np.testing.assert_array_equal(back.quad.nodes, dk.quad.nodes)
        np.testing.assert_array_equal(back.pgrid.weights, dk.pgrid.weights)
        assert pikt_text(back) == path.read_text()

    def _bad(self, tmp_path, text):
        path = tmp_path / "bad.pikt"
        path.write_text(text)
        with pytest.raises(ParseError) as info:
            load_tabulated(path)
        return info.value

    def test_empty_file(self, tmp_path):
        err = self._bad(tmp_path, "")
        assert err.line == 1 and str(tmp_path) in str(err)

    def test_short_node_line(self, tmp_path):
        err = self._bad(tmp_path, "PIKT 1 1 3\n0.5\n1.0\n0.1 0.5\n0.3 0.3 0.4\n")
        assert err.line == 4

    @pytest.mark.parametrize(
        "text, line",
        [
            ("PIKX 1 1 1\n", 1),
            ("PIKT 1 0 1\n", 1),
            ("PIKT 1 1 1\n0.5\n1.0\n0.5\n1.0\n", 6),
            ("PIKT 1 1 1\n0.5\n1.0\n0.5\n1.0\nnan\n", 6),
            ("PIKT 1 1 1\n0.5\n1.0\n0.5\n1.0\n2.0\n3.0\n", 7),
            ("PIKT 1 1 2\n0.5\n1.0\n0.6 0.4\n0.5 0.5\n1 0\n0 1\n", 4),
        ],
        ids=["magic", "zero-count", "truncated", "nonfinite", "trailing", "unsorted"],
    )
    def test_malformed(self, tmp_path, text, line):
        assert self._bad(tmp_path, text).line == line


class TestValidation:
    def test_brownian_passes(self):
        dk = discretize(KernelSpec.brownian(), *grids(32, 3))
        rep = validate_kernel(dk)
        assert rep.passed
        assert np.all(rep.symmetry_defect == 0)
        assert np.all(rep.psd_min_eigenvalue >= -1e-12)
        assert math.isfinite(rep.hs_ess_sup)
        # oracle: dense eigensolve of the weighted fiber
        w = dk.quad.weights
        ref = np.linalg.eigvalsh(np.sqrt(w)[:, None] * dk.values[0] * np.sqrt(w)[None, :])
        assert rep.psd_max_eigenvalue[0] == pytest.approx(ref[-1], rel=1e-13)

    def test_antisymmetric_fails_symmetry(self):
        quad, pgrid = grids(5, 2)
        t = quad.nodes
        dk = DiscreteKernel(pgrid, quad, np.broadcast_to(t[:, None] - t[None, :], (2, 5, 5)))
        rep = validate_kernel(dk)
        assert not rep.verdicts["symmetry"]
        assert rep.symmetry_defect[0] == pytest.approx(2 * (t[-1] - t[0]), rel=1e-14)
        assert "symmetry" in rep.failed_conditions()

    def test_negative_rank_one(self):
        quad, pgrid = grids(6, 2)
        dk = DiscreteKernel(pgrid, quad, -np.ones((2, 6, 6)))
        rep = validate_kernel(dk)
        assert rep.psd_min_eigenvalue == pytest.approx([-1.0, -1.0], abs=1e-14)
        assert not rep.verdicts["psd"] and rep.verdicts["symmetry"]

    def test_hs_constant_is_weighted_frobenius(self):
        dk = discretize(KernelSpec.separable((1.0, 1.0)), *grids(8, 2))
        # K = a(omega): ||K||^2 = a^2 on the unit square
        np.testing.assert_allclose(validate_kernel(dk).hs_constant, (1 + dk.pgrid.points) ** 2, rtol=1e-13)

    def test_rejects_bad_tolerances(self):
        with pytest.raises(InvalidArgument):
            validate_kernel(discretize(KernelSpec.brownian(), *grids(3, 1)), tol_sym=0.0)


class TestSpecSerialization:
    @pytest.mark.parametrize("name", sorted(builtin_specs()))
    def test_dict_round_trip(self, name):
        spec = builtin_specs()[name]
        back = KernelSpec.from_dict(spec.to_dict(), UNIT, UNIT)
        assert back.to_dict() == spec.to_dict()

    def test_unknown_keys_rejected(self):
        with pytest.raises(InvalidArgument):
            KernelSpec.from_dict({"variant": "brownian_scaled", "amplitud": [1.0]}, UNIT, UNIT)
        with pytest.raises(InvalidArgument):
            KernelSpec.from_dict({"variant": "matern"}, UNIT, UNIT)
