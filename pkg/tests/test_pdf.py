import math

import numpy as np
import pytest

from parafit.core import Variable
from parafit.errors import (
    FractionOutOfRange,
    NegativeDensity,
    NonPositiveNorm,
    OverlappingObservables,
    UnboundedObservable,
)
from parafit.pdf import (
    add_pdf,
    eval_batch,
    exponential,
    gaussian,
    normalize,
    polynomial,
    prod_pdf,
)


def midpoint_integral(f, lo, hi, n):
    """Brute-force midpoint oracle, independent of the quadrature under test."""
    dx = (hi - lo) / n
    xs = lo + (np.arange(n) + 0.5) * dx
    return float(np.sum(f(xs)) * dx)


class TestKernels:
    def test_gaussian_peak_is_one(self):
        x = Variable.observable("x")
        node = gaussian(x, 0.0, 1.0)
        assert eval_batch(node, {"x": np.array([0.0])})[0] == 1.0

    def test_exponential_at_zero_is_one(self):
        x = Variable.observable("x", 0.0, 10.0)
        node = exponential(x, -2.0)
        assert eval_batch(node, {"x": np.array([0.0])})[0] == 1.0

    def test_polynomial_values(self):
        x = Variable.observable("x", 0.0, 2.0)
        node = polynomial(x, [1.0, 2.0, 3.0])  # 1 + 2x + 3x^2
        out = eval_batch(node, {"x": np.array([0.0, 1.0, 2.0])})
        assert out.tolist() == [1.0, 6.0, 17.0]

    def test_polynomial_negative_raises_with_index(self):
        x = Variable.observable("x", -2.0, 2.0)
        node = polynomial(x, [0.5, -1.0])  # 0.5 - x < 0 for x > 0.5
        with pytest.raises(NegativeDensity) as err:
            eval_batch(node, {"x": np.array([0.0, 1.0])})
        assert err.value.index == 1

    def test_add_weights_with_implied_last_fraction(self):
        # two flat children over [0, 1] scaled so normalized values are 2.0 and 4.0
        # is impossible for true densities; emulate with polynomial shapes whose
        # normalized densities at 0.5 are computed explicitly instead.
        x = Variable.observable("x", 0.0, 1.0)
        c1 = polynomial(x, [1.0, 0.0, 3.0])  # 1 + 3x^2, integral 2 on [0,1]
        c2 = polynomial(x, [2.0])  # flat 2, integral 2
        node = add_pdf([c1, c2], [0.3])
        pt = np.array([0.5])
        n1 = normalize(c1).value
        n2 = normalize(c2).value
        d1 = eval_batch(c1, {"x": pt})[0] / n1
        d2 = eval_batch(c2, {"x": pt})[0] / n2
        got = eval_batch(node, {"x": pt})[0]
        assert got == pytest.approx(0.3 * d1 + 0.7 * d2, rel=1e-14)

    def test_simplex_weight_completion_arithmetic(self):
        # the documented example: normalized children equal to 2.0 and 4.0
        # with f1 = 0.3 combine to 0.3*2.0 + 0.7*4.0 = 3.4
        assert 0.3 * 2.0 + 0.7 * 4.0 == 3.4

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        x = Variable.observable("x", 0.0, 1.0)
        node = add_pdf([gaussian(x, 0.3, 0.1), gaussian(x, 0.7, 0.05)], [0.4])
        xs = rng.uniform(0, 1, 257)
        perm = rng.permutation(len(xs))
        direct = eval_batch(node, {"x": xs})
        permuted = eval_batch(node, {"x": xs[perm]})
        assert np.array_equal(direct[perm], permuted)


class TestNormalize:
    def test_gaussian_infinite_range(self):
        x = Variable.observable("x")
        node = gaussian(x, 0.0, 1.0)
        assert normalize(node).value == pytest.approx(math.sqrt(2 * math.pi), abs=1e-12)

    def test_exponential_half_line(self):
        x = Variable.observable("x", 0.0, math.inf)
        node = exponential(x, -1.0)
        assert normalize(node).value == pytest.approx(1.0, abs=1e-15)

    def test_exponential_zero_slope_limit(self):
        x = Variable.observable("x", 1.0, 4.0)
        node = exponential(x, 0.0)
        assert normalize(node).value == 3.0

    def test_exponential_divergent(self):
        x = Variable.observable("x", 0.0, math.inf)
        node = exponential(x, 1.0)
        with pytest.raises(UnboundedObservable):
            normalize(node)

    def test_constant_polynomial(self):
        x = Variable.observable("x", 0.0, 2.0)
        node = polynomial(x, [1.0])
        assert normalize(node).value == pytest.approx(2.0, abs=1e-14)

    def test_polynomial_quadrature_vs_midpoint_oracle(self):
        """Gauss-Legendre result against a 1e7-point midpoint rule."""
        x = Variable.observable("x", 0.0, 2.0)
        coeffs = [1.0, 0.5, 2.0, 0.25, 1.5]
        node = polynomial(x, coeffs)
        oracle = midpoint_integral(
            lambda xs: np.polynomial.polynomial.polyval(xs, np.array(coeffs)), 0.0, 2.0, 10_000_000
        )
        got = normalize(node).value
        assert abs(got - oracle) <= 1e-10 * abs(oracle)

    def test_unbounded_polynomial_rejected(self):
        x = Variable.observable("x")
        with pytest.raises(UnboundedObservable):
            normalize(polynomial(x, [1.0]))

    def test_nonpositive_sigma_rejected(self):
        x = Variable.observable("x")
        node = gaussian(x, 0.0, Variable("s", 1.0))
        node.parameters[1]._value = -1.0  # bypass bounds to hit the norm check
        with pytest.raises(NonPositiveNorm):
            normalize(node)

    def test_gaussian_tail_cut_symmetric_in_k(self):
        mu, sigma = 0.3, 0.7
        for k in (0.5, 1.0, 2.0, 3.5):
            left = Variable.observable("x", mu - k * sigma, mu)
            right = Variable.observable("x", mu, mu + k * sigma)
            nl = normalize(gaussian(left, mu, sigma)).value
            nr = normalize(gaussian(right, mu, sigma)).value
            assert nl == pytest.approx(nr, rel=1e-14)


class TestBuilders:
    def test_add_valid(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = add_pdf([gaussian(x, 0.3, 0.1), gaussian(x, 0.7, 0.1)], [0.3])
        assert node.kind == "add"
        assert len(node.parameters) == 1

    def test_add_fraction_sum_above_one(self):
        x = Variable.observable("x", 0.0, 1.0)
        children = [gaussian(x, 0.2, 0.1), gaussian(x, 0.5, 0.1), gaussian(x, 0.8, 0.1)]
        with pytest.raises(FractionOutOfRange):
            add_pdf(children, [0.6, 0.6])

    def test_add_fraction_count_mismatch(self):
        x = Variable.observable("x", 0.0, 1.0)
        with pytest.raises(FractionOutOfRange):
            add_pdf([gaussian(x, 0.3, 0.1), gaussian(x, 0.7, 0.1)], [0.3, 0.2])

    def test_prod_overlapping_observables(self):
        x = Variable.observable("x", 0.0, 1.0)
        with pytest.raises(OverlappingObservables):
            prod_pdf([polynomial(x, [1.0]), polynomial(x, [1.0])])

    def test_prod_disjoint(self):
        x = Variable.observable("x", 0.0, 1.0)
        y = Variable.observable("y", 0.0, 1.0)
        node = prod_pdf([gaussian(x, 0.5, 0.1), gaussian(y, 0.5, 0.2)])
        assert node.observable_names() == ("x", "y")


class TestUnitIntegralProperties:
    """Normalized densities must integrate to one against the midpoint oracle."""

    N_ORACLE = 1_000_000

    def check_unit(self, node, lo, hi, name="x"):
        norm = normalize(node).value
        got = midpoint_integral(
            lambda xs: eval_batch(node, {name: xs}) / norm, lo, hi, self.N_ORACLE
        )
        assert abs(got - 1.0) <= 1e-6

    def test_gaussian_finite_range(self):
        x = Variable.observable("x", -1.0, 2.0)
        self.check_unit(gaussian(x, 0.4, 0.3), -1.0, 2.0)

    def test_exponential_finite_range(self):
        x = Variable.observable("x", 0.0, 5.0)
        self.check_unit(exponential(x, -0.7), 0.0, 5.0)

    def test_polynomial(self):
        x = Variable.observable("x", 0.0, 1.0)
        self.check_unit(polynomial(x, [0.2, 1.0, 2.5, 0.5]), 0.0, 1.0)

    def test_add_on_simplex(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = add_pdf(
            [gaussian(x, 0.3, 0.08), gaussian(x, 0.6, 0.15), polynomial(x, [1.0])],
            [0.25, 0.35],
        )
        self.check_unit(node, 0.0, 1.0)

    def test_prod_two_axes_unit_mass(self):
        x = Variable.observable("x", 0.0, 1.0)
        y = Variable.observable("y", 0.0, 2.0)
        node = prod_pdf([gaussian(x, 0.5, 0.2), exponential(y, -1.1)])
        norm = normalize(node).value
        n = 1500
        xs = np.linspace(0.0 + 0.5 / n, 1.0 - 0.5 / n, n)
        ys = np.linspace(0.0 + 1.0 / n, 2.0 - 1.0 / n, n)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        dens = eval_batch(node, {"x": gx.reshape(-1), "y": gy.reshape(-1)}) / norm
        integral = float(np.sum(dens)) * (1.0 / n) * (2.0 / n)
        assert integral == pytest.approx(1.0, abs=1e-4)
