import math

import numpy as np
import pytest

from parafit.core import Variable
from parafit.dalitz import DecayChannel, ResonanceTerm, in_boundary_mask, integration_grid
from parafit.errors import AttemptsExhausted, UnboundedObservable
from parafit.mcgen import GenSpec, generate_1d, generate_dalitz
from parafit.pdf import gaussian, polynomial

D_CHANNEL = DecayChannel(1.86484, 0.13957, 0.13957, 0.13498)


def fixed_term(pair, mass, width, spin=0, mag=1.0, phase=0.0, name="t"):
    return ResonanceTerm(
        pair,
        Variable(f"{name}_m", mass, fixed=True),
        Variable(f"{name}_w", width, fixed=True),
        spin,
        Variable(f"{name}_c", mag, fixed=True),
        Variable(f"{name}_p", phase, fixed=True),
        name=name,
    )


class TestGenerate1d:
    def test_uniform_acceptance_rate(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = polynomial(x, [1.0])
        stats: dict = {}
        generate_1d(node, x, GenSpec(n_events=100_000, seed=1), stats=stats)
        rate = stats["accepted"] / stats["attempts"]
        assert rate == pytest.approx(1.0 / 1.1, abs=0.02)

    def test_gaussian_sample_mean(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = gaussian(x, Variable("m", 0.5, fixed=True), Variable("s", 0.1, fixed=True))
        n = 100_000
        ds = generate_1d(node, x, GenSpec(n_events=n, seed=2))
        mean = float(ds.column(x).mean())
        assert abs(mean - 0.5) <= 3 * 0.1 / math.sqrt(n)
        assert ds.n_events == n

    def test_same_seed_bitwise_identical(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = gaussian(x, Variable("m", 0.5, fixed=True), Variable("s", 0.1, fixed=True))
        a = generate_1d(node, x, GenSpec(n_events=5000, seed=77))
        b = generate_1d(node, x, GenSpec(n_events=5000, seed=77))
        assert np.array_equal(a.column(x), b.column(x))

    def test_different_seed_differs(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = polynomial(x, [1.0])
        a = generate_1d(node, x, GenSpec(n_events=100, seed=1))
        b = generate_1d(node, x, GenSpec(n_events=100, seed=2))
        assert not np.array_equal(a.column(x), b.column(x))

    def test_all_samples_in_range(self):
        x = Variable.observable("x", -2.0, 3.0)
        node = gaussian(x, Variable("m", 0.0, fixed=True), Variable("s", 1.0, fixed=True))
        ds = generate_1d(node, x, GenSpec(n_events=20_000, seed=3))
        col = ds.column(x)
        assert ((col >= -2.0) & (col <= 3.0)).all()

    def test_unbounded_observable_rejected(self):
        x = Variable.observable("x")
        node = gaussian(x, Variable("m", 0.0, fixed=True), Variable("s", 1.0, fixed=True))
        with pytest.raises(UnboundedObservable):
            generate_1d(node, x, GenSpec(n_events=10, seed=0))

    def test_chi_square_goodness_of_fit(self):
        """50-bin chi^2 against erf-integrated bin expectations."""
        x = Variable.observable("x", 0.0, 1.0)
        mu, sigma = 0.5, 0.1
        node = gaussian(x, Variable("m", mu, fixed=True), Variable("s", sigma, fixed=True))
        n = 100_000
        ds = generate_1d(node, x, GenSpec(n_events=n, seed=4))
        counts, edges = np.histogram(ds.column(x), bins=50, range=(0.0, 1.0))

        def cdf(v):
            return 0.5 * (1.0 + math.erf((v - mu) / (sigma * math.sqrt(2.0))))

        total_mass = cdf(1.0) - cdf(0.0)
        expected = np.array(
            [n * (cdf(edges[i + 1]) - cdf(edges[i])) / total_mass for i in range(50)]
        )
        keep = expected > 5.0
        chi2 = float(np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep]))
        dof = int(keep.sum())
        assert chi2 / dof < 2.0

    def test_parallel_streams_deterministic(self):
        x = Variable.observable("x", 0.0, 1.0)
        node = polynomial(x, [1.0])
        spec = GenSpec(n_events=9001, seed=5, streams=4)
        a = generate_1d(node, x, spec)
        b = generate_1d(node, x, spec)
        assert a.n_events == 9001
        assert np.array_equal(a.column(x), b.column(x))


class TestGenerateDalitz:
    def test_all_points_in_boundary(self):
        terms = [fixed_term(12, 0.77526, 0.1478, spin=0)]
        ds = generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=100_000, seed=6))
        assert ds.n_events == 100_000
        inside = in_boundary_mask(ds.column("s12"), ds.column("s13"), D_CHANNEL)
        assert inside.all()

    def test_peak_sits_on_resonance_band(self):
        """Histogram the pair mass; the densest bin must cover m^2."""
        m = 1.0
        terms = [fixed_term(13, m, 0.12, spin=0)]
        ds = generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=100_000, seed=7))
        counts, edges = np.histogram(ds.column("s13"), bins=60)
        peak = int(np.argmax(counts))
        centers = 0.5 * (edges[:-1] + edges[1:])
        width = edges[1] - edges[0]
        assert abs(centers[peak] - m * m) <= 1.5 * width

    def test_exactly_cancelling_terms_exhaust_attempts(self):
        terms = [
            fixed_term(12, 0.9, 0.1, mag=1.0, name="plus"),
            fixed_term(12, 0.9, 0.1, mag=-1.0, name="minus"),
        ]
        with pytest.raises(AttemptsExhausted):
            generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=10, seed=8, max_attempts_factor=50))

    def test_deterministic_for_seed(self):
        terms = [fixed_term(12, 0.77526, 0.1478, spin=1)]
        a = generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=3000, seed=9))
        b = generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=3000, seed=9))
        assert np.array_equal(a.column("s12"), b.column("s12"))
        assert np.array_equal(a.column("s13"), b.column("s13"))

    def test_phase_space_subsample_matches_grid_area(self):
        """The pre-intensity in-boundary fraction must reproduce the grid area."""
        terms = [fixed_term(12, 0.77526, 0.1478)]
        stats: dict = {}
        generate_dalitz(terms, D_CHANNEL, GenSpec(n_events=50_000, seed=10), stats=stats)
        (lo12, hi12), (lo13, hi13) = D_CHANNEL.s12_range, D_CHANNEL.s13_range
        box = (hi12 - lo12) * (hi13 - lo13)
        frac = stats["in_boundary_draws"] / stats["box_draws"]
        mc_area = box * frac
        se = box * math.sqrt(frac * (1.0 - frac) / stats["box_draws"])
        g12, g13, mask, darea = integration_grid(D_CHANNEL, (400, 400))
        grid_area = float(mask.sum()) * darea
        assert abs(mc_area - grid_area) <= 3 * se
