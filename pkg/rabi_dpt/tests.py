"""Tests for the rabi-dpt engines and their command-line front end."""

import functools
import io
import json
import math
import os
import tempfile
import unittest
from unittest import mock
import warnings

import numpy as np
from scipy import linalg
import torch

from rabi_dpt import cli
from rabi_dpt import diagnostics
from rabi_dpt import errors
from rabi_dpt import hilbert
from rabi_dpt import loschmidt
from rabi_dpt import quench
from rabi_dpt import runner
from rabi_dpt import semiclassics
from rabi_dpt import spectra
from rabi_dpt import states

G1 = 1.5
ETA = 100.0
G2C = 1.2115384615384615
R_TC_INFINITY = (G1 ** 2 - G1 ** -2) / 2

_SPECTRA = {}


def _decompose(eta, g, cutoff=None):
    """Memoized decomposition at the automatic cutoff of the reference quench."""
    cutoff = cutoff or hilbert.auto_cutoff(eta, G1)
    key = (eta, g, cutoff)
    if key not in _SPECTRA:
        params = hilbert.ModelParams(eta=eta, g=g, cutoff=cutoff)
        _SPECTRA[key] = spectra.eigendecompose(hilbert.assemble_hamiltonian(params))
    return _SPECTRA[key]


def _numeric_rate(eta, g2, t_max=2 * math.pi, dt=0.005):
    cutoff = hilbert.auto_cutoff(eta, G1)
    params = hilbert.ModelParams(eta=eta, g=G1, cutoff=cutoff)
    psi_plus = states.analytic_ground_state(params, 1)
    psi_minus = states.analytic_ground_state(params, -1)
    times = quench.uniform_times(t_max, dt)
    return loschmidt.loschmidt_rate(_decompose(eta, g2), psi_plus, psi_minus, times)


class HilbertTests(unittest.TestCase):
    """Tests for the truncated basis and operator assembly."""

    def test_basis_dimensions(self):
        self.assertEqual(hilbert.build_basis(0).dim, 2)
        self.assertEqual(hilbert.build_basis(9).dim, 20)
        self.assertEqual(hilbert.build_basis(599).dim, 1200)

    def test_basis_index_is_bijection(self):
        basis = hilbert.build_basis(9)
        indices = {basis.index(s, n) for n in range(10) for s in (0, 1)}
        self.assertEqual(indices, set(range(basis.dim)))
        for index in range(basis.dim):
            self.assertEqual(basis.index(*basis.label(index)), index)

    def test_invalid_inputs(self):
        with self.assertRaises(errors.ParameterError):
            hilbert.build_basis(-1)
        with self.assertRaises(errors.ParameterError):
            hilbert.ModelParams(eta=0.0)
        with self.assertRaises(errors.ParameterError):
            hilbert.ModelParams(eta=1.0, g=-0.1)
        with self.assertRaises(errors.ParameterError):
            hilbert.assemble_operator("sigma_w", hilbert.ModelParams(eta=1.0, cutoff=2))

    def test_hamiltonian_elements(self):
        params = hilbert.ModelParams(eta=100.0, g=1.5, cutoff=3)
        basis = hilbert.build_basis(3)
        H = hilbert.assemble_hamiltonian(params).entries
        up0 = basis.index(hilbert.SPIN_UP, 0)
        down1 = basis.index(hilbert.SPIN_DOWN, 1)
        self.assertAlmostEqual(H[up0, up0].item(), 50.0, places=12)
        self.assertAlmostEqual(H[down1, up0].item(), -7.5, places=12)

    def test_hamiltonian_symmetric_and_parity_conserving(self):
        params = hilbert.ModelParams(eta=100.0, g=1.5, cutoff=40)
        H = hilbert.assemble_hamiltonian(params).entries
        parity = hilbert.assemble_operator("parity", params).entries
        self.assertTrue(torch.equal(H, H.T))
        self.assertEqual((H @ parity - parity @ H).abs().max().item(), 0.0)
        identity = torch.eye(params.dim, dtype=torch.float64)
        self.assertTrue(torch.equal(parity @ parity, identity))

    def test_decoupled_spectrum(self):
        params = hilbert.ModelParams(eta=100.0, g=0.0, cutoff=5)
        energies = torch.linalg.eigvalsh(hilbert.assemble_hamiltonian(params).entries)
        expected = sorted(s * 50.0 + n for n in range(6) for s in (-1, 1))
        np.testing.assert_allclose(energies.numpy(), expected, atol=1e-10)

    def test_operators(self):
        params = hilbert.ModelParams(eta=100.0, cutoff=2)
        number = hilbert.assemble_operator("number", params).entries
        levels = torch.tensor([0.0, 0, 1, 1, 2, 2], dtype=torch.float64)
        self.assertTrue(torch.equal(torch.diag(number), levels))
        x = hilbert.assemble_operator("x", params).entries
        basis = hilbert.build_basis(2)
        down0 = basis.index(hilbert.SPIN_DOWN, 0)
        down1 = basis.index(hilbert.SPIN_DOWN, 1)
        self.assertAlmostEqual(x[down0, down1].item(), 1 / math.sqrt(200), places=12)
        x_double = hilbert.assemble_operator("x", params.replace(eta=200.0)).entries
        torch.testing.assert_close(x_double, x / math.sqrt(2))
        for kind in ("sigma_y", "p"):
            op = hilbert.assemble_operator(kind, params)
            self.assertTrue(op.imaginary)
            self.assertTrue(torch.equal(op.entries, -op.entries.T))

    def test_auto_cutoff(self):
        self.assertEqual(hilbert.auto_cutoff(100.0, 1.5), 133)
        self.assertEqual(hilbert.auto_cutoff(100.0, 0.5), 20)


class SpectraTests(unittest.TestCase):
    """Tests for eigendecomposition, degeneracy analysis and the cache."""

    def test_decoupled_ground_state(self):
        sd = spectra.eigendecompose(
            hilbert.assemble_hamiltonian(hilbert.ModelParams(eta=100.0, cutoff=4))
        )
        state, energy = spectra.ground_state(sd)
        self.assertAlmostEqual(energy, -50.0, places=10)
        self.assertAlmostEqual(state.amplitudes[0].abs().item(), 1.0, places=12)

    def test_superradiant_decomposition(self):
        sd = _decompose(ETA, G1)
        leading = -ETA * (G1 ** 2 + G1 ** -2) / 4
        self.assertLess(abs(sd.eigenvalues[0].item() - leading), 2.0)
        self.assertTrue(torch.all(sd.eigenvalues[1:] >= sd.eigenvalues[:-1]))
        identity = torch.eye(sd.dim, dtype=torch.float64)
        gram = sd.eigenvectors.T @ sd.eigenvectors
        self.assertLess((gram - identity).abs().max().item(), 1e-10)
        parity = hilbert.parity_diagonal(sd.params.cutoff)
        definite = ((sd.eigenvectors ** 2) * parity[:, None]).sum(dim=0).abs()
        self.assertGreater(definite.min().item(), 1 - 1e-8)
        H = hilbert.assemble_hamiltonian(sd.params).entries
        self.assertLess(
            (sd.reconstruct() - H).abs().max().item(), 1e-8 * H.abs().max().item()
        )

    def test_parity_blocks_match_full_solve(self):
        params = hilbert.ModelParams(eta=ETA, g=G1, cutoff=60)
        H = hilbert.assemble_hamiltonian(params)
        blocked = spectra.eigendecompose(H)
        full = spectra.eigendecompose(H, by_parity=False)
        np.testing.assert_allclose(
            blocked.eigenvalues.numpy(), full.eigenvalues.numpy(), atol=1e-10
        )

    def test_doublet_gaps(self):
        superradiant = _decompose(ETA, G1).eigenvalues
        self.assertLess((superradiant[1] - superradiant[0]).item(), 1e-3)
        normal = _decompose(ETA, 0.5).eigenvalues
        self.assertGreater((normal[1] - normal[0]).item(), 0.1)

    def test_degeneracy_map(self):
        report = spectra.degeneracy_map(_decompose(ETA, G1))
        self.assertEqual(report.separatrix_energy, -50.0)
        self.assertTrue(report.pairs_below)
        labels = _decompose(ETA, G1).parity_labels
        self.assertNotEqual(labels[0].item(), labels[1].item())
        for lower, upper, gap in report.pairs_below:
            self.assertLess(gap, 1e-3)
            self.assertLess((lower + upper) / 2, -50.0)
        self.assertGreater(report.gaps_above["count"], 0)
        self.assertGreater(report.gaps_above["median"], 1e-2)

        self.assertEqual(spectra.degeneracy_map(_decompose(ETA, 0.5)).pairs_below, [])
        small = spectra.degeneracy_map(_decompose(1.0, G1, cutoff=30))
        self.assertIsInstance(small.pairs_below, list)

    def test_symmetric_doublet_branches(self):
        sd = _decompose(ETA, G1)
        sigma_x = hilbert.assemble_operator("sigma_x", sd.params)
        plus = spectra.symmetric_doublet(sd, 1)
        minus = spectra.symmetric_doublet(sd, -1)
        self.assertGreater(states.expectation(plus, sigma_x), 0.8)
        self.assertLess(states.expectation(minus, sigma_x), -0.8)

    def test_cache_round_trip(self):
        params = hilbert.ModelParams(eta=10.0, g=1.2, cutoff=20)
        sd = spectra.eigendecompose(hilbert.assemble_hamiltonian(params))
        with tempfile.TemporaryDirectory() as cache_dir:
            cache = spectra.SpectralCache(cache_dir)
            path = cache.store(sd)
            self.assertTrue(os.path.basename(path).startswith("spec_"))
            self.assertTrue(path.endswith(".bin"))
            loaded = cache.lookup(sd.params)
            self.assertTrue(torch.equal(loaded.eigenvalues, sd.eigenvalues))
            self.assertTrue(torch.equal(loaded.eigenvectors, sd.eigenvectors))
            self.assertTrue(torch.equal(loaded.parity_labels, sd.parity_labels))
            self.assertIsNone(cache.lookup(sd.params.replace(cutoff=21)))
            self.assertEqual(len(cache.entries()), 1)
            self.assertEqual(cache.stat()["n_entries"], 1)

            with open(path, "r+b") as f:
                f.seek(8)
                f.write((99).to_bytes(4, "little"))
            with self.assertWarns(errors.CacheWarning):
                self.assertIsNone(cache.lookup(sd.params))

            cache.store(sd)
            with open(path, "r+b") as f:
                f.truncate(100)
            self.assertIsNone(cache.lookup(sd.params))
            self.assertEqual(cache.purge(), 1)
            self.assertEqual(cache.entries(), [])

    def test_decompose_through_cache(self):
        params = hilbert.ModelParams(eta=10.0, g=1.2, cutoff=20)
        with tempfile.TemporaryDirectory() as cache_dir:
            cache = spectra.SpectralCache(cache_dir)
            first = spectra.decompose(params, cache)
            self.assertTrue(os.path.exists(cache.path(params)))
            second = spectra.decompose(params, cache)
            self.assertTrue(torch.equal(first.eigenvectors, second.eigenvectors))

    def test_cache_from_env(self):
        with tempfile.TemporaryDirectory() as cache_dir:
            with mock.patch.dict(os.environ, {spectra.CACHE_ENV_VAR: cache_dir}):
                self.assertEqual(spectra.SpectralCache.from_env().cache_dir, cache_dir)
        with mock.patch.dict(os.environ, {}, clear=True):
            self.assertIsNone(spectra.SpectralCache.from_env())


class StatesTests(unittest.TestCase):
    """Tests for the analytic ground states and overlaps."""

    def setUp(self):
        cutoff = hilbert.auto_cutoff(ETA, G1)
        self.params = hilbert.ModelParams(eta=ETA, g=G1, cutoff=cutoff)

    def test_superradiant_parameters(self):
        sp = states.superradiant_parameters(G1, ETA)
        self.assertAlmostEqual(sp.alpha_sp, 6.71855, places=5)
        self.assertAlmostEqual(sp.s_sp, 0.0550194, delta=1e-5)
        self.assertAlmostEqual(sp.spin_up_coeff, math.sqrt(5 / 18), places=12)
        self.assertAlmostEqual(sp.spin_down_coeff, math.sqrt(13 / 18), places=12)
        norm = sp.spin_up_coeff ** 2 + sp.spin_down_coeff ** 2
        self.assertAlmostEqual(norm, 1.0, places=12)
        self.assertLess(states.superradiant_parameters(G1, ETA, -1).spin_up_coeff, 0)
        near_critical = states.superradiant_parameters(1 + 1e-9, ETA)
        self.assertLess(near_critical.alpha_sp, 1e-3)
        self.assertGreater(near_critical.s_sp, 4.0)
        with self.assertRaises(errors.ParameterError):
            states.superradiant_parameters(1.0, ETA)

    def test_vacuum_and_coherent_vectors(self):
        vacuum = states.coherent_squeezed_vector(0.0, 0.0, (0.0, 1.0), 10)
        self.assertEqual(vacuum.amplitudes[0].item(), 1.0)
        self.assertEqual(vacuum.amplitudes[1:].abs().max().item(), 0.0)

        coherent = states.coherent_squeezed_vector(2.0, 0.0, (0.0, 1.0), 40)
        expected = [
            math.exp(-2.0) * 2.0 ** n / math.sqrt(math.factorial(n)) for n in range(41)
        ]
        np.testing.assert_allclose(
            coherent.amplitudes[0::2].real.numpy(), expected, atol=1e-12
        )

        squeezed = states.coherent_squeezed_vector(0.0, 0.5, (0.0, 1.0), 60)
        self.assertEqual(squeezed.amplitudes[2::4].abs().max().item(), 0.0)

    def test_recurrence_matches_matrix_exponentials(self):
        alpha, s, cutoff, big = 1.0, 0.3, 40, 120
        a = np.diag(np.sqrt(np.arange(1, big + 1)), 1)
        vacuum = np.zeros(big + 1)
        vacuum[0] = 1.0
        displace = linalg.expm(alpha * (a.T - a))
        squeeze = linalg.expm(s / 2 * (a.T @ a.T - a @ a))
        exact = displace @ squeeze @ vacuum
        built = states.coherent_squeezed_vector(alpha, s, (0.0, 1.0), cutoff)
        np.testing.assert_allclose(
            built.amplitudes[0::2].real.numpy(), exact[: cutoff + 1], atol=1e-8
        )

    def test_cutoff_too_small(self):
        with self.assertRaises(errors.CutoffError):
            states.coherent_squeezed_vector(6.0, 0.0, (0.0, 1.0), 10)

    def test_analytic_ground_state_phases(self):
        normal = states.analytic_ground_state(self.params.replace(g=0.0, cutoff=5))
        self.assertAlmostEqual(normal.amplitudes[0].real.item(), 1.0, places=12)
        with self.assertRaises(errors.ParameterError):
            states.analytic_ground_state(self.params.replace(g=1.0))
        with self.assertRaises(errors.ParameterError):
            states.analytic_ground_state(self.params, phase="normal")

    def test_closed_form_expectations(self):
        psi = states.analytic_ground_state(self.params)
        sigma_x = hilbert.assemble_operator("sigma_x", self.params)
        x = hilbert.assemble_operator("x", self.params)
        self.assertAlmostEqual(
            states.expectation(psi, sigma_x), math.sqrt(1 - G1 ** -4), delta=1e-6
        )
        self.assertAlmostEqual(
            states.expectation(psi, x), math.sqrt((G1 ** 2 - G1 ** -2) / 2), delta=1e-6
        )

    def test_fidelity_with_exact_doublet(self):
        psi = states.analytic_ground_state(self.params)
        exact = spectra.symmetric_doublet(_decompose(ETA, G1), 1)
        self.assertGreater(abs(states.overlap(exact, psi)) ** 2, 0.98)

    def test_parity_maps_branches(self):
        plus = states.analytic_ground_state(self.params, 1)
        minus = states.analytic_ground_state(self.params, -1)
        parity = hilbert.assemble_operator("parity", self.params).to_complex()
        flipped = states.QuantumState(parity @ plus.amplitudes)
        self.assertGreater(abs(states.overlap(minus, flipped)) ** 2, 1 - 1e-10)
        self.assertLess(abs(states.analytic_branch_overlap(G1, ETA)), 1e-30)
        self.assertLess(abs(states.overlap(minus, plus)), 1e-12)

    def test_overlap_against_gaussian_closed_form(self):
        psi_a = states.analytic_ground_state(self.params)
        psi_b = states.analytic_ground_state(self.params.replace(g=1.2))
        a = states.superradiant_parameters(G1, ETA)
        b = states.superradiant_parameters(1.2, ETA)
        spin = a.spin_up_coeff * b.spin_up_coeff + a.spin_down_coeff * b.spin_down_coeff
        gaussian = states.squeezed_coherent_overlap(a.alpha, a.s_sp, b.alpha, b.s_sp)
        expected = gaussian * spin
        self.assertAlmostEqual(states.overlap(psi_a, psi_b).real, expected, delta=1e-6)

    def test_overlap_basics(self):
        psi = states.analytic_ground_state(self.params)
        self.assertAlmostEqual(states.overlap(psi, psi).real, 1.0, places=12)
        e0 = states.QuantumState(torch.eye(4, dtype=torch.float64)[0])
        e1 = states.QuantumState(torch.eye(4, dtype=torch.float64)[1])
        self.assertEqual(states.overlap(e0, e1), 0)
        with self.assertRaises(errors.ParameterError):
            states.overlap(e0, psi)
        with self.assertRaises(errors.ParameterError):
            states.QuantumState(torch.ones(4, dtype=torch.float64))


class QuenchTests(unittest.TestCase):
    """Tests for spectral propagation and long-time averages."""

    def test_critical_coupling(self):
        self.assertAlmostEqual(quench.critical_coupling(G1), 1.211538, places=6)
        self.assertAlmostEqual(quench.critical_coupling(4 / 3), 1.146667, places=6)
        self.assertAlmostEqual(quench.critical_coupling(1 + 1e-9), 1.0, places=6)
        for g1 in (1.1, 1.5, 2.0, 4.0):
            self.assertTrue(1 < quench.critical_coupling(g1) < g1)
        with self.assertRaises(errors.ParameterError):
            quench.critical_coupling(1.0)

    def test_analytic_quench_energy(self):
        leading = dict(include_squeezing=False)
        energy = functools.partial(
            quench.analytic_quench_energy, G1, eta=ETA, **leading
        )
        self.assertAlmostEqual(energy(G1), -67.3611, places=3)
        self.assertAlmostEqual(energy(0.0), 22.9167, places=3)
        self.assertAlmostEqual(energy(G2C), -50.0, places=6)
        normal = quench.analytic_quench_energy(0.5, 0.7, ETA)
        expected = -50.0 + math.sinh(states.normal_squeezing(0.5)) ** 2
        self.assertAlmostEqual(normal, expected, places=12)
        with self.assertRaises(errors.ParameterError):
            quench.analytic_quench_energy(1.0, 0.5, ETA)

    def test_numeric_quench_energy(self):
        analytic, numeric = quench.quench_energy(G1, 0.75, ETA)
        self.assertLess(abs(analytic - numeric), 2.0)

    def test_dynamical_phase(self):
        self.assertEqual(quench.dynamical_phase(G1, 1.4), "broken")
        self.assertEqual(quench.dynamical_phase(G1, 0.75), "symmetric")

    def test_time_series_validation(self):
        with self.assertRaises(errors.ParameterError):
            quench.TimeSeries([0.0, 1.0, 3.0], [0.0, 0.0, 0.0])
        with self.assertRaises(errors.ParameterError):
            quench.LongTimeWindow(5.0, 1.0)
        with self.assertRaises(errors.ParameterError):
            quench.LongTimeWindow(1.0, 5.0, 1)
        with self.assertRaises(errors.ParameterError):
            quench.QuenchSpec(G1, 1.0, ETA, initial_state_source="guess")

    def test_long_time_average(self):
        window = quench.LongTimeWindow(1.0, 2.0, 11)
        constant = quench.TimeSeries(window.times(), np.full(11, 0.3))
        mean, err = quench.long_time_average(constant, window)
        self.assertAlmostEqual(mean, 0.3, places=14)
        self.assertLess(err, 1e-15)

        n, period = 400, 2 * math.pi
        times = period + 10 * period * np.arange(n) / n
        cosine = quench.TimeSeries(times, np.cos(times))
        window = quench.LongTimeWindow(times[0], times[-1], n)
        mean, _ = quench.long_time_average(cosine, window)
        self.assertLess(abs(mean), 1e-3)

        with self.assertRaises(errors.ParameterError):
            quench.long_time_average(constant, quench.LongTimeWindow(1.0, 3.0))

    def test_zero_quench_is_stationary(self):
        spec = quench.QuenchSpec(G1, G1, ETA, initial_state_source="numeric-doublet")
        psi0 = quench.initial_state(spec)
        row = quench.quench_averages(spec)
        sigma_x = hilbert.assemble_operator("sigma_x", spec.final_params())
        expected = states.expectation(psi0, sigma_x)
        self.assertAlmostEqual(row.sx_mean, expected, delta=1e-9)
        self.assertLess(row.sx_err, 1e-9)

    def test_propagation_conserves_norm_and_energy(self):
        spec = quench.QuenchSpec(G1, 0.75, ETA)
        evolution = quench.QuantumEvolution(
            _decompose(ETA, 0.75), quench.initial_state(spec), np.linspace(0, 500, 101)
        )
        report = evolution.conservation()
        self.assertLess(report["max_norm_deviation"], 1e-10)
        self.assertLess(report["max_relative_energy_drift"], 1e-8)
        self.assertLess(evolution.tail_probability(), 1e-6)

    def test_propagate_expectations(self):
        spec = quench.QuenchSpec(G1, 1.4, ETA)
        params = spec.final_params()
        times = np.linspace(0, 500, 501)
        (sx,) = quench.propagate_expectations(
            _decompose(ETA, 1.4), quench.initial_state(spec),
            [hilbert.assemble_operator("sigma_x", params)], times,
        )
        self.assertEqual(sx.label, "sigma_x")
        self.assertGreater(sx.values.mean(), 0.3)

    def test_order_parameter_jump(self):
        rows = quench.sweep_order_parameters(G1, [0.75, 1.15, 1.3, 1.4], ETA, threads=2)
        for row in rows[:2]:
            self.assertLess(abs(row.sx_mean), quench.ZERO_BAND)
            self.assertLess(abs(row.x_mean), quench.ZERO_BAND)
            self.assertEqual(row.phase, "symmetric")
        for row in rows[2:]:
            self.assertGreater(abs(row.sx_mean), 0.3)
            self.assertGreater(abs(row.x_mean), 0.3)
            self.assertEqual(row.phase, "broken")

    def test_branch_symmetry(self):
        plus, minus = (
            quench.sweep_order_parameters(G1, [1.4], ETA, branch=branch)[0]
            for branch in (1, -1)
        )
        self.assertAlmostEqual(minus.sx_mean, -plus.sx_mean, delta=1e-10)
        self.assertAlmostEqual(minus.x_mean, -plus.x_mean, delta=1e-10)
        self.assertAlmostEqual(minus.sz_mean, plus.sz_mean, delta=1e-10)
        self.assertAlmostEqual(minus.n_mean, plus.n_mean, delta=1e-8)

    def test_finite_eta_scaling(self):
        g2 = quench.critical_coupling(4 / 3) - 0.1
        report = quench.finite_eta_scaling(4 / 3, g2, [ETA])
        self.assertEqual(len(report.rows), 1)
        self.assertIsNone(report.trend)
        self.assertLess(abs(report.rows[0][1]), quench.ZERO_BAND)
        self.assertEqual(quench._trend([0.1, 0.2, 0.3]), "saturating")
        self.assertEqual(quench._trend([0.3, 0.2]), "decaying")
        self.assertEqual(quench._trend([0.1, 0.3, 0.2]), "mixed")

    def test_auto_cutoff_grows_until_tail_is_small(self):
        spec = quench.QuenchSpec(G1, 1.4, 10.0)
        times = np.linspace(0.0, 5.0, 6)
        start = spec.resolved_cutoff
        expected = start
        for _ in range(quench.AUTO_CUTOFF_ATTEMPTS):
            expected = math.ceil(quench.AUTO_CUTOFF_GROWTH * expected)
        with mock.patch.object(diagnostics, "TAIL_THRESHOLD", -1.0):
            grown, _, _ = quench.evolve_with_auto_cutoff(spec, times)
            fixed = quench.QuenchSpec(G1, 1.4, 10.0, cutoff=start)
            same, _, _ = quench.evolve_with_auto_cutoff(fixed, times)
        self.assertEqual(grown.cutoff, expected)
        self.assertEqual(same.cutoff, start)
        row = quench.quench_averages(spec, quench.LongTimeWindow(1.0, 5.0, 5))
        self.assertEqual(row.cutoff, start)


class ReferenceSweepTests(unittest.TestCase):
    """The default order-parameter sweep g2 = 0.5, 0.55, ..., 1.6 at g1 = 1.5."""

    @classmethod
    def setUpClass(cls):
        cls.rows = quench.sweep_order_parameters(
            G1, quench.DEFAULT_G2_LIST, ETA, threads=2
        )

    def test_order_parameter_over_grid(self):
        self.assertEqual([row.g2 for row in self.rows], quench.DEFAULT_G2_LIST)
        for row in self.rows:
            if row.g2 <= 1.15:
                self.assertLess(abs(row.sx_mean), quench.ZERO_BAND, row.g2)
            elif row.g2 >= 1.3:
                self.assertGreater(abs(row.sx_mean), 0.3, row.g2)

    def test_tail_and_conservation(self):
        for row in self.rows:
            self.assertLessEqual(
                row.tail_probability, diagnostics.TAIL_THRESHOLD, row.g2
            )
            self.assertLess(row.max_norm_deviation, 1e-10, row.g2)
            self.assertLess(row.max_relative_energy_drift, 1e-8, row.g2)

    def test_doubled_cutoff(self):
        for row in self.rows:
            spec = quench.QuenchSpec(G1, row.g2, ETA, cutoff=2 * row.cutoff)
            doubled = quench.quench_averages(spec)
            self.assertLess(abs(doubled.sx_mean - row.sx_mean), 1e-4, row.g2)


class LoschmidtTests(unittest.TestCase):
    """Tests for echoes, kinks and exponent fits."""

    @classmethod
    def setUpClass(cls):
        times = quench.uniform_times(2 * math.pi, 0.005)
        cls.rate_g2zero = loschmidt.gaussian_echo_g2zero(G1, ETA, times)

    def test_analytic_rate(self):
        times = np.array([0.0, math.pi / 2])
        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, times)
        self.assertEqual(analytic.r_infinity[0], 0.0)
        self.assertAlmostEqual(analytic.r_infinity[1], 0.902778, places=6)
        self.assertAlmostEqual(analytic.r_finite_eta[1], 0.895846, places=6)
        with self.assertRaises(errors.ParameterError):
            loschmidt.analytic_rate_g2zero(1.0, ETA, times)

    def test_analytic_slope_jump(self):
        times = quench.uniform_times(math.pi, 0.001)
        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, times)
        slope = loschmidt.rate_slope(quench.TimeSeries(times, analytic.r_infinity))
        before = np.interp(math.pi / 2 - 0.01, times, slope.values)
        after = np.interp(math.pi / 2 + 0.01, times, slope.values)
        self.assertAlmostEqual(before - after, G1 ** 2 - G1 ** -2, delta=1e-3)

    def test_rate_slope(self):
        times = np.linspace(0, 1, 11)
        slope = loschmidt.rate_slope(quench.TimeSeries(times, 0.7 * times))
        np.testing.assert_allclose(slope.values, 0.7, atol=1e-12)
        with self.assertRaises(errors.ParameterError):
            loschmidt.rate_slope(quench.TimeSeries(times[:2], times[:2]))

    def test_kinks_of_analytic_rate(self):
        times = quench.uniform_times(2 * math.pi, 0.005)
        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, times)
        rs = loschmidt.RateSeries(
            times, -ETA * analytic.f_plus, -ETA * analytic.f_minus, ETA
        )
        report = loschmidt.detect_kinks(rs)
        self.assertEqual(len(report.critical_times), 2)
        for t_c, expected in zip(report.critical_times, (math.pi / 2, 3 * math.pi / 2)):
            self.assertAlmostEqual(t_c, expected, delta=0.01)
        for left, right in zip(report.left_slopes, report.right_slopes):
            self.assertGreater(abs(left - right), report.detection_threshold)
        self.assertEqual(len(report.branch_crossings), 2)

    def test_smooth_inputs_have_no_kinks(self):
        times = quench.uniform_times(4.0, 0.005)
        parabola = 0.1 * (times - 2.0) ** 2
        rs = loschmidt.RateSeries(times, -ETA * parabola, -ETA * parabola - 50.0, ETA)
        self.assertEqual(loschmidt.detect_kinks(rs).critical_times, [])
        periodic = 0.1 * (1 - np.cos(times))
        rs = loschmidt.RateSeries(times, -ETA * periodic, -ETA * periodic - 50.0, ETA)
        self.assertEqual(loschmidt.detect_kinks(rs).critical_times, [])

    def test_exponent_of_analytic_rate(self):
        times = quench.uniform_times(math.pi, 0.005)
        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, times)
        fit = loschmidt.critical_exponent_fit(
            quench.TimeSeries(times, analytic.r_infinity), math.pi / 2
        )
        self.assertAlmostEqual(fit.beta, 1.0, delta=0.02)
        self.assertAlmostEqual(fit.prefactor / R_TC_INFINITY, 1.0, delta=0.05)

    def test_exponent_of_synthetic_power_law(self):
        times = quench.uniform_times(2.0, 0.005)
        series = quench.TimeSeries(times, 1.0 - np.abs(times - 1.0) ** 1.5)
        fit = loschmidt.critical_exponent_fit(series, 1.0, r_critical=1.0)
        self.assertAlmostEqual(fit.beta, 1.5, delta=1e-6)
        self.assertAlmostEqual(fit.prefactor, 1.0, delta=1e-6)
        with self.assertRaises(errors.FitError):
            loschmidt.critical_exponent_fit(series, 1.0, r_critical=0.5)

    def test_echo_at_time_zero(self):
        rs = self.rate_g2zero
        self.assertLess(abs(rs.rate[0]), 1e-10)
        self.assertTrue(np.all(rs.rate >= -math.log(2) / ETA - 1e-12))

    def test_log_space_identity(self):
        rs = self.rate_g2zero
        direct = -np.log(np.exp(rs.log_p_plus) + np.exp(rs.log_p_minus)) / ETA
        np.testing.assert_allclose(rs.rate, direct, atol=1e-12)

    def test_gaussian_echo_at_time_zero(self):
        rs = loschmidt.gaussian_echo_g2zero(G1, ETA, np.array([0.0, 0.1]))
        self.assertAlmostEqual(rs.log_p_plus[0], 0.0, places=12)
        overlap = states.analytic_branch_overlap(G1, ETA)
        self.assertAlmostEqual(rs.log_p_minus[0], 2 * math.log(abs(overlap)), places=8)
        self.assertTrue(rs.resolved.all())
        minus = loschmidt.gaussian_echo_g2zero(G1, ETA, rs.times, branch=-1)
        np.testing.assert_allclose(minus.rate, rs.rate, atol=1e-12)

    def test_gaussian_echo_matches_spectral_sum(self):
        eta = 25.0
        times = quench.uniform_times(2 * math.pi, 0.01)
        with warnings.catch_warnings():
            warnings.simplefilter("error", errors.ConvergenceWarning)
            spectral = _numeric_rate(eta, 0.0, dt=0.01)
        self.assertTrue(spectral.resolved.all())
        exact = loschmidt.gaussian_echo_g2zero(G1, eta, times)
        np.testing.assert_allclose(spectral.rate, exact.rate, atol=1e-6)

    def test_spectral_echo_below_rounding_floor_warns(self):
        times = quench.uniform_times(2 * math.pi, 0.01)
        with self.assertWarns(errors.ConvergenceWarning):
            spectral = _numeric_rate(ETA, 0.0, dt=0.01)
        exact = loschmidt.gaussian_echo_g2zero(G1, ETA, times)
        resolved = spectral.resolved
        self.assertFalse(resolved[np.argmin(np.abs(times - math.pi / 2))])
        self.assertTrue(resolved[0])
        # Only rates far above the bulk of the curve fall below the floor.
        self.assertGreater(exact.rate[~resolved].min(), 0.5)
        np.testing.assert_allclose(
            spectral.rate[resolved], exact.rate[resolved], atol=1e-3
        )

    def test_branch_swap_invariance(self):
        cutoff = hilbert.auto_cutoff(ETA, G1)
        params = hilbert.ModelParams(eta=ETA, g=G1, cutoff=cutoff)
        plus = states.analytic_ground_state(params, 1)
        minus = states.analytic_ground_state(params, -1)
        times = np.linspace(0, 3, 301)
        sd = _decompose(ETA, 0.75)
        forward = loschmidt.loschmidt_rate(sd, plus, minus, times)
        swapped = loschmidt.loschmidt_rate(sd, minus, plus, times)
        np.testing.assert_allclose(forward.rate, swapped.rate, atol=1e-10)

    def test_periodicity_at_zero_coupling(self):
        cutoff = hilbert.auto_cutoff(ETA, G1)
        params = hilbert.ModelParams(eta=ETA, g=G1, cutoff=cutoff)
        plus = states.analytic_ground_state(params, 1)
        minus = states.analytic_ground_state(params, -1)
        times = np.linspace(0, 1, 11)
        sd = _decompose(ETA, 0.0)
        first = loschmidt.loschmidt_rate(sd, plus, minus, times)
        second = loschmidt.loschmidt_rate(sd, plus, minus, times + 2 * math.pi)
        # E_n t loses ~ eps |E_n| 2 pi of phase per term, about 1e-13 here.
        np.testing.assert_allclose(first.rate, second.rate, atol=1e-6)

    def test_numeric_rate_matches_analytic(self):
        rs = self.rate_g2zero
        spin_resolved = loschmidt.spin_resolved_rate_g2zero(G1, ETA, rs.times)
        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, rs.times)
        self.assertLess(np.max(np.abs(rs.rate - spin_resolved.rate)), 0.02)
        self.assertLess(np.max(np.abs(rs.rate - analytic.r_finite_eta)), 0.03)

    def test_smooth_region(self):
        times = quench.uniform_times(2 * math.pi, 0.005)
        parabola = 0.1 * (times - math.pi) ** 2
        rs = loschmidt.RateSeries(times, -ETA * parabola, -ETA * parabola - 50.0, ETA)
        smooth = loschmidt.smooth_region(rs)
        interior = smooth[200:-200]
        self.assertTrue(interior.all())
        self.assertFalse(smooth[:3].any())

        analytic = loschmidt.analytic_rate_g2zero(G1, ETA, times)
        rs = loschmidt.RateSeries(
            times, -ETA * analytic.f_plus, -ETA * analytic.f_minus, ETA
        )
        smooth = loschmidt.smooth_region(rs)
        # Second differences are indexed from times[1].
        kink = np.argmin(np.abs(times[1:-1] - math.pi / 2))
        self.assertFalse(smooth[kink])
        self.assertTrue(smooth[np.argmin(np.abs(times[1:-1] - math.pi))])

    def test_kinks_at_zero_coupling(self):
        rs = self.rate_g2zero
        report = loschmidt.detect_kinks(rs)
        self.assertEqual(len(report.critical_times), 2)
        for t_c, expected in zip(report.critical_times, (math.pi / 2, 3 * math.pi / 2)):
            self.assertAlmostEqual(t_c, expected, delta=0.01)
        expected_rate = R_TC_INFINITY - math.log(2) / ETA
        self.assertAlmostEqual(report.rate_at_kinks[0], expected_rate, delta=0.02)
        crossings = report.branch_crossings
        self.assertTrue(any(abs(t - math.pi / 2) < 0.01 for t in crossings))

        lo = 3 * report.smoothing
        fit = loschmidt.critical_exponent_fit(
            rs.smoothed(report.smoothing), report.critical_times[0], (lo, 0.3)
        )
        self.assertTrue(0.9 <= fit.beta <= 1.1)
        self.assertAlmostEqual(fit.prefactor / R_TC_INFINITY, 1.0, delta=0.1)

    def test_rate_at_kink_approaches_finite_eta_limit(self):
        # At the branch crossing the two spin sectors add up to 2 (u^4 + d^4) =
        # 1 + g1^-4 instead of 2; squeezing lowers r(t_c) by a further ~0.14 / eta.
        for eta in (25.0, 50.0, ETA):
            rs = self.rate_g2zero if eta == ETA else _numeric_rate(eta, 0.0)
            report = loschmidt.detect_kinks(rs)
            self.assertAlmostEqual(report.critical_times[0], math.pi / 2, delta=0.02)
            spin_sectors = R_TC_INFINITY - math.log(1 + G1 ** -4) / eta
            self.assertAlmostEqual(report.rate_at_kinks[0], spin_sectors, delta=0.01)
            if eta >= 50:
                self.assertAlmostEqual(
                    report.rate_at_kinks[0],
                    R_TC_INFINITY - math.log(2) / eta,
                    delta=0.01,
                )

    def test_kink_after_quench_into_normal_region(self):
        report = loschmidt.detect_kinks(_numeric_rate(ETA, 0.75))
        self.assertTrue(report.critical_times)
        self.assertAlmostEqual(report.critical_times[0], 1.85, delta=0.05)

    def test_smooth_rate_above_critical_coupling(self):
        rs = _numeric_rate(ETA, 1.4)
        self.assertEqual(loschmidt.detect_kinks(rs).critical_times, [])

    def test_kinks_sharpen_with_eta(self):
        peaks = []
        for eta in (25.0, 50.0, 75.0, ETA):
            rs = _numeric_rate(eta, 0.75, t_max=3.0)
            filtered = rs.smoothed().values
            curvature = np.abs(np.diff(filtered, 2)) / rs.dt ** 2
            mask = (rs.times[1:-1] >= 1.7) & (rs.times[1:-1] <= 2.0)
            peaks.append(curvature[mask].max())
        self.assertTrue(all(a < b for a, b in zip(peaks, peaks[1:])), peaks)


class SemiclassicsTests(unittest.TestCase):
    """Tests for the mean-field integrator and ensembles."""

    def test_initial_condition(self):
        state = semiclassics.initial_condition(G1)
        self.assertAlmostEqual(state.x, 0.950146, places=6)
        self.assertAlmostEqual(state.sx, math.sqrt(1 - G1 ** -4), places=14)
        self.assertAlmostEqual(state.sz, -4 / 9, places=14)
        self.assertAlmostEqual(state.spin_norm, 1.0, places=14)
        minus = semiclassics.initial_condition(G1, -1)
        self.assertEqual((minus.x, minus.sx, minus.sz), (-state.x, -state.sx, state.sz))
        with self.assertRaises(errors.ParameterError):
            semiclassics.initial_condition(1.0)

    def test_classical_energy(self):
        origin = semiclassics.SemiclassicalState(0.0, 0.0, 0.0, 0.0, -1.0)
        self.assertEqual(semiclassics.classical_energy(origin, 1.3), -0.5)
        state = semiclassics.initial_condition(G1)
        energy = semiclassics.classical_energy(state, G2C)
        self.assertAlmostEqual(energy, -0.5, delta=1e-9)

    def test_decoupled_oscillator(self):
        start = semiclassics.SemiclassicalState(1.0, 0.0, 0.0, 0.0, -1.0)
        traj = semiclassics.integrate(start, 0.0, 10.0, 0.005)
        np.testing.assert_allclose(
            traj.states[:, semiclassics.X], np.cos(traj.times), atol=1e-8
        )

    def test_time_reversal(self):
        start = semiclassics.initial_condition(G1)
        forward = semiclassics.integrate(start, 1.3, 50.0, 0.005)
        backward = semiclassics.integrate(
            forward.final_state(), 1.3, 50.0, 0.005, backward=True
        )
        np.testing.assert_allclose(backward.states[-1], start.as_array(), atol=1e-6)

    def test_separatrix_confinement(self):
        start = semiclassics.initial_condition(G1)
        # Exactly at g2c the orbit is homoclinic, so integration error decides its fate.
        couplings = [G2C + 1e-3, G2C + 0.05, G2C - 1e-3, G2C - 0.05]
        trajs = semiclassics.integrate_batch([start] * 4, couplings, 1000.0, 0.005)
        self.assertIsNone(semiclassics.sign_flip_time(trajs[0]))
        self.assertIsNone(semiclassics.sign_flip_time(trajs[1]))
        self.assertIsNotNone(semiclassics.sign_flip_time(trajs[2]))
        self.assertIsNotNone(semiclassics.sign_flip_time(trajs[3]))
        for traj in trajs:
            self.assertLess(traj.norm_drift, 1e-8)
            self.assertLess(traj.energy_drift, 1e-8)

    def test_separatrix_bisection(self):
        bracket = semiclassics.separatrix_bisection(G1, dt=0.01, tolerance=0.01)
        self.assertLess(bracket.high - bracket.low, 0.01)
        self.assertTrue(bracket.low - 0.01 <= G2C <= bracket.high + 0.01)

    def test_stroboscopic_sections(self):
        start = semiclassics.initial_condition(G1)
        above, below = semiclassics.integrate_batch(
            [start] * 2, [1.4, 1.0], 200.0, 0.01
        )
        island = semiclassics.stroboscopic_section(above, 1000, 200.0)
        self.assertTrue(np.all(island.sx > 0))
        self.assertLess(island.constraint_drift, 1e-6)
        merged = semiclassics.stroboscopic_section(below, 1000, 200.0)
        self.assertTrue(np.any(merged.sx > 0) and np.any(merged.sx < 0))
        with self.assertRaises(errors.ParameterError):
            semiclassics.stroboscopic_section(above, 10, 300.0)

    def test_sign_flip_time(self):
        times = np.linspace(0, 1, 11)
        constant = np.tile([0.0, 0.0, 0.5, 0.0, 0.0], (11, 1))
        traj = semiclassics.Trajectory(times, constant, 1.0)
        self.assertIsNone(semiclassics.sign_flip_time(traj))
        crossing = constant.copy()
        crossing[:, semiclassics.SX] = 0.35 - times
        traj = semiclassics.Trajectory(times, crossing, 1.0)
        self.assertAlmostEqual(semiclassics.sign_flip_time(traj), 0.35, places=12)

    def test_single_trajectory_ensemble(self):
        window = quench.LongTimeWindow(10.0, 20.0, 11)
        results = [
            semiclassics.ensemble_average(
                G1, 1.3, semiclassics.EnsembleSpec(n_samples=1, rng_seed=seed), window
            )
            for seed in (0, 5)
        ]
        self.assertEqual(results[0].sx_bar, results[1].sx_bar)
        self.assertEqual(results[0].sx_err, 0.0)

    def test_ensemble_is_reproducible_across_threads(self):
        spec = semiclassics.EnsembleSpec(n_samples=130, rng_seed=7)
        window = quench.LongTimeWindow(1.0, 5.0, 5)
        serial = semiclassics.ensemble_average(G1, 1.3, spec, window, threads=1)
        parallel = semiclassics.ensemble_average(G1, 1.3, spec, window, threads=3)
        self.assertEqual(serial, parallel)

    def test_zero_quench_ensemble(self):
        spec = semiclassics.EnsembleSpec(n_samples=64, rng_seed=1)
        window = quench.LongTimeWindow(10.0, 50.0, 41)
        result = semiclassics.ensemble_average(G1, G1, spec, window)
        self.assertAlmostEqual(result.sx_bar, math.sqrt(1 - G1 ** -4), delta=0.02)

    def test_ensemble_order_parameter_jump(self):
        spec = semiclassics.EnsembleSpec(n_samples=64, rng_seed=3)
        broken = semiclassics.ensemble_average(G1, 1.4, spec)
        symmetric = semiclassics.ensemble_average(G1, 1.0, spec)
        self.assertGreater(abs(broken.sx_bar), 0.3)
        self.assertLess(abs(symmetric.sx_bar), 0.05)

    def test_ensemble_spec_validation(self):
        with self.assertRaises(errors.ParameterError):
            semiclassics.EnsembleSpec(n_samples=0)
        with self.assertRaises(errors.ParameterError):
            semiclassics.EnsembleSpec(sampling="husimi")


class DiagnosticsTests(unittest.TestCase):
    """Tests for the numerical health checks."""

    def test_tail_probability(self):
        top = torch.zeros(22, dtype=torch.float64)
        top[-1] = 1.0
        tail = diagnostics.fock_tail_probability(states.QuantumState(top))
        self.assertEqual(tail, 1.0)
        bottom = torch.zeros(22, dtype=torch.float64)
        bottom[0] = 1.0
        tail = diagnostics.fock_tail_probability(states.QuantumState(bottom))
        self.assertEqual(tail, 0.0)

    def test_check_cutoff(self):
        self.assertTrue(diagnostics.check_cutoff(1e-9, 10))
        with self.assertWarns(errors.ConvergenceWarning):
            self.assertFalse(diagnostics.check_cutoff(1e-3, 10))
        with self.assertRaises(errors.CutoffError):
            diagnostics.check_cutoff(1e-3, 10, strict=True)

    def test_cutoff_convergence(self):
        report = diagnostics.cutoff_convergence(lambda n: 1.0 / n, 10)
        self.assertEqual(report["comparison_cutoff"], 20)
        self.assertAlmostEqual(report["delta"], 0.05, places=12)


class RunnerTests(unittest.TestCase):
    """Tests for run records."""

    def test_csv_and_meta(self):
        with tempfile.TemporaryDirectory() as log_dir:
            run = runner.Runner({"mode": "test"}, log_dir, seed=3, gnuplot_script=True)
            with run:
                run.write_csv("values.csv", ("a", "b"), [(0.1, 2)], plot=("a", ["b"]))
                run.record_convergence("delta", float("nan"))
            with open(os.path.join(log_dir, "values.csv"), newline="") as f:
                self.assertEqual(f.read(), "a,b\r\n0.10000000000000001,2\r\n")
            self.assertTrue(os.path.exists(os.path.join(log_dir, "values.gp")))
            with open(os.path.join(log_dir, "meta.json")) as f:
                meta = json.load(f)
            self.assertEqual(meta["seed"], 3)
            self.assertEqual(meta["config"], {"mode": "test"})
            self.assertIsNone(meta["convergence"]["delta"])

    def test_parallel_map_preserves_order(self):
        squares = runner.parallel_map(lambda x: x * x, range(10), threads=4)
        self.assertEqual(squares, [x * x for x in range(10)])


class CliTests(unittest.TestCase):
    """Tests for the command-line front end."""

    def _main(self, *argv):
        with mock.patch("sys.stderr", io.StringIO()):
            with mock.patch("sys.stdout", io.StringIO()):
                return cli.main(list(argv))

    def test_usage_errors(self):
        with tempfile.TemporaryDirectory() as out:
            self.assertEqual(self._main(), 2)
            self.assertEqual(self._main("rate", "--g1", "1.5", "--out", out), 2)
            code = self._main("quench", "--g1", "1.5", "--eta", "-1", "--g2", "1.0")
            self.assertEqual(code, 2)
            config = os.path.join(out, "config.json")
            with open(config, "w") as f:
                json.dump({"g1_mn": 1.1}, f)
            code = self._main("phase-diagram", "--config", config, "--out", out)
            self.assertEqual(code, 2)

    def test_config_value_types(self):
        with tempfile.TemporaryDirectory() as out:
            config = os.path.join(out, "config.json")
            for bad in ({"g1": "abc"}, {"steps": 2.5}, {"g2_list": 1.0},
                        {"gnuplot_script": "yes"}, {"eta": True}):
                with open(config, "w") as f:
                    json.dump(bad, f)
                with self.assertRaises(errors.ConfigError):
                    cli.load_config(config)
                code = self._main("phase-diagram", "--config", config, "--out", out)
                self.assertEqual(code, 2, bad)
            with open(config, "w") as f:
                json.dump({"steps": 3.0, "g1_min": 2, "g2_list": [1, 1.5]}, f)
            values = cli.load_config(config)
            self.assertEqual(values, {"steps": 3, "g1_min": 2.0, "g2_list": [1.0, 1.5]})
            self.assertIsInstance(values["steps"], int)

    def test_replay_of_library_run(self):
        with tempfile.TemporaryDirectory() as out:
            first = os.path.join(out, "first")
            loschmidt.reproduce(
                g1=1.5, g2=0.3, eta=10.0, t_max=2.0, dt=0.01, log_dir=first
            )
            meta = os.path.join(first, "meta.json")
            values = cli.load_config(meta)
            self.assertEqual(values["mode"], "rate")
            self.assertEqual(values["g1"], 1.5)
            self.assertEqual(values["eta"], 10.0)
            self.assertEqual(values["tmax"], 2.0)
            self.assertEqual(values["initial_state"], "analytic")
            self.assertNotIn("spec", values)

            second = os.path.join(out, "second")
            self.assertEqual(self._main("rate", "--config", meta, "--out", second), 0)
            with open(os.path.join(first, "rate.csv")) as f, open(
                os.path.join(second, "rate.csv")
            ) as g:
                self.assertEqual(f.read(), g.read())

    def test_phase_diagram_and_replay(self):
        with tempfile.TemporaryDirectory() as out:
            config = os.path.join(out, "config.json")
            with open(config, "w") as f:
                json.dump({"g1_min": 1.1, "steps": 5}, f)
            first = os.path.join(out, "first")
            code = self._main(
                "phase-diagram", "--config", config, "--steps", "3", "--out", first
            )
            self.assertEqual(code, 0)
            with open(os.path.join(first, "critical_line.csv"), newline="") as f:
                lines = f.read().split("\r\n")
            self.assertEqual(lines[0], "g1,g2c")
            self.assertEqual(len([line for line in lines if line]), 4)
            self.assertEqual(lines[1].split(",")[0], "1.1000000000000001")

            second = os.path.join(out, "second")
            meta = os.path.join(first, "meta.json")
            code = self._main("phase-diagram", "--config", meta, "--out", second)
            self.assertEqual(code, 0)
            with open(os.path.join(first, "critical_line.csv")) as f, open(
                os.path.join(second, "critical_line.csv")
            ) as g:
                self.assertEqual(f.read(), g.read())

    def test_quench_is_independent_of_threads(self):
        with tempfile.TemporaryDirectory() as out:
            outputs = []
            for threads in ("1", "2"):
                run_dir = os.path.join(out, threads)
                code = self._main(
                    "quench", "--g1", "1.5", "--g2-list", "0.8", "1.4", "--eta", "10",
                    "--window-start", "1", "--window-end", "5", "--window-samples", "5",
                    "--threads", threads, "--out", run_dir,
                )
                self.assertEqual(code, 0)
                with open(os.path.join(run_dir, "sweep.csv")) as f:
                    outputs.append(f.read())
            self.assertEqual(outputs[0], outputs[1])

    def test_cache_admin(self):
        with tempfile.TemporaryDirectory() as out:
            cache_dir = os.path.join(out, "cache")
            listing = io.StringIO()
            self.assertEqual(cli.cache_admin("list", cache_dir, out=listing), [])
            self.assertEqual(listing.getvalue(), "")
            code = self._main(
                "quench",
                *("--g1", "1.5", "--g2", "1.4", "--eta", "10"),
                *("--window-start", "1", "--window-end", "5", "--window-samples", "5"),
                *("--cache-dir", cache_dir, "--out", out),
            )
            self.assertEqual(code, 0)
            entries = cli.cache_admin("list", cache_dir, out=io.StringIO())
            self.assertGreaterEqual(len(entries), 1)
            self.assertEqual(self._main("cache", "purge", "--cache-dir", cache_dir), 0)
            self.assertEqual(cli.cache_admin("list", cache_dir, out=io.StringIO()), [])
            with mock.patch.dict(os.environ, {}, clear=True):
                self.assertEqual(self._main("cache", "stat"), 2)


class IntegrationTests(unittest.TestCase):
    """Runs every reproduce() with small parameters."""

    def _files(self, log_dir):
        return set(os.listdir(log_dir))

    def test_quench(self):
        with tempfile.TemporaryDirectory() as log_dir:
            rows = quench.reproduce(
                g1=1.5,
                g2_list=[1.4],
                eta=10.0,
                window=quench.LongTimeWindow(1.0, 5.0, 5),
                log_dir=log_dir,
                convergence_check=True,
                gnuplot_script=True,
            )
            self.assertEqual(len(rows), 1)
            self.assertTrue(
                {"sweep.csv", "series.csv", "quench.json", "meta.json", "sweep.gp"}
                <= self._files(log_dir)
            )
            with open(os.path.join(log_dir, "meta.json")) as f:
                self.assertIn("doubled_cutoff", json.load(f)["convergence"])

    def test_scaling(self):
        with tempfile.TemporaryDirectory() as log_dir:
            report = quench.reproduce_scaling(
                g1=1.5, g2=1.4, eta_list=(5.0, 10.0),
                window=quench.LongTimeWindow(1.0, 5.0, 5), log_dir=log_dir,
            )
            self.assertEqual(len(report.rows), 2)
            self.assertIn(report.trend, ("saturating", "decaying", "mixed"))
            expected = {"scaling.csv", "scaling.json", "meta.json"}
            self.assertTrue(expected <= self._files(log_dir))

    def test_phase_diagram(self):
        with tempfile.TemporaryDirectory() as log_dir:
            rows = quench.reproduce_phase_diagram(steps=5, log_dir=log_dir)
            self.assertEqual(len(rows), 5)
            self.assertIn("critical_line.csv", self._files(log_dir))

    def test_rate(self):
        with tempfile.TemporaryDirectory() as log_dir:
            rs, report, _ = loschmidt.reproduce(
                g1=1.5, g2=0.0, eta=20.0, t_max=3.0, dt=0.01, log_dir=log_dir
            )
            self.assertEqual(len(rs.times), 301)
            expected = {"rate.csv", "kinks.json", "analytic.csv", "meta.json"}
            self.assertTrue(expected <= self._files(log_dir))
            with open(os.path.join(log_dir, "rate.csv")) as f:
                header = f.readline().strip()
            self.assertEqual(header, "t,log_p_plus,log_p_minus,rate,slope")
            with open(os.path.join(log_dir, "meta.json")) as f:
                self.assertEqual(json.load(f)["convergence"]["echo"], "gaussian")

    def test_semiclassical(self):
        with tempfile.TemporaryDirectory() as log_dir:
            traj, section, results = semiclassics.reproduce(
                g1=1.5, t_max=10.0, dt=0.01, n_points=50, g2_list=[1.4], n_samples=4,
                window=quench.LongTimeWindow(1.0, 5.0, 5), log_dir=log_dir,
            )
            self.assertEqual(len(section.times), 50)
            self.assertEqual(len(results), 1)
            self.assertTrue(
                {"trajectory.csv", "sections.csv", "trajectory.json", "sweep.csv",
                 "ensemble.json", "meta.json"} <= self._files(log_dir)
            )


if __name__ == "__main__":
    warnings.simplefilter("default")
    unittest.main()
