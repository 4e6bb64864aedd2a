"""Utilities for checking the numerical health of simulations."""

import math
import warnings

import numpy as np

from rabi_dpt import errors

TAIL_FRACTION = 0.05
TAIL_THRESHOLD = 1e-6


def tail_levels(cutoff, fraction=TAIL_FRACTION):
    """Returns the first Fock level of the top `fraction` of the truncated space."""
    n_top = max(1, math.ceil(fraction * (cutoff + 1)))
    return cutoff + 1 - n_top


def fock_tail_probability(state, fraction=TAIL_FRACTION):
    """Probability of `state` in the top `fraction` of the Fock levels."""
    distribution = state.fock_distribution()
    return distribution[tail_levels(state.cutoff, fraction) :].sum().item()


def check_cutoff(tail_probability, cutoff, threshold=TAIL_THRESHOLD, strict=False):
    """Warns (or raises if `strict`) when too much probability sits near the cutoff.

    Returns:
        True if the tail probability is within `threshold`.
    """
    if tail_probability <= threshold:
        return True
    message = (
        f"Probability {tail_probability:.3e} in the top {TAIL_FRACTION:.0%} of Fock "
        f"levels exceeds {threshold:.0e} at cutoff {cutoff}; increase the cutoff."
    )
    if strict:
        raise errors.CutoffError(message)
    warnings.warn(message, errors.ConvergenceWarning)
    return False


def conservation_report(norms, energies):
    """Summarizes norm and energy conservation along a propagation.

    Args:
        norms: Sequence of state norms.
        energies: Sequence of energy expectation values.
    Returns:
        A dict with the maximum norm deviation from 1 and the maximum relative
        energy drift with respect to the first sample.
    """
    norms, energies = np.asarray(norms), np.asarray(energies)
    scale = max(abs(energies[0]), 1e-12)
    drift = np.max(np.abs(energies - energies[0])) / scale
    return {
        "max_norm_deviation": float(np.max(np.abs(norms - 1))),
        "max_relative_energy_drift": float(drift),
    }


def cutoff_convergence(evaluate, cutoff, factor=2):
    """Re-evaluates a scalar at a larger cutoff and reports the change.

    Args:
        evaluate: A `fn(cutoff)->float`, e.g. a long-time average.
        cutoff: The production cutoff.
        factor: Multiplier of the comparison cutoff.
    Returns:
        A dict with both cutoffs, both values and their absolute difference.
    """
    larger = int(factor * cutoff)
    value, reference = evaluate(cutoff), evaluate(larger)
    return {
        "cutoff": cutoff,
        "comparison_cutoff": larger,
        "value": value,
        "comparison_value": reference,
        "delta": abs(value - reference),
    }
