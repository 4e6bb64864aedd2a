__version__ = "0.1.0"

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

__all__ = [
    "cli",
    "diagnostics",
    "errors",
    "hilbert",
    "loschmidt",
    "quench",
    "runner",
    "semiclassics",
    "spectra",
    "states",
]
