"""fluxlab: free energy fluxes, generalized currents, and entropy transport
in maximal-entropy states.

Backends (exact conformal closed forms, thermodynamic-Bethe-ansatz models,
an exact-diagonalization spin chain) share one contract, a generic
finite-difference layer turns free energies and flux potentials into
averages, currents, and susceptibilities, and a check layer verifies the
structural identities relating them. A finite-volume solver propagates the
resulting Euler-scale equations in inhomogeneous external fields.
"""

from .errors import (CFLViolation, CheckFailure, ConfigError, DimensionMismatch,
                     DomainExceeded, DrivingUnbounded, FluxlabError, IllConditioned,
                     InsufficientSamples, InversionFailure, InvolutionFailure,
                     MemoryBudget, NoConvergence, NonFinite, RingInconsistency,
                     SingularSystem, TimelikeViolation, UnknownChargeIndex)
from .potentials import PotentialVector
from .core import (CheckReport, ThermoBackend, ThermoReport, assemble_report,
                   b_matrix, charge_averages, check_b_symmetry, check_c_psd,
                   check_ekms, check_g1_equals_f, check_identities,
                   covariance_matrix, currents_from_flux, ekms_constant,
                   entropy_currents, entropy_density)

__version__ = "0.1.0"
