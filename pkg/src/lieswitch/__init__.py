"""Stability of switched linear systems through the Levi-Malcev decomposition
of the generated matrix Lie algebra and the topological entropy of its
semi-simple flow."""

__version__ = "0.1.0"

from .entropy import (
    CompactSet,
    EntropyEstimate,
    LyapunovEstimate,
    entropy_estimate,
    flow_map,
    is_spanning,
    lyapunov_det_exponent,
    spanning_number,
    spanning_set,
)
from .lie_algebra import (
    GeneratorSet,
    LeviDecomposition,
    LieBasis,
    bracket,
    closure,
    derived_subalgebra,
    is_solvable,
    killing_form,
    levi_complement,
    levi_decomposition,
    radical,
    split_generators,
)
from .stability import (
    StabilityCertificate,
    Verdict,
    certify,
    gues_fit,
    radical_bound_check,
    spectral_abscissa,
)
from .switched_system import (
    PropagatorTrace,
    SwitchingSignal,
    evolve_factored,
    evolve_full,
    factorization_residual,
    random_signal,
    state_trajectory,
)
