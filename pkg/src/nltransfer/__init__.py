"""Transfer matrices for energy-dependent nonlocal potentials in two dimensions.

Momentum-space discretization of the effective Hamiltonian H(x), its Dyson
series and evolution operator, the transfer matrix obtained as the truncated
limit of U(x+, x-), scattering amplitudes, and numerical certificates for the
norm and convergence inequalities that make the construction well defined.
"""

from .grid import (
    BlockOperator,
    GridFunction,
    InvalidArgument,
    MomentumGrid,
    StateVector,
    apply_varpi,
    build_grid,
    inner_product,
    operator_norm,
    phase_operator,
)
from .certificate import BoundCertificate
from .potential import NormProfile, PotentialModel, assemble_vhat, builtin_model, vhat_spectrum
from .evolution import (
    EvolutionResult,
    assemble_B,
    assemble_H,
    composition_check,
    decompose_domain,
    dyson_term,
    evolve,
    schrodinger_oracle,
)
from .scatter import (
    ScatteringResult,
    TransferMatrix,
    assemble_transfer,
    emit_cross_section,
    scatter_left,
    scatter_right,
    truncation_bounds,
)

__version__ = "0.1.0"
