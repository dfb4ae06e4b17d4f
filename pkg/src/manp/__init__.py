"""Structure-preserving solver for the 2D Maxwell-Ampere Nernst-Planck system.

Backward-Euler and BDF2 schemes with Scharfetter-Gummel fluxes on a periodic
staggered grid, exact Gauss-law and Faraday-law corrections, and a
diagnostics/convergence harness.
"""

from .grid import (
    CellField,
    CornerField,
    FaceField,
    GridSpec,
    curl_scaled,
    divergence,
    gradient,
    norm_inf,
    norm_l2,
)
from .model import (
    DiscreteProblem,
    ProblemSpec,
    SpeciesSpec,
    builtin_example,
    materialize,
    poisson_solve,
)
from .transport import bernoulli, compute_dg, compute_flux, euler_np_step, bdf2_np_step
from .ampere import faraday_correct, gauss_correct, ma_bdf2_update, ma_euler_update
from .diagnostics import (
    DiagnosticsRecord,
    ErrorReport,
    dt_star,
    error_vs_exact,
    faraday_residual,
    free_energy,
    gauss_residual,
    observed_orders,
)
from .runner import RunConfig, SimState, convergence_study, default_example_config, run, step

__version__ = "0.1.0"
