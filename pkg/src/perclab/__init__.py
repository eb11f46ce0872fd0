"""Simulation and exact-enumeration lab for generalized oriented bond
percolation coupled to uniformly perturbed lattices."""

__version__ = "0.1.0"

from .coupling import (  # noqa: F401
    CoupledBondField,
    CoupledBondRealization,
    Embedding,
    coupled_bond_field,
    coupled_realization,
    coupled_survival,
    p_hat,
    verify_independence,
)
from .gobp import (  # noqa: F401
    BernoulliBondField,
    BracketError,
    CriticalSearchResult,
    EscalationBudgetError,
    LayerCounts,
    MartingaleStudy,
    OrientedBond,
    SurvivalEstimate,
    TimeSpacePoint,
    bisect_critical,
    bond,
    count_paths,
    grow_cluster,
    martingale_limit_study,
    normalized_total,
    normalized_totals_sweep,
    one_step_continuations,
    survival_probability,
)
from .lattice import (  # noqa: F401
    Box,
    OrientedPath,
    PerturbationField,
    ShiftedField,
    support_box,
    shift_map,
)
from .measures import (  # noqa: F401
    CylinderEvent,
    HypothesisError,
    MeasureEstimate,
    PathBoxSystem,
    check_measure_identity,
    check_path_identity,
    default_battery,
    enumerate_paths,
    estimate_measure,
    path_open_indicator,
    run_identity_battery,
)
from .stats import (  # noqa: F401
    RandomStream,
    TestReport,
    checked_sum,
    chi_square_independence,
    ks_two_sample,
    wilson_interval,
)
