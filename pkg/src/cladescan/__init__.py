"""Genealogy-based Bayesian fine-mapping: approximate marginal trees from a
haplotype panel, a diploid copying model for study genotypes, model-averaged
Beta-Binomial Bayes factors for one- and two-mutation disease models, mixture
effect-size estimates, and a conditional case-control simulator."""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    DataError,
    GenotypeStudy,
    HaplotypePanel,
    PositionGrid,
    PriorSpec,
    RecombinationMap,
    load_genotypes,
    load_map,
    load_panel,
    make_grid,
)
from .tree import (  # noqa: F401
    MarginalTree,
    TreesimParams,
    build_tree,
    tree_store_read,
    tree_store_write,
)
from .copying import (  # noqa: F401
    CopyDosage,
    HmmParams,
    clade_dosage,
    copying_posterior,
    export_branch_genotypes,
)
from .bayes import (  # noqa: F401
    BayesResult,
    ScanParams,
    bf_position_1mut,
    bf_position_2mut,
    log_bf_table,
    posterior_two_vs_one,
    scan,
    scan_position,
)
from .effects import (  # noqa: F401
    BranchEffect,
    EffectPosterior,
    FitError,
    branch_logistic_map,
    mixture_effect,
)
from .simulate import (  # noqa: F401
    DiseaseModel,
    SimConfig,
    simulate_case_control,
    simulate_haplotypes,
)
from .report import build_region_report, report_to_json, report_to_svg  # noqa: F401
