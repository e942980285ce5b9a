"""Knowledge-graph embedding training with equivariance-based
regularization, filtered ranking evaluation, and a nuclear-norm lab."""

from .data import (
    CategoryMap,
    FilterIndex,
    TripleStore,
    Vocab,
    add_reciprocals,
    build_filter_index,
    generate_synthetic,
    load_categories,
    load_dataset,
    load_triples,
    save_categories,
    save_triples,
)
from .models import (
    ModelKind,
    ModelParams,
    init_params,
    project_constraints,
    relational_transform,
    score,
    score_all_tails,
)
from .nuclear import (
    CheckReport,
    FactorInstance,
    check_instance,
    make_instance,
    nuclear_estimate,
    objective_min,
)
from .ranking import RankingReport, evaluate, filtered_rank
from .regularizers import (
    EpsilonState,
    PairSet,
    PathPairSet,
    RegularizerSpec,
    pair_label,
    penalty_dura,
    penalty_er,
    penalty_er_second_order,
    penalty_fro,
    penalty_n3,
    sample_path_pairs,
    select_pairs,
)
from .training import (
    TrainConfig,
    TrainHistory,
    adagrad_update,
    batch_objective,
    cross_entropy_loss,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"
