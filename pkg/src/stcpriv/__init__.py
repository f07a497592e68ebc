"""Privacy-preserving identification with sparse ternary codes and ambiguization."""
from .ambiguization import (
    AmbiguityBudget,
    AmbiguizationOverflow,
    AmbiguizedCode,
    ambiguity_entropy,
    ambiguize,
    ambiguize_batch,
)
from .coding import (
    DistanceBound,
    NoiseModel,
    RequiredSparsity,
    TernaryCode,
    binary_embed_baseline,
    distortion,
    encode_batch,
    hard_threshold,
    pack_code,
    reconstruct,
    required_sparsity,
    ternary_distance_bounds,
    ternary_encode,
    unpack_code,
)
from .data import gen_clustered, gen_iid
from .identification import (
    CandidateList,
    CommunicationCost,
    PositionLists,
    QueryOverflow,
    QueryRequest,
    aggregate_scores,
    build_query,
    communication_cost,
    default_gamma,
    private_decode,
    server_lookup,
)
from .privacy import (
    DegenerateDistribution,
    DistancePDFs,
    LeakReport,
    distance_pdfs,
    kld_leak,
    kmeans_attack,
    ratio_table,
)
from .storage import DimensionMismatch, PublicDatabase, enroll, load_db, save_db
from .transform import (
    DegenerateKeyError,
    DegenerateUpdateError,
    KeyMatrix,
    SparsifyingTransform,
    init_transform,
    learn_transform,
    load_transform,
    save_transform,
)

__version__ = "0.1.0"
