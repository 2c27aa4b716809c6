"""somtree: hierarchical nearest-neighbor search over SOM trees.

Build a tree by recursively clustering records with self-organizing maps,
then answer k-NN queries by descending the tree and scanning only the
reached leaves. Queries whose best match is not similar enough are rejected
instead of answered, new records slot into the existing tree without any
retraining, and near-duplicate leaf members can be collapsed into weighted
prototypes.
"""

from .core import (
    COSINE,
    L1,
    L2,
    Metric,
    Neighbor,
    Record,
    RecordStore,
    brute_force_knn,
    distance,
    load_csv,
    save_csv,
    similarity,
    similarity_to_distance,
)
from .errors import SomTreeError
from .index import (
    BuildConfig,
    InsertOutcome,
    LeafReport,
    LeafStats,
    SomTreeIndex,
    TreeNode,
    build_tree,
    generalize_leaves,
    insert,
    leaf_consistency_report,
)
from .ingest import (
    PairCorpus,
    TokenDictionary,
    build_token_dictionary,
    load_idx,
    load_parallel_corpus,
    tokenize,
    update_dictionary,
    vectorize_sentence,
)
from .query import (
    QueryParams,
    SearchResult,
    classify,
    descend,
    detect_novelty,
    regress,
    search,
)
from .som import (
    SomMap,
    SomParams,
    SomTopology,
    assign,
    find_winner,
    grid_distance,
    init_som,
    neighborhood,
    project,
    train_som,
    update_step,
)
from .storage import load_index, save_index

__version__ = "0.1.0"
