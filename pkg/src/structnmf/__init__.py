"""Node influence in multiview directed networks via Structured Semi-NMF."""

__version__ = "0.1.0"

from .graph import MultiviewNetwork, NetworkView, NodeRegistry, load_edge_list  # noqa: E402
from .netstats import StatMatrix, build_stat_matrix  # noqa: E402
from .factorization import (  # noqa: E402
    FactorizationConfig,
    FactorizationResult,
    fit,
    fit_multi_restart,
    fit_single_view,
    rank_scan,
)
from .influence import importance, percentile_subgraph, rank_table  # noqa: E402
from .baselines import hits, pagerank  # noqa: E402
from .evaluation import compare_models, fit_quasipoisson  # noqa: E402

__all__ = [
    "MultiviewNetwork", "NetworkView", "NodeRegistry", "load_edge_list",
    "StatMatrix", "build_stat_matrix",
    "FactorizationConfig", "FactorizationResult", "fit", "fit_multi_restart", "fit_single_view", "rank_scan",
    "importance", "percentile_subgraph", "rank_table",
    "hits", "pagerank",
    "compare_models", "fit_quasipoisson",
]
