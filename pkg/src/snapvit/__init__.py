"""Single-shot structured pruning of vision transformers.

Local squared-gradient curvature per head and FFN neuron is combined with
block factors found by an exponential natural evolution strategy; one global
ranking then yields a sub-network at any sparsity.
"""

from .analytics import cka_sigma_init, flops, knn_eval, linear_cka
from .config import RunConfig
from .correction import correct_layer, correct_model
from .data import Dataset, DatasetSpec, load_dataset, synth_dataset
from .errors import InfeasibleSparsityError, SnapVitError
from .fitness import build_context, candidate_fitness, similarity
from .pruner import SparsityRequest, StructureRanking, extract_mask, fuse_scores, rank
from .search import load_ranking, run_snapvit, save_ranking
from .serialization import load_checkpoint, save_checkpoint
from .vit import (DEFAULT_CAPS, Caps, ModelWeights, PruneMask, ViTConfig, compact, embed,
                  forward, init_weights, structure_census)
from .xnes import XNES

__version__ = "0.1.0"
