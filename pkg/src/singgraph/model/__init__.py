from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .frontend import (
    fuse_branches,
    load_embedding_file,
    save_embedding_file,
    sinc_band_energies,
    stem_features,
)
from .layers import HSGAL, MGO, Graph, GraphPoolLayer, NodePool, SAAggregate, readout, topk_indices
from .network import BONAFIDE, SPOOF, ModelConfig, SingGraph, prepare_input, weighted_cross_entropy
