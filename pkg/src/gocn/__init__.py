"""Graph-optimized convolutional networks (GOCN) and their multi-graph extension."""

from .datasets import Dataset, Split, load_dataset, make_citation_split, make_ratio_split, synth_blobs, write_dataset
from .graph import Graph, NormalizedGraph, knn_graph, normalize, spectral_radius_estimate
from .model import ModelConfig, ModelParams, TrainReport, evaluate, forward, train
from .propagation import GocConfig, GraphWeights, phi_goc, phi_mgoc
from .tensor import Matrix, Tape, grad, make_rng

__version__ = "0.1.0"
