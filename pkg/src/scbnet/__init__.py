"""Brain-MRI tumor classifiers built from conv blocks and skip-connection blocks.

A small numpy framework with hand-written forward/backward passes, the
arch-1..arch-10 network registry, an image pipeline with flip augmentation,
Adam training, checkpointing and a sweep that renders the accuracy tables.
"""
from .architecture import (
    REGISTRY,
    NetworkParams,
    NetworkSpec,
    build_architecture,
    count_params,
    infer_shapes,
    init_params,
    network_backward,
    network_forward,
    predict_proba,
)
from .checkpoint import load_model, save_model
from .data import LabeledDataset, augment, ingest_directory
from .tensor import precision
from .training import EvalResult, TrainConfig, evaluate, train

__version__ = "0.1.0"
