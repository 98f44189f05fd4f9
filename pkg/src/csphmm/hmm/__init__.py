from .estimator import CircularHMM
from .io import load_model, model_from_dict, model_to_dict, save_model
from .model import (
    CircularHmm,
    CompositeChain,
    Topology,
    bootstrap_order,
    chain_log_prob,
    circular_mask,
    forward_from_emissions,
    log_forward,
    order_reduce,
    random_hmm,
    viterbi,
    viterbi_from_emissions,
)
from .oracle import brute_force_loglik, brute_force_viterbi
from .sampling import sample
from .training import baum_welch, init_from_data, train_chain

__all__ = [
    "CircularHMM",
    "CircularHmm",
    "CompositeChain",
    "Topology",
    "baum_welch",
    "bootstrap_order",
    "brute_force_loglik",
    "brute_force_viterbi",
    "chain_log_prob",
    "circular_mask",
    "init_from_data",
    "load_model",
    "forward_from_emissions",
    "log_forward",
    "model_from_dict",
    "model_to_dict",
    "order_reduce",
    "random_hmm",
    "sample",
    "save_model",
    "train_chain",
    "viterbi",
    "viterbi_from_emissions",
]
