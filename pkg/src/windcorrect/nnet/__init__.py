"""Minimal neural-network engine: dense, conv1d, bidirectional LSTM,
batch normalisation, dropout; MSE loss, Adam and early stopping."""

from .model import (
    LayerSpec, ModelSpec, TrainedModel, activation, batchnorm, bilstm, build_network, conv1d, dense,
    dropout, flatten, forward, gradients, initialize, load_model, loss_and_gradients, nontrainable_count,
    param_count, save_model,
)
from .training import AdamState, EarlyStopping, TrainConfig, adam_step, train

__all__ = [
    "LayerSpec", "ModelSpec", "TrainedModel", "activation", "batchnorm", "bilstm", "build_network",
    "conv1d", "dense", "dropout", "flatten", "forward", "gradients", "initialize", "load_model",
    "loss_and_gradients", "nontrainable_count", "param_count", "save_model",
    "AdamState", "EarlyStopping", "TrainConfig", "adam_step", "train",
]
