"""LSTM encoder-decoder with general-score attention and input feeding."""

from .inference import encode_source, forced_attention, lm_logprob, score_batch, sequence_logprob
from .model import LoadedModel, Seq2SeqModel, init_model, load_model, save_model, zeros_model
from .network import loss_and_grad
from .ops import (LstmLayerParams, LstmState, attention_context, attention_weights, lstm_step,
                  predict_distribution)
from .train import (ModelConfig, NumericalError, TrainConfig, TrainResult, clip_gradients, fit, train,
                    train_backward, train_lm)

__all__ = [
    "LoadedModel", "LstmLayerParams", "LstmState", "ModelConfig", "NumericalError", "Seq2SeqModel",
    "TrainConfig", "TrainResult", "attention_context", "attention_weights", "clip_gradients",
    "encode_source", "fit", "forced_attention", "init_model", "lm_logprob", "load_model",
    "loss_and_grad", "lstm_step", "predict_distribution", "save_model", "score_batch",
    "sequence_logprob", "train", "train_backward", "train_lm", "zeros_model",
]
