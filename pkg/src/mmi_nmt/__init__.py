"""MMI reranking and diversity-promoting beam search for LSTM/attention translation models."""

__version__ = "0.1.0"
