"""Teacher-student distillation toolkit for extractive QA over noisy,
ASR-like transcripts: a small autodiff engine, a span-prediction model,
a WER-calibrated corruption channel, the distillation objective, and
SQuAD-style evaluation harnesses."""

__version__ = "0.1.0"
