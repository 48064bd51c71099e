"""Battery capacity forecasting: a segment-token teacher, LoRA adaptation,
distillation into compact experts, and evaluation/explanation tooling."""

__version__ = "0.1.0"
