"""Control-tag structured chain-of-thought: data generation, decontamination,
ORPO objective checks, dynamic-temperature decoding and evaluation."""

__version__ = "0.1.0"
