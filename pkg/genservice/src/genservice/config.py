from dataclasses import dataclass

DEFAULT_MODEL = "context-ngram"


@dataclass
class ServiceConfig:
    """Runtime knobs for the sidecar.

    `model` selects the backend: the built-in "context-ngram" statistical
    model (no downloads, fully deterministic), or any instruction-tuned
    causal/seq2seq model identifier served through the optional
    transformers backend. bigscience/T0_3B reproduces the reference setup.
    """

    model: str = DEFAULT_MODEL
    device: str = "cpu"
    max_concurrent: int = 8
    port: int = 8091

    def __post_init__(self):
        if not 1024 <= self.port <= 65535:
            raise ValueError(f"port {self.port} outside [1024, 65535]")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
