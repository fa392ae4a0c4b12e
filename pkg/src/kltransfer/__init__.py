"""Knowledge-transfer lab: KL-divergence objectives, a truncated top-k toy
task, and desk-scale teacher-to-learner sequence-generation experiments."""

__version__ = "0.1.0"

from .divergence import (
    BACKWARD,
    FORWARD,
    Categorical,
    DivergenceMode,
    TruncationSpec,
    divergence,
    entropy,
    grad_wrt_logits,
    grad_wrt_p,
    softmax,
    truncated_divergence,
)

__all__ = [
    "__version__",
    "Categorical",
    "DivergenceMode",
    "FORWARD",
    "BACKWARD",
    "TruncationSpec",
    "softmax",
    "entropy",
    "divergence",
    "truncated_divergence",
    "grad_wrt_p",
    "grad_wrt_logits",
]
