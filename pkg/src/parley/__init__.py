"""Dialog response generation with a latent-variable transformer seq2seq.

Everything runs on the package's own float64 autodiff engine: span-masked
context denoising, future n-gram decoding, a hinged-KL latent with
bag-of-words grounding, three decoding strategies, and the usual n-gram
evaluation metrics.
"""

from .data import ContextResponsePair, DialogInstance, MaskedBatch
from .decoding import DecodeConfig
from .losses import LossBreakdown
from .metrics import EvalPair
from .model import DialogModel, EncoderOutput, MemoryVector, ModelConfig
from .tensor import RngState, Tensor
from .vocab import Vocabulary, build_vocab

__version__ = "0.1.0"

__all__ = [
    "ContextResponsePair",
    "DecodeConfig",
    "DialogInstance",
    "DialogModel",
    "EncoderOutput",
    "EvalPair",
    "LossBreakdown",
    "MaskedBatch",
    "MemoryVector",
    "ModelConfig",
    "RngState",
    "Tensor",
    "Vocabulary",
    "build_vocab",
    "__version__",
]
