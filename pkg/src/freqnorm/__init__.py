"""freqnorm: frequency-domain feature normalization toolkit.

Spectral decomposition of convolutional features into amplitude (style)
and phase (content), normalization operators that control how much of
each a normalization step may change, mini residual networks using
them, and a synthetic domain-generalization benchmark.
"""

from .errors import (AbortedRunError, ConfigError, DomainError, FreqnormError,
                     NonRealSignalError, ShapeError, UnknownModuleError,
                     VerificationError)
from .tensor import Tensor, from_array, map_channel_slices, read_tensor, write_tensor, zeros
from .spectral import (ComplexGrid, SpectralPair, compose, decompose, dft2,
                       fft2_fast, idft2, ifft2_fast)
from .normstats import NormStats, RunningStats, compute_stats, normalize
from .layers import (AdjustParams, LayerConfig, affine, ccnorm_forward,
                     content_adjust, pcnorm_forward, scnorm_forward, softmax_pair)
from .models import Model, ModelSpec, build
from .dgbench import (DomainDataset, DomainStyle, GeneratorConfig, Protocol,
                      generate, load_dataset, run_experiment, save_dataset)
from .styletransfer import amplitude_mix, amplitude_swap, low_freq_swap

__version__ = "0.1.0"

__all__ = [
    "AbortedRunError", "AdjustParams", "ComplexGrid", "ConfigError",
    "DomainDataset", "DomainError", "DomainStyle", "FreqnormError",
    "GeneratorConfig", "LayerConfig", "Model", "ModelSpec", "NonRealSignalError",
    "NormStats", "Protocol", "RunningStats", "ShapeError", "SpectralPair",
    "Tensor", "UnknownModuleError", "VerificationError", "affine",
    "amplitude_mix", "amplitude_swap", "build", "ccnorm_forward", "compose",
    "compute_stats", "content_adjust", "decompose", "dft2", "fft2_fast",
    "from_array", "generate", "idft2", "ifft2_fast", "load_dataset",
    "low_freq_swap", "map_channel_slices", "normalize", "pcnorm_forward",
    "read_tensor", "run_experiment", "save_dataset", "scnorm_forward",
    "softmax_pair", "write_tensor", "zeros",
]
