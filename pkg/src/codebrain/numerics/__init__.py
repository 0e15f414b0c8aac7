"""Core numerics: autodiff tensors, Fourier transforms, composite functions."""

from .fourier import (
    ComplexSpectrum,
    dft,
    dft_many,
    fft_convolve_arrays,
    idft,
    idft_many,
    next_pow2,
)
from .functional import (
    dropout,
    finite_diff_check,
    layer_norm,
    rms_norm,
    softmax_cross_entropy,
)
from .tensor import (
    MissingGradientError,
    Tensor,
    backward,
    concat,
    conv1d,
    cross_entropy,
    fft_convolve,
    no_grad,
    pad_axis,
    repeat_last,
    softmax,
    stack,
    take_rows,
)

__all__ = [
    "ComplexSpectrum",
    "MissingGradientError",
    "Tensor",
    "backward",
    "concat",
    "conv1d",
    "cross_entropy",
    "dft",
    "dft_many",
    "dropout",
    "fft_convolve",
    "fft_convolve_arrays",
    "finite_diff_check",
    "idft",
    "idft_many",
    "layer_norm",
    "next_pow2",
    "no_grad",
    "pad_axis",
    "repeat_last",
    "rms_norm",
    "softmax",
    "softmax_cross_entropy",
    "stack",
    "take_rows",
]
