"""Numeric substrate: FFT, reverse-mode differentiation, AdamW."""
from . import autodiff
from .autodiff import Tape, TapeError, Var
from .fft import fft, fft_forward, fft_inverse, ifft, irfft, rfft
from .gradcheck import NondeterministicLossError, grad_check
from .optim import AdamWState, adamw_step, clip_grad_norm

__all__ = [
    "AdamWState",
    "NondeterministicLossError",
    "Tape",
    "TapeError",
    "Var",
    "adamw_step",
    "autodiff",
    "clip_grad_norm",
    "fft",
    "fft_forward",
    "fft_inverse",
    "grad_check",
    "ifft",
    "irfft",
    "rfft",
]
