"""Per-channel discrete Fourier transforms with a differentiable adjoint,
plus the L1 spectral loss used by the frequency-aware attacks.

Conventions: transforms run along the time axis independently per channel,
spectra are stored full length as separate real/imaginary matrices, and
"unitary" normalization means scaling by 1/sqrt(L), the convention under
which Parseval's identity holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import DiffNode, Tensor2

__all__ = [
    "Spectrum",
    "dft",
    "normalize_spectrum",
    "dft_adjoint",
    "dft_nodes",
    "spectral_l1_term",
    "freq_loss",
]


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT coefficients of an L x M real signal, split into parts."""

    length: int
    channels: int
    real: Tensor2
    imag: Tensor2
    normalized: bool

    def magnitudes(self):
        """Per-coefficient complex magnitudes as an L x M array."""
        return np.hypot(self.real.array, self.imag.array)


def dft(x):
    """Unnormalized DFT of each channel: F_k = sum_t x_t * exp(-2i*pi*k*t/L)."""
    arr = engine.as_array(x)
    if arr.shape[0] == 0:
        raise ValueError("dft: empty input")
    coeffs = np.fft.fft(arr, axis=0)
    return Spectrum(
        length=arr.shape[0],
        channels=arr.shape[1],
        real=Tensor2(np.ascontiguousarray(coeffs.real)),
        imag=Tensor2(np.ascontiguousarray(coeffs.imag)),
        normalized=False,
    )


def normalize_spectrum(s):
    """Scale all coefficients by 1/sqrt(L). Refuses to normalize twice."""
    if s.normalized:
        raise ValueError("normalize_spectrum: spectrum is already normalized")
    scale = 1.0 / np.sqrt(s.length)
    return Spectrum(
        length=s.length,
        channels=s.channels,
        real=Tensor2(scale * s.real.array),
        imag=Tensor2(scale * s.imag.array),
        normalized=True,
    )


def dft_adjoint(grad_real, grad_imag, normalized):
    """Adjoint of the (optionally unitary) DFT applied to an upstream gradient.

    Maps gradients with respect to the real/imaginary coefficient matrices
    back to a gradient with respect to the time-domain input.
    """
    g_re = engine.as_array(grad_real)
    g_im = engine.as_array(grad_imag)
    if g_re.shape != g_im.shape:
        raise ValueError(
            f"dft_adjoint: shape mismatch {g_re.shape} vs {g_im.shape}"
        )
    length = g_re.shape[0]
    factor = np.sqrt(length) if normalized else float(length)
    out = np.fft.ifft(g_re + 1j * g_im, axis=0)
    return np.ascontiguousarray(out.real) * factor


def dft_nodes(x, normalized=True):
    """DFT of a graph node, returned as (real, imaginary) child nodes.

    Both children are linear in the input, with the conjugate-transpose
    action of the transform as their gradient rule.
    """
    x = engine._lift(x)
    if x.value.shape[0] == 0:
        raise ValueError("dft_nodes: empty input")
    length = x.value.shape[0]
    scale = 1.0 / np.sqrt(length) if normalized else 1.0
    coeffs = np.fft.fft(x.value, axis=0) * scale

    def vjp_real(g):
        return dft_adjoint(g, np.zeros_like(g), normalized)

    def vjp_imag(g):
        return dft_adjoint(np.zeros_like(g), g, normalized)

    re = DiffNode(np.ascontiguousarray(coeffs.real), [(x, vjp_real)], op="dft_real")
    im = DiffNode(np.ascontiguousarray(coeffs.imag), [(x, vjp_imag)], op="dft_imag")
    return re, im


def _as_normalized_spectrum(ref, normalized):
    if isinstance(ref, Spectrum):
        if ref.normalized != normalized:
            raise ValueError(
                "spectral_l1_term: reference normalization does not match"
            )
        return ref
    s = dft(ref)
    return normalize_spectrum(s) if normalized else s


def spectral_l1_term(a, ref, normalized=True):
    """Mean per-coefficient L1 distance between the spectra of ``a`` and ``ref``.

    Each coefficient contributes |delta real| + |delta imag|; the total is
    averaged over all coefficients and channels. Differentiable in ``a``.
    """
    a = engine._lift(a)
    ref_spec = _as_normalized_spectrum(ref, normalized)
    if a.value.shape != ref_spec.real.shape:
        raise ValueError(
            f"spectral_l1_term: length mismatch {a.value.shape} vs "
            f"{ref_spec.real.shape}"
        )
    re, im = dft_nodes(a, normalized=normalized)
    d_re = engine.abs_(engine.sub(re, engine.constant(ref_spec.real)))
    d_im = engine.abs_(engine.sub(im, engine.constant(ref_spec.imag)))
    return engine.add(engine.mean_(d_re), engine.mean_(d_im))


def freq_loss(x_adv, x_ref, y_pred, y_ref, normalized=True):
    """Frequency-domain loss: spectral L1 of the input pair plus the
    forecast pair, each transformed and normalized independently.

    ``x_adv`` and ``y_pred`` may be graph nodes; the references are fixed.
    Returns a scalar node, differentiable with respect to both graph inputs.
    """
    x_adv = engine._lift(x_adv)
    y_pred = engine._lift(y_pred)
    x_arr = engine.as_array(x_ref) if not isinstance(x_ref, Spectrum) else None
    if x_arr is not None and x_adv.value.shape != x_arr.shape:
        raise ValueError(
            f"freq_loss: input shapes differ, {x_adv.value.shape} vs {x_arr.shape}"
        )
    y_arr = engine.as_array(y_ref) if not isinstance(y_ref, Spectrum) else None
    if y_arr is not None and y_pred.value.shape != y_arr.shape:
        raise ValueError(
            f"freq_loss: forecast shapes differ, {y_pred.value.shape} vs {y_arr.shape}"
        )
    term_in = spectral_l1_term(x_adv, x_ref, normalized=normalized)
    term_out = spectral_l1_term(y_pred, y_ref, normalized=normalized)
    return engine.add(term_in, term_out)
