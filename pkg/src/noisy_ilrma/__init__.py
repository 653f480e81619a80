"""Blind extraction of one point source from diffuse noise with a low-rank source model.

Typical use::

    from noisy_ilrma import StftConfig, analyze, synthesize, run_noisy_ilrma

    x = analyze(mixture)                  # (channels, samples) -> (I, J, M)
    result = run_noisy_ilrma(x)
    target = synthesize(result.extracted, length=mixture.shape[1])
"""

from .demix import (
    ExtractionResult,
    NoisyIlrmaConfig,
    TraceEntry,
    build_covariances,
    init_demixing,
    run_noisy_ilrma,
    separate,
    stationarity_residuals,
    update_demixing,
    wiener_extract,
)
from .errors import DataError, NoisyIlrmaError, NumericalWarning, SingularMatrixError, SingularPencilError, UsageError
from .evaluation import SdrReport, sdr, sdr_improvement
from .mixsim import ArrayGeometry, GroundTruth, MixtureSpec, Reverb, default_mixture_spec, render_mixture, steering_vector
from .model import FreeSourceModel, NmfSourceModel, SeparatedPowers, cost, update_free, update_nmf
from .stft import StftConfig, analyze, synthesize

__version__ = "0.1.0"
