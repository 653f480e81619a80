"""Source variance models, the negative log-likelihood and its MM updates.

Shapes: ``I`` frequency bins, ``J`` frames, ``K`` NMF bases, ``M`` channels.
Separated channel 1 carries the target plus a ``lambda``-weighted share of the
noise; channels 2..M carry noise only, all with the same variance.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, UsageError

__all__ = [
    "EPS",
    "SeparatedPowers",
    "NmfSourceModel",
    "FreeSourceModel",
    "init_nmf",
    "cost",
    "map_objective",
    "rc_fastmnmf_likelihood_oracle",
    "update_nmf",
    "update_free",
    "NMF_RULES",
    "FREE_RULES",
]

EPS = 1e-12


@dataclass(frozen=True)
class SeparatedPowers:
    """``p1 = |y_1|^2`` and ``p_rest = sum_{n>=2} |y_n|^2``, both ``(I, J)``."""

    p1: np.ndarray
    p_rest: np.ndarray
    mic_count: int

    def __post_init__(self):
        if self.p1.shape != self.p_rest.shape or self.p1.ndim != 2:
            raise UsageError("p1 and p_rest must share an (I, J) shape")
        if self.mic_count < 1:
            raise UsageError("mic_count must be >= 1")

    @property
    def shape(self):
        return self.p1.shape

    def check_finite(self):
        if not (np.all(np.isfinite(self.p1)) and np.all(np.isfinite(self.p_rest))):
            raise DataError("separated powers contain NaN or inf")
        if np.any(self.p1 < 0) or np.any(self.p_rest < 0):
            raise DataError("separated powers must be nonnegative")


@dataclass(frozen=True)
class NmfSourceModel:
    """Low-rank variances ``r_s = t_s @ v_s`` and ``r_n = t_n @ v_n``.

    ``t_*`` are ``(I, K)`` bases and ``v_*`` are ``(K, J)`` activations.
    """

    t_s: np.ndarray
    v_s: np.ndarray
    t_n: np.ndarray
    v_n: np.ndarray

    @property
    def basis_count(self):
        return self.t_s.shape[1]

    def variances(self):
        return self.t_s @ self.v_s, self.t_n @ self.v_n

    def normalized(self, eps=EPS):
        """Rescale so every basis column sums to one over frequency; ``r`` is unchanged."""
        scale_s = self.t_s.sum(axis=0)
        scale_n = self.t_n.sum(axis=0)
        return NmfSourceModel(
            t_s=self.t_s / scale_s,
            v_s=np.maximum(self.v_s * scale_s[:, None], eps),
            t_n=self.t_n / scale_n,
            v_n=np.maximum(self.v_n * scale_n[:, None], eps),
        )


@dataclass(frozen=True)
class FreeSourceModel:
    """Unconstrained variances with an inverse-gamma(alpha, beta) prior on ``r_s``."""

    r_s: np.ndarray
    r_n: np.ndarray
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise UsageError("inverse-gamma prior needs alpha > 0 and beta > 0")

    def variances(self):
        return self.r_s, self.r_n


def init_nmf(n_bins, n_frames, n_basis, rng):
    """Uniform (0, 1) initialization of all four NMF factors."""
    if n_basis < 1:
        raise UsageError("n_basis must be >= 1")

    def draw(shape):
        return np.maximum(rng.uniform(0.0, 1.0, size=shape), EPS)

    return NmfSourceModel(
        t_s=draw((n_bins, n_basis)),
        v_s=draw((n_basis, n_frames)),
        t_n=draw((n_bins, n_basis)),
        v_n=draw((n_basis, n_frames)),
    )


def _logdet_sum(logdet, n_bins, n_frames):
    if logdet is None:
        return 0.0
    logdet = np.broadcast_to(np.asarray(logdet, dtype=float), (n_bins,))
    return -2.0 * n_frames * float(np.sum(logdet))


def cost(powers, model, lam, logdet=None):
    """Negative log-likelihood up to a constant.

    ``sum_ij [-2 log|det W_i| + log(r_s + lam r_n) + (M-1) log r_n
    + p1 / (r_s + lam r_n) + p_rest / r_n]``

    Args:
        powers: :class:`SeparatedPowers`.
        model: an NMF or free model (anything with ``variances()``).
        lam: ``(I,)`` noise weight in channel 1.
        logdet: ``(I,)`` values of ``log|det W_i|``; ``None`` drops the term.
    """
    r_s, r_n = model.variances()
    lam = np.asarray(lam, dtype=float)
    if np.any(r_s <= 0) or np.any(r_n <= 0) or np.any(lam <= 0):
        raise UsageError("variances and noise weights must be positive; apply floors first")
    n_bins, n_frames = powers.shape
    m = powers.mic_count
    c = r_s + r_n * lam[:, None]
    value = np.sum(np.log(c) + powers.p1 / c)
    if m > 1:
        value += np.sum((m - 1) * np.log(r_n) + powers.p_rest / r_n)
    return float(value) + _logdet_sum(logdet, n_bins, n_frames)


def map_objective(powers, model, lam, logdet=None):
    """:func:`cost` plus the inverse-gamma penalty ``sum (alpha+1) log r_s + beta / r_s``."""
    r_s = model.r_s
    prior = np.sum((model.alpha + 1.0) * np.log(r_s) + model.beta / r_s)
    return cost(powers, model, lam, logdet) + float(prior)


def rc_fastmnmf_likelihood_oracle(powers, model, lam, logdet=None):
    """Likelihood of the jointly diagonalized two-source model.

    Evaluates ``sum_ij sum_m [log sigma_ijm + |y_ijm|^2 / sigma_ijm]`` with
    ``sigma_ijm = sum_n r_ijn * d_imn``, where the diagonalized spatial weights
    are set to ``d_i11 = 1``, ``d_im1 = 0``, ``d_i12 = lam_i``, ``d_im2 = 1``
    (``m >= 2``). Channels 2..M share one variance, so ``p_rest`` is split
    evenly among them. ``lam`` may be zero here.
    """
    r_s, r_n = model.variances()
    lam = np.asarray(lam, dtype=float)
    n_bins, n_frames = powers.shape
    m = powers.mic_count

    spatial = np.zeros((n_bins, m, 2))
    spatial[:, 0, 0] = 1.0
    spatial[:, 0, 1] = lam
    spatial[:, 1:, 1] = 1.0
    source_var = np.stack([r_s, r_n], axis=-1)
    sigma = np.einsum("ijn,imn->ijm", source_var, spatial)

    chan_power = np.empty((n_bins, n_frames, m))
    chan_power[..., 0] = powers.p1
    if m > 1:
        chan_power[..., 1:] = (powers.p_rest / (m - 1))[..., None]
    elif np.any(powers.p_rest != 0):
        raise UsageError("p_rest must be zero for a single channel")
    if np.any(sigma <= 0):
        raise UsageError("channel variances must be positive")
    value = np.sum(np.log(sigma) + chan_power / sigma)
    return float(value) + _logdet_sum(logdet, n_bins, n_frames)


def _mixed(r_s, r_n, lam):
    return r_s + r_n * lam[:, None]


# Individual MM rules. Each takes (model, lam, powers, eps) and returns (model, lam).


def _rule_t_s(model, lam, powers, eps):
    r_s, r_n = model.variances()
    c = _mixed(r_s, r_n, lam)
    num = (powers.p1 / c**2) @ model.v_s.T
    den = (1.0 / c) @ model.v_s.T
    t_s = np.maximum(model.t_s * np.sqrt(num / den), eps)
    return replace(model, t_s=t_s), lam


def _rule_v_s(model, lam, powers, eps):
    r_s, r_n = model.variances()
    c = _mixed(r_s, r_n, lam)
    num = model.t_s.T @ (powers.p1 / c**2)
    den = model.t_s.T @ (1.0 / c)
    v_s = np.maximum(model.v_s * np.sqrt(num / den), eps)
    return replace(model, v_s=v_s), lam


def _noise_terms(r_s, r_n, lam, powers):
    m = powers.mic_count
    c = _mixed(r_s, r_n, lam)
    lam_col = lam[:, None]
    num = lam_col * powers.p1 / c**2 + powers.p_rest / r_n**2
    den = lam_col / c + (m - 1) / r_n
    return num, den


def _rule_t_n(model, lam, powers, eps):
    num, den = _noise_terms(*model.variances(), lam, powers)
    t_n = np.maximum(model.t_n * np.sqrt((num @ model.v_n.T) / (den @ model.v_n.T)), eps)
    return replace(model, t_n=t_n), lam


def _rule_v_n(model, lam, powers, eps):
    num, den = _noise_terms(*model.variances(), lam, powers)
    v_n = np.maximum(model.v_n * np.sqrt((model.t_n.T @ num) / (model.t_n.T @ den)), eps)
    return replace(model, v_n=v_n), lam


def _rule_lambda(model, lam, powers, eps):
    r_s, r_n = model.variances()
    c = _mixed(r_s, r_n, lam)
    num = np.sum(r_n * powers.p1 / c**2, axis=1)
    den = np.sum(r_n / c, axis=1)
    return model, np.maximum(lam * np.sqrt(num / den), eps)


def _rule_free_r_s(model, lam, powers, eps):
    r_s, r_n = model.r_s, model.r_n
    c = _mixed(r_s, r_n, lam)
    num = powers.p1 / c**2 + model.beta / r_s**2
    den = 1.0 / c + (model.alpha + 1.0) / r_s
    return replace(model, r_s=np.maximum(r_s * np.sqrt(num / den), eps)), lam


def _rule_free_r_n(model, lam, powers, eps):
    num, den = _noise_terms(model.r_s, model.r_n, lam, powers)
    return replace(model, r_n=np.maximum(model.r_n * np.sqrt(num / den), eps)), lam


NMF_RULES = (
    ("t_s", _rule_t_s),
    ("v_s", _rule_v_s),
    ("t_n", _rule_t_n),
    ("v_n", _rule_v_n),
    ("lambda", _rule_lambda),
)

FREE_RULES = (
    ("r_s", _rule_free_r_s),
    ("r_n", _rule_free_r_n),
    ("lambda", _rule_lambda),
)


def _check_inputs(powers, lam):
    powers.check_finite()
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (powers.shape[0],):
        raise UsageError(f"lam must have shape ({powers.shape[0]},), got {lam.shape}")
    return lam


def update_nmf(model, lam, powers, eps=EPS, normalize=True, on_rule=None):
    """One sweep of the five MM rules for ``t_s, v_s, t_n, v_n, lambda``.

    Variances are recomputed between rules, so every rule on its own does not
    increase :func:`cost`. Afterwards the bases are rescaled to unit column
    sums (``r`` unchanged).

    Args:
        on_rule: optional ``callback(name, model, lam)`` invoked after each rule.

    Returns:
        ``(model, lam)``.
    """
    lam = _check_inputs(powers, lam)
    for name, rule in NMF_RULES:
        model, lam = rule(model, lam, powers, eps)
        if on_rule is not None:
            on_rule(name, model, lam)
    if normalize:
        model = model.normalized(eps)
    return model, lam


def update_free(model, lam, powers, eps=EPS, on_rule=None):
    """One sweep of the MAP rules for ``r_s`` (with prior), ``r_n`` and ``lambda``."""
    lam = _check_inputs(powers, lam)
    for name, rule in FREE_RULES:
        model, lam = rule(model, lam, powers, eps)
        if on_rule is not None:
            on_rule(name, model, lam)
    return model, lam
