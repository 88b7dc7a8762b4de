"""
The inverse Gaussian first-hitting-time law of a molecule drifting towards the receiver.

Every function accepts a scalar or an array of times and returns the same shape. Integrals are evaluated with
adaptive quadrature split at the mode, the mean and a truncation point ``mu + 40 sd``; the tail beyond the
truncation point is integrated separately so the heavy right tail is never dropped.
"""
import json
import logging
import math
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy import integrate, special

from molecular_sync.models import ChannelParams, IgParams, UnsupportedMomentOrder, QuadratureError

ArrayLike = Union[float, np.ndarray]

QUADRATURE_TOLERANCE = 1e-10
QUADRATURE_RELATIVE_TOLERANCE = 1e-11
TRUNCATION_SDS = 40.0


def derive_ig_params(p: ChannelParams) -> IgParams:
    """
    Derive the first-hitting-time law from the physical channel.

    The diffusion coefficient follows the Stokes-Einstein relation ``D = kB Ta / (6 pi eta r)``.

    Args:
        p (ChannelParams): Physical constants, all strictly positive

    Returns:
        :rtype: IgParams
    """
    diffusion = p.diffusion_coefficient
    if not diffusion > 0:
        raise ValueError(f"diffusion coefficient must be positive, got {diffusion}")
    return IgParams(mu=p.distance_d / p.drift_v, lam=p.distance_d ** 2 / (2.0 * diffusion))


def ig_logpdf(t: ArrayLike, p: IgParams) -> ArrayLike:
    t = np.asarray(t, dtype=float)
    positive = t > 0
    safe = np.where(positive, t, 1.0)
    log_density = 0.5 * math.log(p.lam / (2.0 * math.pi)) - 1.5 * np.log(safe) \
        - p.lam * (safe - p.mu) ** 2 / (2.0 * p.mu ** 2 * safe)
    return np.where(positive, log_density, -np.inf)[()]


def ig_pdf(t: ArrayLike, p: IgParams) -> ArrayLike:
    """
    Density of the first hitting time. Exactly zero for ``t <= 0``.

    Args:
        t: time or array of times (s)
        p (IgParams): law parameters

    Returns:
        density with the shape of ``t``
    """
    return np.exp(ig_logpdf(t, p))[()]


def ig_cdf(t: ArrayLike, p: IgParams) -> ArrayLike:
    t = np.asarray(t, dtype=float)
    positive = t > 0
    safe = np.where(positive, t, 1.0)
    root = np.sqrt(p.lam / safe)
    below = special.ndtr(root * (safe / p.mu - 1.0))
    # exp(2 lambda / mu) overflows for sharp laws, so it is folded into the log of the normal tail
    reflected = np.exp(2.0 * p.lam / p.mu + special.log_ndtr(-root * (safe / p.mu + 1.0)))
    return np.where(positive, np.clip(below + reflected, 0.0, 1.0), 0.0)[()]


def ig_sf(t: ArrayLike, p: IgParams) -> ArrayLike:
    """
    Survival function ``1 - F(t)`` evaluated without the cancellation of ``1 - ig_cdf``.
    """
    t = np.asarray(t, dtype=float)
    positive = t > 0
    safe = np.where(positive, t, 1.0)
    root = np.sqrt(p.lam / safe)
    above = special.ndtr(-root * (safe / p.mu - 1.0))
    reflected = np.exp(2.0 * p.lam / p.mu + special.log_ndtr(-root * (safe / p.mu + 1.0)))
    return np.where(positive, np.clip(above - reflected, 0.0, 1.0), 1.0)[()]


def ig_sample(p: IgParams, rng: np.random.Generator, size=None) -> ArrayLike:
    """
    Exact draws from the law by the transformation method: the square of a standard normal is mapped onto the
    smaller root of the defining quadratic, and a uniform picks between that root and its reflection ``mu^2/x``.

    Args:
        p (IgParams): law parameters
        rng (numpy.random.Generator): random stream, consumed as two blocks (normals then uniforms)
        size: numpy output shape, ``None`` for a single draw

    Returns:
        strictly positive time(s)
    """
    normal = rng.standard_normal(size)
    chi = normal * normal
    mu, lam = p.mu, p.lam
    # conjugate form of mu + mu^2 chi / 2lam - mu/2lam sqrt(4 mu lam chi + mu^2 chi^2), free of cancellation
    root = 2.0 * lam * mu / (2.0 * lam + mu * chi + np.sqrt(4.0 * mu * lam * chi + (mu * chi) ** 2))
    uniform = rng.uniform(size=size)
    return np.where(uniform <= mu / (mu + root), root, mu * mu / root)[()]


def ig_mode(p: IgParams) -> float:
    ratio = 1.5 * p.mu / p.lam
    return p.mu * (math.sqrt(1.0 + ratio * ratio) - ratio)


def ig_variance(p: IgParams) -> float:
    return p.mu ** 3 / p.lam


def ig_moment(order: int, p: IgParams) -> float:
    """
    Positive raw moment ``E[T^order]`` from the finite Bessel series of the law.
    """
    if order < 0:
        raise ValueError(f"moment order must be nonnegative, got {order}")
    if order == 0:
        return 1.0
    scale = p.mu / (2.0 * p.lam)
    series = math.fsum(math.factorial(order - 1 + i) / (math.factorial(i) * math.factorial(order - 1 - i))
                       * scale ** i for i in range(order))
    return p.mu ** order * series


def ig_negative_moment(r: int, p: IgParams) -> float:
    """
    ``E[T^-r]`` for ``r`` in 1, 2, 3, using ``E[T^-r] = E[T^(r+1)] / mu^(2r+1)``.

    Args:
        r (int): order, 1, 2 or 3
        p (IgParams): law parameters

    Returns:
        :rtype: float
    """
    if r not in (1, 2, 3):
        raise UnsupportedMomentOrder(r)
    mu, lam = p.mu, p.lam
    if r == 1:
        return 1.0 / mu + 1.0 / lam
    if r == 2:
        return 1.0 / mu ** 2 + 3.0 / (mu * lam) + 3.0 / lam ** 2
    return 1.0 / mu ** 3 + 6.0 / (mu ** 2 * lam) + 15.0 / (mu * lam ** 2) + 15.0 / lam ** 3


def fisher_info_per_molecule(p: IgParams) -> float:
    """
    Fisher information one molecule carries about the timing offset, ``lambda E[T^-3] - 1.5 E[T^-2]``.
    """
    return p.lam * ig_negative_moment(3, p) - 1.5 * ig_negative_moment(2, p)


def crlb(n1: int, p: IgParams) -> float:
    """
    Cramer-Rao bound on the variance of an unbiased offset estimate from ``n1`` molecules released together.

    Args:
        n1 (int): molecule count, at least 1
        p (IgParams): law parameters

    Returns:
        :rtype: float
    """
    if n1 < 1:
        raise ValueError(f"molecule count must be at least 1, got {n1}")
    # (1/I)/n rather than 1/(n I) so that crlb(n) == crlb(1)/n bit for bit
    return (1.0 / fisher_info_per_molecule(p)) / n1


def quadrature_breakpoints(p: IgParams) -> Tuple[float, ...]:
    upper = p.mu + TRUNCATION_SDS * p.std
    return 0.0, ig_mode(p), p.mu, upper, math.inf


def quadrature_integral(func: Callable[[float], float], p: IgParams,
                        tolerance: float = QUADRATURE_TOLERANCE,
                        breakpoints: Optional[Tuple[float, ...]] = None) -> float:
    """
    Integrate ``func`` over ``(0, inf)`` piecewise between the law's landmarks.

    Args:
        func: scalar integrand
        p (IgParams): law whose mode, mean and spread place the pieces
        tolerance (float): absolute tolerance per piece

    Returns:
        :rtype: float

    Raises:
        QuadratureError: when the accumulated error estimate is too large to trust
    """
    points = breakpoints or quadrature_breakpoints(p)
    value = 0.0
    abserr = 0.0
    for lower, upper in zip(points, points[1:]):
        piece, error = integrate.quad(func, lower, upper, epsabs=tolerance,
                                      epsrel=QUADRATURE_RELATIVE_TOLERANCE, limit=400)
        value += piece
        abserr += error
    accepted = 1e-6 * max(1.0, abs(value))
    if not math.isfinite(value) or abserr > accepted:
        raise QuadratureError(value, abserr, accepted)
    logging.debug(json.dumps({"method": "quadrature_integral", "action": "integrated",
                              "value": value, "abserr": abserr}))
    return value


def quadrature_expectation(g: Callable[[float], float], p: IgParams,
                           tolerance: float = QUADRATURE_TOLERANCE) -> float:
    """
    ``E[g(T)]`` by quadrature against the density.
    """
    def weighted(t: float) -> float:
        density = ig_pdf(t, p)
        # g may blow up near zero where the density has already underflowed
        return float(g(t) * density) if density > 0 else 0.0

    return quadrature_integral(weighted, p, tolerance)


def fisher_info_quadrature(p: IgParams) -> float:
    """
    Fisher information as the expected squared score, an oracle independent of the negative-moment closed forms.
    """
    drift = p.lam / (2.0 * p.mu ** 2)

    def squared_score(t: float) -> float:
        score = -1.5 / t - drift + p.lam / (2.0 * t * t)
        return score * score

    return quadrature_expectation(squared_score, p)
