"""
von Mises-Fisher machinery: Bessel-ratio constant, reparameterized sampling,
closed-form KL and the latent retrieval distance
"""
from dataclasses import dataclass
from typing import Callable, Tuple
import logging
import math

import numpy as np
from scipy.special import ive

from models import NumericsError, ValidationError
from infrastructure import tensor as T
from infrastructure.tensor import Tensor

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 1000
MIN_DIRECTION_NORM = 1e-8
NORM_EPS = 1e-12


def lentz(a: Callable[[int], float], b: Callable[[int], float],
          tol: float = 1e-15, max_terms: int = 100000, tiny: float = 1e-30) -> Tuple[float, int]:
    """
    Evaluate b(0) + a(1)/(b(1) + a(2)/(b(2) + ...)) with the modified Lentz method.

    Returns the value and the number of terms used; raises when max_terms is hit.
    """
    f = b(0)
    if f == 0.0:
        f = tiny
    C, D = f, 0.0
    for j in range(1, max_terms + 1):
        D = b(j) + a(j) * D
        if D == 0.0:
            D = tiny
        C = b(j) + a(j) / C
        if C == 0.0:
            C = tiny
        D = 1.0 / D
        delta = C * D
        f *= delta
        if abs(delta - 1.0) < tol:
            return f, j
    raise NumericsError(f"continued fraction did not converge in {max_terms} terms")


def _check_args(d: int, kappa: float):
    if int(d) != d or d < 2:
        raise ValidationError(f"dimension must be an integer >= 2, got {d}")
    if not np.isfinite(kappa) or kappa < 0:
        raise ValidationError(f"kappa must be finite and >= 0, got {kappa}")


def bessel_ratio(d: int, kappa: float) -> float:
    """A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa), in [0, 1)"""
    _check_args(d, kappa)
    if kappa == 0.0:
        return 0.0
    nu = d / 2.0
    try:
        # r_nu = 1 / (2nu/kappa + r_{nu+1})
        value, _ = lentz(lambda j: 1.0, lambda j: 0.0 if j == 0 else 2.0 * (nu + j - 1) / kappa)
    except NumericsError:
        logger.warning(f"continued fraction failed for d={d}, kappa={kappa}; using scaled Bessel functions")
        num, den = ive(nu, kappa), ive(nu - 1.0, kappa)
        if den == 0.0 or not np.isfinite(num / den):
            raise NumericsError(f"Bessel ratio underflow for d={d}, kappa={kappa}")
        value = num / den
    if not 0.0 <= value < 1.0:
        raise NumericsError(f"Bessel ratio out of range for d={d}, kappa={kappa}: {value}")
    return float(value)


def c_kappa(d: int, kappa: float) -> float:
    """C_kappa = kappa * A_d(kappa) / 2"""
    return kappa * bessel_ratio(d, kappa) / 2.0


@dataclass
class VmfParams:
    """Mean direction (possibly tracked) and concentration of a vMF"""
    mu: Tensor
    kappa: float

    def __post_init__(self):
        if not isinstance(self.mu, Tensor):
            self.mu = Tensor(self.mu)
        if self.mu.data.ndim != 1 or self.dim < 3:
            raise ValidationError(f"vMF direction must be a vector of dimension >= 3, got shape {self.mu.shape}")
        norm = float(np.linalg.norm(self.mu.data))
        if abs(norm - 1.0) > 1e-9:
            raise ValidationError(f"vMF direction must be unit-norm, got norm {norm}")
        if not self.kappa > 0:
            raise ValidationError(f"kappa must be > 0, got {self.kappa}")

    @property
    def dim(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class LatentCode:
    """Mean directions of the utterance and context halves plus the shared kappa"""
    mu_x: np.ndarray
    mu_c: np.ndarray
    kappa: float

    def __post_init__(self):
        if self.mu_x.shape != self.mu_c.shape:
            raise ValidationError(f"latent halves differ in shape: {self.mu_x.shape} vs {self.mu_c.shape}")
        for half in (self.mu_x, self.mu_c):
            if abs(float(np.linalg.norm(half)) - 1.0) > 1e-9:
                raise ValidationError("latent directions must be unit-norm")

    @property
    def dim(self) -> int:
        """Dimension of one half"""
        return int(self.mu_x.shape[0])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.mu_x, self.mu_c])


def unit_direction(pre: Tensor) -> Tensor:
    """L2-normalize a head output, failing on a degenerate near-zero vector"""
    norm = float(np.linalg.norm(pre.data))
    if norm < MIN_DIRECTION_NORM:
        raise NumericsError(f"degenerate latent direction (norm {norm:.3e})")
    return T.l2_normalize(pre, eps=0.0)


def _wood_constants(d: int, kappa: float) -> Tuple[float, float, float]:
    b = (d - 1) / (math.sqrt(4.0 * kappa ** 2 + (d - 1) ** 2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    # log(1 - x0^2) = log(4b / (1 + b)^2)
    c = kappa * x0 + (d - 1) * math.log(4.0 * b / (1.0 + b) ** 2)
    return b, x0, c


def draw_radial(d: int, kappa: float, rng: np.random.Generator) -> float:
    """Rejection-sample w = mu^T z; its law depends only on (d, kappa)"""
    b, x0, c = _wood_constants(d, kappa)
    for _ in range(MAX_REJECTIONS):
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform()
        if kappa * w + (d - 1) * math.log(1.0 - x0 * w) - c >= math.log(u):
            return w
    raise NumericsError(f"vMF rejection sampler exceeded {MAX_REJECTIONS} tries (d={d}, kappa={kappa})")


def _tangent(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d - 1)
    return v / np.linalg.norm(v)


def vmf_sample(p: VmfParams, rng: np.random.Generator) -> Tensor:
    """
    Reparameterized draw z ~ vMF(mu, kappa).

    A sample around e1 is rotated onto mu by the Householder reflection with
    u = normalize(e1 - mu); gradients reach mu through that reflection only.
    """
    d = p.dim
    w = draw_radial(d, p.kappa, rng)
    base = np.concatenate([[w], math.sqrt(max(0.0, 1.0 - w * w)) * _tangent(d, rng)])
    e1 = np.zeros(d)
    e1[0] = 1.0
    u = T.l2_normalize(T.sub(e1, p.mu), eps=NORM_EPS)
    return T.householder_reflect(u, Tensor(base))


def vmf_sample_batch(mu: np.ndarray, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """n samples as an (n, d) array, without gradient tracking"""
    mu = np.asarray(mu, dtype=np.float64)
    d = mu.shape[0]
    if d < 3 or kappa <= 0:
        raise ValidationError(f"invalid vMF parameters: d={d}, kappa={kappa}")
    b, x0, c = _wood_constants(d, kappa)
    ws = []
    accepted = rounds = 0
    while accepted < n:
        if rounds == MAX_REJECTIONS:
            raise NumericsError(f"vMF batch sampler accepted {accepted} of {n} draws in {MAX_REJECTIONS} rounds "
                                f"(d={d}, kappa={kappa})")
        rounds += 1
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0, size=n)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=n)
        keep = kappa * w + (d - 1) * np.log(1.0 - x0 * w) - c >= np.log(u)
        ws.append(w[keep])
        accepted += int(keep.sum())
    w = np.concatenate(ws)[:n]

    v = rng.standard_normal((n, d - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    base = np.hstack([w[:, None], np.sqrt(np.clip(1.0 - w * w, 0.0, None))[:, None] * v])

    e1 = np.zeros(d)
    e1[0] = 1.0
    diff = e1 - mu
    norm = np.linalg.norm(diff)
    if norm < NORM_EPS:
        return base
    u = diff / norm
    return base - 2.0 * np.outer(base @ u, u)


def vmf_kl(mu1: np.ndarray, mu2: np.ndarray, d: int, kappa: float) -> float:
    """KL(vMF(mu1) || vMF(mu2)) with shared kappa: C_kappa * ||mu1 - mu2||^2"""
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    if mu1.shape != mu2.shape:
        raise ValidationError(f"direction shapes differ: {mu1.shape} vs {mu2.shape}")
    diff = mu1 - mu2
    return c_kappa(d, kappa) * float(diff @ diff)


def kl_upper_bound(d: int, kappa: float) -> float:
    """Largest two-part latent distance: 8 C_kappa"""
    return 8.0 * c_kappa(d, kappa)


def latent_distance(a: LatentCode, b: LatentCode) -> float:
    """Sum of the utterance-half and context-half KL terms"""
    if a.kappa != b.kappa:
        raise ValidationError(f"kappa mismatch: {a.kappa} vs {b.kappa}")
    if a.dim != b.dim:
        raise ValidationError(f"latent dimension mismatch: {a.dim} vs {b.dim}")
    return vmf_kl(a.mu_x, b.mu_x, a.dim, a.kappa) + vmf_kl(a.mu_c, b.mu_c, a.dim, a.kappa)
