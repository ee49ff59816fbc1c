"""Degree distributions on a contiguous support ``k_min..k_max``."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ValidationError

__all__ = [
    "DegreeDistribution",
    "powerlaw",
    "uniform",
    "delta",
    "from_file",
    "from_text",
    "to_text",
    "moments",
    "coefficient_of_variation",
    "solve_exponent_for_cv",
    "parse_dist_spec",
]

log = logging.getLogger(__name__)

_NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DegreeDistribution:
    """P(k) for k in ``[k_min, k_max]``; zero entries inside the support are kept."""

    k_min: int
    k_max: int
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if self.k_min < 1:
            raise ValidationError("degree zero is not allowed (k_min >= 1)")
        if self.k_max < self.k_min:
            raise ValidationError("k_max < k_min")
        if probs.shape != (self.k_max - self.k_min + 1,):
            raise ValidationError("probs length does not match the support")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValidationError("probabilities must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > _NORM_TOL:
            raise ValidationError(f"probabilities sum to {probs.sum()!r}, not 1")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def degrees(self) -> np.ndarray:
        return np.arange(self.k_min, self.k_max + 1)

    @property
    def size(self) -> int:
        return self.k_max - self.k_min + 1

    @property
    def mean(self) -> float:
        return float(self.probs @ self.degrees)

    def __eq__(self, other):
        if not isinstance(other, DegreeDistribution):
            return NotImplemented
        return (
            self.k_min == other.k_min
            and self.k_max == other.k_max
            and np.array_equal(self.probs, other.probs)
        )

    __hash__ = None


def _normalized(weights: np.ndarray) -> np.ndarray:
    total = weights.sum()
    p = weights / total
    # one renormalization pass pulls the sum within a few ulps of 1
    return p / p.sum()


def powerlaw(alpha: float, k_min: int, k_max: int) -> DegreeDistribution:
    """Truncated power law P(k) ~ k^-alpha, normalized in log space."""
    if alpha < 0 or not math.isfinite(alpha):
        raise ValidationError(f"power-law exponent must be finite and >= 0, got {alpha}")
    if k_min < 1 or k_max < k_min:
        raise ValidationError(f"invalid support [{k_min}, {k_max}]")
    k = np.arange(k_min, k_max + 1, dtype=float)
    logw = -alpha * np.log(k)
    w = np.exp(logw - logw.max())
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValidationError(f"power-law normalization failed for alpha={alpha}")
    return DegreeDistribution(k_min, k_max, _normalized(w))


def uniform(k_max: int) -> DegreeDistribution:
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    return DegreeDistribution(1, k_max, np.full(k_max, 1.0 / k_max))


def delta(k0: int) -> DegreeDistribution:
    if k0 < 1:
        raise ValidationError("degree must be >= 1")
    return DegreeDistribution(k0, k0, np.ones(1))


def from_text(text: str) -> DegreeDistribution:
    """Parse whitespace-separated ``k p`` lines. Gaps in the support are zero-filled."""
    pairs: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(f"line {lineno}: expected 'k p', got {raw!r}")
        try:
            kf = float(parts[0])
            p = float(parts[1])
        except ValueError:
            raise ValidationError(f"line {lineno}: unparsable pair {raw!r}") from None
        if kf != int(kf):
            raise ValidationError(f"line {lineno}: degree must be an integer")
        k = int(kf)
        if k < 1:
            raise ValidationError(f"line {lineno}: degree zero or negative is not allowed")
        if p < 0 or not math.isfinite(p):
            raise ValidationError(f"line {lineno}: negative or non-finite probability")
        pairs[k] = pairs.get(k, 0.0) + p
    if not pairs:
        raise ValidationError("empty degree distribution")
    k_min, k_max = min(pairs), max(pairs)
    probs = np.zeros(k_max - k_min + 1)
    for k, p in pairs.items():
        probs[k - k_min] = p
    total = probs.sum()
    if total <= 0:
        raise ValidationError("probabilities sum to zero")
    if abs(total - 1.0) > 1e-9:
        log.warning("degree probabilities sum to %.12g; renormalizing", total)
    return DegreeDistribution(k_min, k_max, _normalized(probs))


def from_file(path) -> DegreeDistribution:
    with open(path, encoding="utf-8") as fh:
        return from_text(fh.read())


def to_text(d: DegreeDistribution) -> str:
    return "".join(f"{k} {p!r}\n" for k, p in zip(d.degrees.tolist(), d.probs.tolist()))


def moments(d: DegreeDistribution) -> tuple[float, float, float, float]:
    """Return (<k>, <k^2>, sigma, cv)."""
    k = d.degrees.astype(float)
    m1 = float(d.probs @ k)
    m2 = float(d.probs @ (k * k))
    sigma = math.sqrt(max(m2 - m1 * m1, 0.0))
    return m1, m2, sigma, sigma / m1


def coefficient_of_variation(alpha: float, k_min: int, k_max: int) -> float:
    return moments(powerlaw(alpha, k_min, k_max))[3]


_ALPHA_LO, _ALPHA_HI = 0.01, 6.0


def solve_exponent_for_cv(cv_target: float, k_min: int, k_max: int, tol: float = 1e-6) -> float:
    """Power-law exponent on ``[k_min, k_max]`` whose coefficient of variation is ``cv_target``.

    The discrete cv is unimodal in the exponent. We search the rising branch
    ``[0.01, alpha_peak]``, where raising k_max at fixed cv lowers the exponent.
    """
    if k_max <= k_min:
        raise ValidationError("cv is identically 0 on a single-degree support")
    peak = minimize_scalar(
        lambda a: -coefficient_of_variation(a, k_min, k_max),
        bounds=(_ALPHA_LO, _ALPHA_HI),
        method="bounded",
        options={"xatol": 1e-10},
    )
    a_hi = float(peak.x)
    lo_cv = coefficient_of_variation(_ALPHA_LO, k_min, k_max)
    hi_cv = coefficient_of_variation(a_hi, k_min, k_max)
    if not (lo_cv <= cv_target <= hi_cv):
        raise ValidationError(
            f"cv={cv_target} not reachable on [{k_min}, {k_max}]: "
            f"achievable range is [{lo_cv:.6g} (alpha={_ALPHA_LO}), {hi_cv:.6g} (alpha={a_hi:.6g})]"
        )
    a_lo = _ALPHA_LO
    for _ in range(200):
        mid = 0.5 * (a_lo + a_hi)
        c = coefficient_of_variation(mid, k_min, k_max)
        if abs(c - cv_target) <= tol or a_hi - a_lo < 1e-14:
            return mid
        if c < cv_target:
            a_lo = mid
        else:
            a_hi = mid
    return 0.5 * (a_lo + a_hi)


def _kv(body: str) -> dict[str, str]:
    out = {}
    if not body:
        return out
    for item in body.split(","):
        if "=" not in item:
            raise ValidationError(f"expected key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def parse_dist_spec(spec: str) -> DegreeDistribution:
    """Build a distribution from a CLI spec string such as ``powerlaw:alpha=2.4,kmin=1,kmax=1000``."""
    kind, _, body = spec.partition(":")
    kind = kind.strip()
    try:
        if kind == "file":
            return from_file(body)
        kv = _kv(body)
        if kind == "powerlaw":
            return powerlaw(float(kv["alpha"]), int(kv.get("kmin", 1)), int(kv["kmax"]))
        if kind == "powerlaw_cv":
            kmin, kmax = int(kv.get("kmin", 1)), int(kv["kmax"])
            return powerlaw(solve_exponent_for_cv(float(kv["cv"]), kmin, kmax), kmin, kmax)
        if kind == "uniform":
            return uniform(int(kv["kmax"]))
        if kind == "delta":
            return delta(int(kv["k"]))
    except KeyError as e:
        raise ValidationError(f"distribution spec {spec!r} is missing {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, ValidationError):
            raise
        raise ValidationError(f"bad distribution spec {spec!r}: {e}") from None
    raise ValidationError(f"unknown distribution kind {kind!r}")
