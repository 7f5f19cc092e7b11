"""Bregman generators and divergences used as calibration distances.

Six generators are supported::

    kind                  G(u)              g(u) = G'(u)      domain
    quadratic             u^2 / 2           u                 (-inf, inf)
    kullback_leibler      u log u           log u + 1         (0, inf)
    empirical_likelihood  -log u            -1/u              (0, inf)
    hellinger             (sqrt(u) - 1)^2   1 - u^(-1/2)      (0, inf)
    inverse               1 / (2u)          -u^(-2) / 2       (0, inf)
    renyi (alpha > 0)     u^(a+1) / (a+1)   u^a               (0, inf)

A generator is written ``kind[:alpha]`` on the command line and in config
files, e.g. ``renyi:0.5`` or ``kl``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = (
    "quadratic",
    "kullback_leibler",
    "empirical_likelihood",
    "hellinger",
    "inverse",
    "renyi",
)

# integer codes shared with the compiled kernels
KIND_CODES = {kind: code for code, kind in enumerate(KINDS)}

_ALIASES = {
    "quadratic": "quadratic",
    "quad": "quadratic",
    "kl": "kullback_leibler",
    "kullback_leibler": "kullback_leibler",
    "kullback-leibler": "kullback_leibler",
    "el": "empirical_likelihood",
    "empirical_likelihood": "empirical_likelihood",
    "empirical-likelihood": "empirical_likelihood",
    "hellinger": "hellinger",
    "inverse": "inverse",
    "renyi": "renyi",
}

_SHORT_NAMES = {
    "quadratic": "quadratic",
    "kullback_leibler": "kl",
    "empirical_likelihood": "el",
    "hellinger": "hellinger",
    "inverse": "inverse",
    "renyi": "renyi",
}


class DomainError(ValueError):
    """An argument lies outside the domain (or image) of a generator."""


def _as_float(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _out(arr, scalar):
    return float(arr) if scalar else arr


@dataclass(frozen=True)
class Generator:
    """A strictly convex generator ``G`` and the maps derived from it.

    All evaluation methods accept scalars or arrays and are vectorised
    elementwise; scalar input gives a Python float back.

    Parameters
    ----------
    kind : str
        One of :data:`KINDS` (aliases such as ``"kl"`` are accepted).
    alpha : float, optional
        Exponent of the Renyi generator. Required iff ``kind == "renyi"``.
    """

    kind: str
    alpha: Optional[float] = None
    code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = _ALIASES.get(str(self.kind).strip().lower())
        if kind is None:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "kind", kind)
        if kind == "renyi":
            if self.alpha is None:
                raise ValueError("the renyi generator needs a positive alpha, e.g. 'renyi:0.5'")
            alpha = float(self.alpha)
            if not (math.isfinite(alpha) and alpha > 0):
                raise ValueError(f"renyi alpha must be a finite positive real, got {self.alpha!r}")
            object.__setattr__(self, "alpha", alpha)
        elif self.alpha is not None:
            raise ValueError(f"alpha is only meaningful for the renyi generator, not {kind}")
        object.__setattr__(self, "code", KIND_CODES[kind])

    @classmethod
    def parse(cls, text: str) -> "Generator":
        """Build a generator from its ``kind[:alpha]`` string form."""
        if isinstance(text, Generator):
            return text
        kind, _, alpha = str(text).partition(":")
        if alpha:
            try:
                value = float(alpha)
            except ValueError:
                raise ValueError(f"bad generator alpha in {text!r}") from None
            return cls(kind, value)
        return cls(kind)

    def __str__(self) -> str:
        name = _SHORT_NAMES[self.kind]
        if self.kind == "renyi":
            return f"{name}:{self.alpha:g}"
        return name

    # -- domains -----------------------------------------------------------

    @property
    def domain(self) -> tuple[float, float]:
        """Open interval of admissible weights."""
        if self.kind == "quadratic":
            return (-math.inf, math.inf)
        return (0.0, math.inf)

    @property
    def image(self) -> tuple[float, float]:
        """Open interval ``g(domain)``; the admissible dual arguments."""
        return {
            "quadratic": (-math.inf, math.inf),
            "kullback_leibler": (-math.inf, math.inf),
            "empirical_likelihood": (-math.inf, 0.0),
            "hellinger": (-math.inf, 1.0),
            "inverse": (-math.inf, 0.0),
            "renyi": (0.0, math.inf),
        }[self.kind]

    def in_domain(self, u) -> np.ndarray:
        u = _as_float(u)
        lo, hi = self.domain
        return np.isfinite(u) & (u > lo) & (u < hi)

    def in_image(self, nu, margin: float = 0.0) -> np.ndarray:
        """Elementwise test that ``nu`` lies strictly inside ``g(domain)``.

        ``margin`` shrinks the interval from each finite end.
        """
        nu = _as_float(nu)
        lo, hi = self.image
        return np.isfinite(nu) & (nu > lo + margin) & (nu < hi - margin)

    def _check_domain(self, u, name="u"):
        if not np.all(self.in_domain(u)):
            lo, hi = self.domain
            raise DomainError(f"{name} outside the {self.kind} domain ({lo}, {hi})")

    def _check_image(self, nu):
        if not np.all(self.in_image(nu)):
            lo, hi = self.image
            raise DomainError(
                f"dual argument outside the image of g for {self.kind}: ({lo}, {hi})"
            )

    # -- closed forms --------------------------------------------------------

    def G(self, u):
        """Generator value ``G(u)``."""
        scalar = np.ndim(u) == 0
        u = _as_float(u)
        self._check_domain(u)
        k = self.kind
        if k == "quadratic":
            out = 0.5 * u * u
        elif k == "kullback_leibler":
            out = u * np.log(u)
        elif k == "empirical_likelihood":
            out = -np.log(u)
        elif k == "hellinger":
            out = (np.sqrt(u) - 1.0) ** 2
        elif k == "inverse":
            out = 0.5 / u
        else:
            a = self.alpha
            out = u ** (a + 1.0) / (a + 1.0)
        return _out(out, scalar)

    def g(self, u):
        """First derivative ``g(u) = G'(u)``."""
        scalar = np.ndim(u) == 0
        u = _as_float(u)
        self._check_domain(u)
        k = self.kind
        if k == "quadratic":
            out = u.copy()
        elif k == "kullback_leibler":
            out = np.log(u) + 1.0
        elif k == "empirical_likelihood":
            out = -1.0 / u
        elif k == "hellinger":
            out = 1.0 - 1.0 / np.sqrt(u)
        elif k == "inverse":
            out = -0.5 / (u * u)
        else:
            out = u**self.alpha
        return _out(out, scalar)

    def g_prime(self, u):
        """Second derivative ``g'(u) = G''(u)``; strictly positive on the domain."""
        scalar = np.ndim(u) == 0
        u = _as_float(u)
        self._check_domain(u)
        k = self.kind
        if k == "quadratic":
            out = np.ones_like(u)
        elif k == "kullback_leibler":
            out = 1.0 / u
        elif k == "empirical_likelihood":
            out = 1.0 / (u * u)
        elif k == "hellinger":
            out = 0.5 * u**-1.5
        elif k == "inverse":
            out = u**-3.0
        else:
            a = self.alpha
            out = a * u ** (a - 1.0)
        return _out(out, scalar)

    def g_inv(self, nu):
        """Analytic inverse of ``g``; the calibration map from dual to weight."""
        scalar = np.ndim(nu) == 0
        nu = _as_float(nu)
        self._check_image(nu)
        k = self.kind
        if k == "quadratic":
            out = nu.copy()
        elif k == "kullback_leibler":
            out = np.exp(nu - 1.0)
        elif k == "empirical_likelihood":
            out = -1.0 / nu
        elif k == "hellinger":
            out = (1.0 - nu) ** -2.0
        elif k == "inverse":
            out = (-2.0 * nu) ** -0.5
        else:
            out = nu ** (1.0 / self.alpha)
        return _out(out, scalar)

    def conjugate(self, nu):
        """Convex conjugate ``F(nu) = nu g^{-1}(nu) - G(g^{-1}(nu))``.

        Closed forms: quadratic ``nu^2/2``; KL ``exp(nu - 1)``; EL
        ``-1 - log(-nu)``; Hellinger ``nu / (1 - nu)``; inverse
        ``-sqrt(-2 nu)``; Renyi ``a/(a+1) nu^((a+1)/a)``.
        """
        scalar = np.ndim(nu) == 0
        nu = _as_float(nu)
        self._check_image(nu)
        k = self.kind
        if k == "quadratic":
            out = 0.5 * nu * nu
        elif k == "kullback_leibler":
            out = np.exp(nu - 1.0)
        elif k == "empirical_likelihood":
            out = -1.0 - np.log(-nu)
        elif k == "hellinger":
            out = nu / (1.0 - nu)
        elif k == "inverse":
            out = -np.sqrt(-2.0 * nu)
        else:
            a = self.alpha
            out = a / (a + 1.0) * nu ** ((a + 1.0) / a)
        return _out(out, scalar)

    def divergence(self, u, v):
        """Scalar Bregman divergence ``D_G(u || v)``, elementwise.

        Evaluated through per-kind closed forms, which avoid the
        cancellation in ``G(u) - G(v) - g(v)(u - v)`` when ``u`` is close
        to ``v``.
        """
        scalar = np.ndim(u) == 0 and np.ndim(v) == 0
        u = _as_float(u)
        v = _as_float(v)
        self._check_domain(u, "u")
        self._check_domain(v, "v")
        k = self.kind
        if k == "quadratic":
            out = 0.5 * (u - v) ** 2
        elif k == "kullback_leibler":
            out = u * np.log(u / v) - u + v
        elif k == "empirical_likelihood":
            r = u / v
            out = r - 1.0 - np.log(r)
        elif k == "hellinger":
            # (sqrt(u) - sqrt(v))^2 / sqrt(v), derived from G(u) = (sqrt(u) - 1)^2
            out = (np.sqrt(u) - np.sqrt(v)) ** 2 / np.sqrt(v)
        elif k == "inverse":
            out = (u - v) ** 2 / (2.0 * u * v * v)
        else:
            a = self.alpha
            out = (u ** (a + 1.0) - v ** (a + 1.0)) / (a + 1.0) - v**a * (u - v)
        out = np.where(u == v, 0.0, out)
        return _out(out, scalar)


def as_generator(gen) -> Generator:
    """Coerce a :class:`Generator` or its string form."""
    if isinstance(gen, Generator):
        return gen
    return Generator.parse(gen)


def eval_G(gen, u):
    return as_generator(gen).G(u)


def eval_g(gen, u):
    return as_generator(gen).g(u)


def eval_g_prime(gen, u):
    return as_generator(gen).g_prime(u)


def eval_g_inv(gen, nu):
    return as_generator(gen).g_inv(nu)


def divergence(gen, u, v) -> float:
    return as_generator(gen).divergence(u, v)


def separable_divergence(gen, omega, d) -> float:
    """Sum of coordinatewise divergences ``sum_j D_G(omega_j || d_j)``."""
    omega = np.asarray(omega, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if omega.shape != d.shape:
        raise ValueError(f"length mismatch: {omega.shape} vs {d.shape}")
    return float(np.sum(as_generator(gen).divergence(omega, d)))
