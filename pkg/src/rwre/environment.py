"""Quenched environments, their potential, and Brownian approximating paths.

An environment is an i.i.d. disorder sequence ``omega_1 .. omega_n`` together
with the drift parameters ``(b, alpha)``.  The walk at site ``y >= 1`` steps
left with probability ``q_y = logistic(omega_y - b * y**-alpha)`` and right
otherwise; site 0 is reflecting (``q_0 = 0``).  The potential is the prefix
sum ``U(x) = sum_{y <= x} (omega_y - b * y**-alpha)``.

Gaussian environments and potential paths built from the same seed share
their standard-normal draws, so with a unit grid ``sum_{i<=k} omega_i`` and
``sigma * W(k)`` coincide.  That is the exact coupling used by
:func:`check_gamma_event`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import rng as _rng

FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    """A parameter set that violates the model's standing assumptions."""


class CoverageError(ValueError):
    """An environment or path too short for the requested range."""


# ---------------------------------------------------------------------------
# disorder families


@dataclass(frozen=True)
class Rademacher:
    c: float = 1.0
    family = "rademacher"

    def __post_init__(self):
        if not self.c > 0:
            raise ConfigurationError("Rademacher amplitude must be positive (zero variance violates Condition S)")

    @property
    def mean(self):
        return 0.0

    @property
    def variance(self):
        return self.c * self.c

    def mgf(self, theta):
        return np.cosh(np.asarray(theta) * self.c)

    def sample(self, gen, n):
        return self.c * (2.0 * gen.integers(0, 2, size=n) - 1.0)

    def to_dict(self):
        return {"family": self.family, "c": self.c}


@dataclass(frozen=True)
class CenteredUniform:
    half_width: float
    family = "uniform"

    def __post_init__(self):
        if not self.half_width > 0:
            raise ConfigurationError("uniform half-width must be positive (zero variance violates Condition S)")

    @property
    def mean(self):
        return 0.0

    @property
    def variance(self):
        return self.half_width ** 2 / 3.0

    def mgf(self, theta):
        x = np.asarray(theta, dtype=float) * self.half_width
        # sinh(x)/x with the removable singularity at 0
        return np.where(x == 0.0, 1.0, np.sinh(x) / np.where(x == 0.0, 1.0, x))

    def sample(self, gen, n):
        return gen.uniform(-self.half_width, self.half_width, size=n)

    def to_dict(self):
        return {"family": self.family, "half_width": self.half_width}


@dataclass(frozen=True)
class Gaussian:
    std: float = 1.0
    family = "gaussian"

    def __post_init__(self):
        if not self.std > 0:
            raise ConfigurationError("Gaussian std must be positive (zero variance violates Condition S)")

    @property
    def mean(self):
        return 0.0

    @property
    def variance(self):
        return self.std ** 2

    def mgf(self, theta):
        return np.exp(0.5 * (np.asarray(theta) * self.std) ** 2)

    def sample(self, gen, n):
        return self.std * gen.standard_normal(n)

    def to_dict(self):
        return {"family": self.family, "std": self.std}


@dataclass(frozen=True)
class TwoPoint:
    """``values[0]`` with probability ``p``, ``values[1]`` otherwise."""

    p: float
    values: tuple
    family = "two_point"

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != 2:
            raise ConfigurationError("two-point law needs exactly two values")
        if not 0.0 < self.p < 1.0:
            raise ConfigurationError("two-point probability must lie in (0, 1)")
        scale = max(abs(v) for v in self.values)
        if abs(self.mean) > 1e-12 * max(scale, 1.0):
            raise ConfigurationError(f"two-point law has mean {self.mean!r}; Condition S needs mean 0")
        if not self.variance > 0:
            raise ConfigurationError("two-point law is degenerate; Condition S needs positive variance")

    @property
    def mean(self):
        v0, v1 = self.values
        return self.p * v0 + (1.0 - self.p) * v1

    @property
    def variance(self):
        v0, v1 = self.values
        return self.p * v0 * v0 + (1.0 - self.p) * v1 * v1 - self.mean ** 2

    def mgf(self, theta):
        v0, v1 = self.values
        th = np.asarray(theta)
        return self.p * np.exp(th * v0) + (1.0 - self.p) * np.exp(th * v1)

    def sample(self, gen, n):
        v0, v1 = self.values
        return np.where(gen.random(n) < self.p, v0, v1)

    def to_dict(self):
        return {"family": self.family, "p": self.p, "values": list(self.values)}


_FAMILIES = {cls.family: cls for cls in (Rademacher, CenteredUniform, Gaussian, TwoPoint)}


def distribution_from_dict(d):
    d = dict(d)
    try:
        cls = _FAMILIES[d.pop("family")]
    except KeyError as exc:
        raise ConfigurationError(f"unknown disorder family {exc.args[0]!r}; expected one of {sorted(_FAMILIES)}") from None
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {cls.family}: {exc}") from None


# ---------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class EnvSpec:
    distribution: object = field(default_factory=Rademacher)
    b: float = 1.0
    alpha: float = 0.25
    n_sites: int = 1000
    theta0_check: float = 1.0

    def __post_init__(self):
        if not self.b > 0:
            raise ConfigurationError(f"b must be positive, got {self.b!r}")
        if not 0.0 < self.alpha < 0.5:
            raise ConfigurationError(f"alpha must lie in the open interval (0, 1/2), got {self.alpha!r}")
        if int(self.n_sites) != self.n_sites or self.n_sites < 1:
            raise ConfigurationError(f"n_sites must be a positive integer, got {self.n_sites!r}")
        if not self.theta0_check > 0:
            raise ConfigurationError("theta0_check must be positive")
        var = self.distribution.variance
        if abs(self.distribution.mean) > 1e-12 * max(1.0, math.sqrt(abs(var))):
            raise ConfigurationError("disorder must be centred (Condition S)")
        if not (var > 0 and math.isfinite(var)):
            raise ConfigurationError("disorder variance must be finite and positive (Condition S)")
        # every offered family has an entire mgf; this guards against overflowing parameters
        if not np.all(np.isfinite(self.distribution.mgf([-self.theta0_check / 2, self.theta0_check / 2]))):
            raise ConfigurationError("disorder mgf is not finite on |theta| < theta0_check (Condition K)")

    @property
    def sigma(self):
        return math.sqrt(self.distribution.variance)

    def to_dict(self):
        return {
            "distribution": self.distribution.to_dict(),
            "b": self.b,
            "alpha": self.alpha,
            "n_sites": int(self.n_sites),
            "theta0_check": self.theta0_check,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        dist = distribution_from_dict(d.pop("distribution", {"family": "rademacher"}))
        return cls(distribution=dist, **d)


def drift_increments(b, alpha, n):
    """``b * y**-alpha`` for ``y = 1 .. n``."""
    return b * np.arange(1, n + 1, dtype=float) ** (-alpha)


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Environment:
    spec: EnvSpec
    seed: int
    omega: np.ndarray
    U: np.ndarray

    @property
    def n_sites(self):
        return self.spec.n_sites

    @property
    def b(self):
        return self.spec.b

    @property
    def alpha(self):
        return self.spec.alpha

    @property
    def sigma(self):
        return self.spec.sigma

    @property
    def increments(self):
        """Log-odds ``ln(q_y / (1 - q_y)) = omega_y - b y^-alpha`` for ``y = 1 .. n``."""
        return self.omega - drift_increments(self.b, self.alpha, self.n_sites)

    @property
    def q(self):
        """Left-jump probabilities ``q_0 .. q_n`` (``q_0 = 0``)."""
        q = np.empty(self.n_sites + 1)
        q[0] = 0.0
        q[1:] = expit(self.increments)
        return q

    def to_dict(self, include_omega=False):
        d = {
            "format": "rwre.environment",
            "version": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "seed": int(self.seed),
        }
        if include_omega:
            d["omega"] = [float(x) for x in self.omega]
        return d

    def to_json(self, include_omega=False):
        return json.dumps(self.to_dict(include_omega), indent=2)

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != "rwre.environment":
            raise ConfigurationError("not a serialized environment")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported environment format version {d.get('version')!r}")
        env = sample_environment(EnvSpec.from_dict(d["spec"]), d["seed"])
        if "omega" in d and not np.array_equal(np.asarray(d["omega"], dtype=float), env.omega):
            raise ConfigurationError("stored disorder does not match regeneration from (spec, seed)")
        return env

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def environment_from_omega(spec, omega, seed=0):
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (spec.n_sites,):
        raise ConfigurationError(f"omega must have length n_sites={spec.n_sites}")
    U = np.empty(spec.n_sites + 1)
    U[0] = 0.0
    # np.cumsum is a sequential left-to-right recurrence
    np.cumsum(omega - drift_increments(spec.b, spec.alpha, spec.n_sites), out=U[1:])
    return Environment(spec, int(seed), _readonly(omega.copy()), _readonly(U))


def sample_environment(spec, seed):
    """Draw one quenched environment; identical ``(spec, seed)`` give identical output."""
    if not isinstance(spec, EnvSpec):
        raise ConfigurationError("spec must be an EnvSpec")
    gen = _rng.generator(seed)
    omega = np.asarray(spec.distribution.sample(gen, spec.n_sites), dtype=float)
    return environment_from_omega(spec, omega, seed)


def jump_prob(env, y):
    """``q_y``, recovered from the potential as ``logistic(U(y) - U(y-1))``."""
    y = int(y)
    if not 0 <= y <= env.n_sites:
        raise IndexError(f"site {y} outside [0, {env.n_sites}]")
    if y == 0:
        return 0.0
    return float(expit(env.U[y] - env.U[y - 1]))


# ---------------------------------------------------------------------------
# continuous approximating potential


@dataclass(frozen=True, eq=False)
class PotentialPath:
    grid_step: float
    values: np.ndarray
    sigma: float
    b: float
    alpha: float
    brownian_seed: int

    @property
    def grid(self):
        return self.grid_step * np.arange(self.values.size)

    @property
    def length(self):
        return self.grid_step * (self.values.size - 1)

    def drift(self):
        return self.b / (1.0 - self.alpha) * self.grid ** (1.0 - self.alpha)

    def noise(self):
        """``sigma * W`` at the grid points (the path with its drift removed)."""
        return self.values + self.drift()

    def index_range(self, lo, hi):
        """Grid indices ``k`` with ``lo <= k * grid_step <= hi``; raises if ``hi`` is not covered."""
        if hi > self.length * (1 + 1e-12):
            raise CoverageError(f"path covers [0, {self.length:g}] but [{lo:g}, {hi:g}] was requested")
        i0 = max(0, math.ceil(lo / self.grid_step - 1e-9))
        i1 = min(self.values.size - 1, math.floor(hi / self.grid_step + 1e-9))
        return i0, i1


def sample_potential_path(sigma, b, alpha, length, grid_step=1.0, seed=0):
    """Sample ``V(x) = sigma W(x) - b/(1-alpha) x^(1-alpha)`` on a uniform grid covering ``[0, length]``."""
    if not grid_step > 0:
        raise ConfigurationError("grid_step must be positive")
    if not length > 0:
        raise ConfigurationError("length must be positive")
    if sigma < 0:
        raise ConfigurationError("sigma must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError("alpha must lie in (0, 1)")
    n = math.ceil(length / grid_step - 1e-9)
    x = grid_step * np.arange(n + 1)
    values = np.zeros(n + 1)
    if sigma > 0:
        z = _rng.generator(seed).standard_normal(n)
        np.cumsum(z * math.sqrt(grid_step), out=values[1:])
        values *= sigma
    values -= b / (1.0 - alpha) * x ** (1.0 - alpha)
    return PotentialPath(float(grid_step), _readonly(values), float(sigma), float(b), float(alpha), int(seed))


def coupled_environment(path, n_sites=None):
    """Gaussian environment whose disorder is the path's Brownian increments over unit intervals.

    This is the exact Gaussian coupling: ``sum_{i<=k} omega_i = sigma W(k)``.
    """
    per_unit = 1.0 / path.grid_step
    step = round(per_unit)
    if abs(per_unit - step) > 1e-9:
        raise ConfigurationError("coupling needs a grid step that divides 1")
    avail = int(path.length + 1e-9)
    n = avail if n_sites is None else int(n_sites)
    if n > avail:
        raise CoverageError(f"path supports {avail} unit increments, {n} requested")
    noise = path.noise()[: n * step + 1 : step]
    spec = EnvSpec(Gaussian(path.sigma), path.b, path.alpha, n)
    return environment_from_omega(spec, np.diff(noise), path.brownian_seed)


def series_integral_gap(alpha, x):
    """``|sum_{i<=floor(x)} i^-alpha - int_1^x u^-alpha du|`` for ``x >= 1``."""
    if x < 1:
        raise ValueError("x must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    s = math.fsum(np.arange(1, math.floor(x) + 1, dtype=float) ** (-alpha))
    integral = (x ** (1.0 - alpha) - 1.0) / (1.0 - alpha)
    return abs(s - integral)


def series_integral_gaps(alpha, n):
    """The gap at every integer ``x = 1 .. n`` (vectorised scan).

    The partial sums and the integral both grow like ``n^(1-alpha)`` while the
    gap stays O(1), so the scan runs in extended precision.
    """
    i = np.arange(1, n + 1, dtype=np.longdouble)
    s = np.cumsum(i ** (-alpha))
    return np.abs(s - (i ** (1.0 - alpha) - 1.0) / (1.0 - alpha)).astype(float)


def default_gamma_exponent(alpha):
    return math.ceil(1.0 / alpha) + 1


def coupling_gap(env, path, upto):
    """``max |sum_{i<=floor(x)} omega_i - sigma W(x)|`` over grid points ``x <= upto``."""
    _, i1 = path.index_range(0.0, upto)
    if math.floor(upto) > env.n_sites:
        raise CoverageError(f"environment has {env.n_sites} sites, coupling range needs {math.floor(upto)}")
    x = path.grid[: i1 + 1]
    partial = np.concatenate(([0.0], np.cumsum(env.omega)))
    sums = partial[np.floor(x + 1e-9).astype(np.int64)]
    return float(np.max(np.abs(sums - path.noise()[: i1 + 1])))


def potential_gap(env, path, upto):
    """``max |V(x) - U(x)|`` over grid points ``x <= upto``."""
    _, i1 = path.index_range(0.0, upto)
    if math.floor(upto) > env.n_sites:
        raise CoverageError(f"environment has {env.n_sites} sites, range needs {math.floor(upto)}")
    x = path.grid[: i1 + 1]
    u = env.U[np.floor(x + 1e-9).astype(np.int64)]
    return float(np.max(np.abs(path.values[: i1 + 1] - u)))


def check_gamma_event(env, path, t, K=10.0, M=None):
    """Whether the disorder sums stay within ``K ln ln t`` of ``sigma W`` on ``[0, ln^M t]``."""
    if not t > math.e:
        raise ValueError("t must exceed e")
    if M is None:
        M = default_gamma_exponent(env.alpha)
    upto = math.log(t) ** M
    return coupling_gap(env, path, upto) <= K * math.log(math.log(t))
