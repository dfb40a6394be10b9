"""Pairwise transfer kernels.

A kernel maps an ordered pair of individual states (x1, x2) to a probability
mixture over the post-transfer state of one participant.  Two rules are
built in, plus their probabilistic mixture and smeared ("distributed")
variants:

* robin_hood: the richer party gives a fraction f of the wealth gap to the
  poorer one; pair differences contract by (1 - 2f).
* sheriff: the richer party takes a fraction f of the gap from the poorer
  one; differences expand by (1 + 2f).

Every kernel here satisfies, for all (x1, x2): outcome weights sum to 1 and
the outcome mean equals (x1 + x2) / 2, so interactions conserve headcount
and total transferable quantity.  Kernels are immutable value objects;
outcome evaluation is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import InvalidConfigError, InvalidInputError


class PointOutcome(NamedTuple):
    weight: float
    position: float


class DistributedOutcome(NamedTuple):
    weight: float
    shift: float


class AffineTerm(NamedTuple):
    """One mixture component: outcome position a*x1 + (1-a)*x2 with the given
    probability weight.  The solvers vectorize over these."""
    weight: float
    a: float


def _check_fraction(f, name="f"):
    if not (0.0 < f < 1.0) or not np.isfinite(f):
        raise InvalidConfigError(f"transfer fraction {name} must lie in (0, 1), got {f}")
    return float(f)


def _merge_point_outcomes(outcomes):
    """Collapse outcomes at exactly equal positions (degenerate cases such as
    x1 == x2, or robin_hood with f = 1/2)."""
    merged: dict[float, float] = {}
    for w, p in outcomes:
        merged[p] = merged.get(p, 0.0) + w
    return [PointOutcome(w, p) for p, w in sorted(merged.items())]


class BaseDensity:
    """Mean-zero unit-mass probability density with compact support
    [-halfwidth, halfwidth], used to smear point outcomes.

    The constructor checks unit mass and zero mean by quadrature at 1e-8.
    """

    def __init__(self, pdf: Callable[[float], float], halfwidth: float,
                 shape: str = "custom", quad_tol: float = 1e-8):
        if not (halfwidth > 0.0) or not np.isfinite(halfwidth):
            raise InvalidConfigError(f"halfwidth must be positive, got {halfwidth}")
        self.pdf = pdf
        self.halfwidth = float(halfwidth)
        self.shape = shape
        total, _ = quad(pdf, -halfwidth, halfwidth, limit=200)
        mean, _ = quad(lambda x: x * pdf(x), -halfwidth, halfwidth, limit=200)
        if abs(total - 1.0) > quad_tol:
            raise InvalidConfigError(
                f"base density must integrate to 1, got {total!r}")
        if abs(mean) > quad_tol:
            raise InvalidConfigError(
                f"base density must have zero mean, got {mean!r}")

    @classmethod
    def triangular(cls, halfwidth: float) -> "BaseDensity":
        """Symmetric triangular density on [-w, w]: (w - |x|) / w^2."""
        if not (halfwidth > 0.0) or not np.isfinite(halfwidth):
            raise InvalidConfigError(f"halfwidth must be positive, got {halfwidth}")
        w = float(halfwidth)
        obj = cls.__new__(cls)
        obj.pdf = lambda x: max(0.0, (w - abs(x)) / (w * w))
        obj.halfwidth = w
        obj.shape = "triangular"
        return obj

    def quantile(self, q):
        """Inverse CDF; closed form for the triangular shape, numeric otherwise."""
        q = np.asarray(q, dtype=np.float64)
        w = self.halfwidth
        if self.shape == "triangular":
            lo = -w + w * np.sqrt(2.0 * q)
            hi = w - w * np.sqrt(2.0 * (1.0 - q))
            return np.where(q <= 0.5, lo, hi)
        # numeric CDF on a fine grid, then interpolate the inverse
        xs = np.linspace(-w, w, 4001)
        pdf = np.array([self.pdf(float(x)) for x in xs])
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(xs))])
        cdf /= cdf[-1]
        return np.interp(q, cdf, xs)

    def representative_offsets(self, n: int) -> np.ndarray:
        """n quantile-midpoint atoms of weight 1/n approximating the density."""
        q = (np.arange(n) + 0.5) / n
        return np.asarray(self.quantile(q), dtype=np.float64)

    def grid_samples(self, dx: float) -> np.ndarray:
        """Density sampled at offsets k*dx covering the support."""
        k = int(math.ceil(self.halfwidth / dx))
        xs = np.arange(-k, k + 1) * dx
        return np.array([self.pdf(float(x)) for x in xs])

    def __repr__(self):
        return f"BaseDensity({self.shape}, halfwidth={self.halfwidth:g})"


@dataclass(frozen=True)
class TransferKernel:
    """Base class; concrete kernels implement outcomes() and the solvers use
    affine_terms() / collapsed_terms()."""

    def outcomes(self, x1: float, x2: float):
        raise NotImplementedError

    @property
    def is_point(self) -> bool:
        return True

    def affine_terms(self) -> list[AffineTerm]:
        """Full mixture as (weight, a) pairs: outcome at a*x1 + (1-a)*x2."""
        raise NotImplementedError

    def collapsed_terms(self) -> list[AffineTerm]:
        """Affine terms with the (a, 1-a) exchange symmetry folded together,
        valid when both interaction slots carry the same measure."""
        terms = self.affine_terms()
        out = []
        seen = [False] * len(terms)
        for i, (w, a) in enumerate(terms):
            if seen[i]:
                continue
            partner = None
            for j in range(i + 1, len(terms)):
                if not seen[j] and terms[j].a == 1.0 - a and terms[j].weight == w:
                    partner = j
                    break
            if partner is not None:
                seen[partner] = True
                out.append(AffineTerm(2.0 * w, a))
            else:
                out.append(AffineTerm(w, a))
        return out


@dataclass(frozen=True)
class RobinHood(TransferKernel):
    f: float

    def __post_init__(self):
        _check_fraction(self.f)

    def outcomes(self, x1, x2):
        return outcomes_rh(x1, x2, self.f)

    def affine_terms(self):
        if self.f == 0.5:
            # both Dirac outcomes coincide at the midpoint
            return [AffineTerm(1.0, 0.5)]
        return [AffineTerm(0.5, self.f), AffineTerm(0.5, 1.0 - self.f)]


@dataclass(frozen=True)
class Sheriff(TransferKernel):
    f: float

    def __post_init__(self):
        _check_fraction(self.f)

    def outcomes(self, x1, x2):
        return outcomes_sn(x1, x2, self.f)

    def affine_terms(self):
        return [AffineTerm(0.5, -self.f), AffineTerm(0.5, 1.0 + self.f)]


@dataclass(frozen=True)
class Mixed(TransferKernel):
    """Robin Hood with probability p, sheriff with probability 1-p."""

    p: float
    f1: float
    f2: float

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0) or not np.isfinite(self.p):
            raise InvalidConfigError(f"mixture probability p must lie in [0, 1], got {self.p}")
        _check_fraction(self.f1, "f1")
        _check_fraction(self.f2, "f2")

    def outcomes(self, x1, x2):
        return outcomes_mixed(x1, x2, self.p, self.f1, self.f2)

    def affine_terms(self):
        terms = []
        if self.p > 0.0:
            for w, a in RobinHood(self.f1).affine_terms():
                terms.append(AffineTerm(w * self.p, a))
        if self.p < 1.0:
            for w, a in Sheriff(self.f2).affine_terms():
                terms.append(AffineTerm(w * (1.0 - self.p), a))
        return terms


@dataclass(frozen=True)
class _DistributedKernel(TransferKernel):
    f: float
    g: BaseDensity

    def __post_init__(self):
        _check_fraction(self.f)
        if not isinstance(self.g, BaseDensity):
            raise InvalidConfigError("distributed kernels need a BaseDensity g")

    @property
    def is_point(self):
        return False

    @property
    def point_kernel(self) -> TransferKernel:
        raise NotImplementedError

    def outcomes(self, x1, x2):
        return outcomes_distributed(x1, x2, self)

    def affine_terms(self):
        return self.point_kernel.affine_terms()


@dataclass(frozen=True)
class DistributedRobinHood(_DistributedKernel):
    @property
    def point_kernel(self):
        return RobinHood(self.f)


@dataclass(frozen=True)
class DistributedSheriff(_DistributedKernel):
    @property
    def point_kernel(self):
        return Sheriff(self.f)


# -- outcome rules ----------------------------------------------------------------


def outcomes_rh(x1: float, x2: float, f: float) -> list[PointOutcome]:
    """Robin Hood outcomes: half weight each at x2 - f(x2-x1) and x1 - f(x1-x2)."""
    _check_fraction(f)
    return _merge_point_outcomes([
        (0.5, x2 - f * (x2 - x1)),
        (0.5, x1 - f * (x1 - x2)),
    ])


def outcomes_sn(x1: float, x2: float, f: float) -> list[PointOutcome]:
    """Sheriff outcomes: half weight each at x2 + f(x2-x1) and x1 + f(x1-x2)."""
    _check_fraction(f)
    return _merge_point_outcomes([
        (0.5, x2 + f * (x2 - x1)),
        (0.5, x1 + f * (x1 - x2)),
    ])


def outcomes_mixed(x1: float, x2: float, p: float, f1: float, f2: float) -> list[PointOutcome]:
    """Mixture: Robin Hood outcomes with weight p/2 each plus sheriff outcomes
    with weight (1-p)/2 each; coincident positions merged."""
    if not (0.0 <= p <= 1.0) or not np.isfinite(p):
        raise InvalidConfigError(f"mixture probability p must lie in [0, 1], got {p}")
    _check_fraction(f1, "f1")
    _check_fraction(f2, "f2")
    raw = []
    if p > 0.0:
        raw += [(p * w, pos) for w, pos in outcomes_rh(x1, x2, f1)]
    if p < 1.0:
        raw += [((1.0 - p) * w, pos) for w, pos in outcomes_sn(x1, x2, f2)]
    return _merge_point_outcomes(raw)


def outcomes_distributed(x1: float, x2: float, kernel: _DistributedKernel) -> list[DistributedOutcome]:
    """Smeared outcomes: weight-1/2 copies of g centered on the point-kernel
    positions."""
    if not isinstance(kernel, _DistributedKernel):
        raise InvalidConfigError(
            f"outcomes_distributed needs a distributed kernel, got {type(kernel).__name__}")
    return [DistributedOutcome(w, p) for w, p in kernel.point_kernel.outcomes(x1, x2)]


# -- kernel axiom validator ---------------------------------------------------------


@dataclass
class ValidationReport:
    kernel: str
    n_pairs: int
    tol: float
    max_weight_deviation: float
    max_mean_deviation: float
    worst_pair: tuple
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = (self.max_weight_deviation <= self.tol
                       and self.max_mean_deviation <= self.tol)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.kernel}: {self.n_pairs} pairs, tol={self.tol:g}, "
                f"max |sum(w)-1|={self.max_weight_deviation:.3e}, "
                f"max |mean-(x1+x2)/2|={self.max_mean_deviation:.3e} "
                f"(worst at {self.worst_pair})")


def validate_assumption(kernel, sample_pairs: Sequence[tuple], tol: float = 1e-12) -> ValidationReport:
    """Check the kernel axioms on sample pairs: outcome weights sum to one and
    the outcome mean equals the pair midpoint.  Failures are reported, not
    raised."""
    if len(sample_pairs) == 0:
        raise InvalidInputError("validate_assumption needs at least one sample pair")
    mean_g = 0.0
    mass_g = 1.0
    if not getattr(kernel, "is_point", True):
        mass_g, _ = quad(kernel.g.pdf, -kernel.g.halfwidth, kernel.g.halfwidth, limit=200)
        mean_g, _ = quad(lambda x: x * kernel.g.pdf(x),
                         -kernel.g.halfwidth, kernel.g.halfwidth, limit=200)
    worst_w = -1.0
    worst_m = -1.0
    worst_pair = None
    for (x1, x2) in sample_pairs:
        outs = kernel.outcomes(x1, x2)
        wsum = math.fsum(w for w, _ in outs)
        if getattr(kernel, "is_point", True):
            mean = math.fsum(w * p for w, p in outs)
        else:
            # each component integrates to mass_g with mean shift + mean_g
            wsum = wsum * mass_g
            mean = math.fsum(w * (s + mean_g) for w, s in outs) * mass_g
        dw = abs(wsum - 1.0)
        dm = abs(mean - 0.5 * (x1 + x2))
        if max(dw, dm) > max(worst_w, worst_m):
            worst_pair = (x1, x2)
        worst_w = max(worst_w, dw)
        worst_m = max(worst_m, dm)
    return ValidationReport(kernel=repr(kernel), n_pairs=len(sample_pairs), tol=tol,
                            max_weight_deviation=worst_w, max_mean_deviation=worst_m,
                            worst_pair=worst_pair)


# -- config-block parsing -------------------------------------------------------------

_KINDS = ("robin_hood", "sheriff", "mixed", "distributed_rh", "distributed_sn")


def kernel_from_spec(spec: dict) -> TransferKernel:
    """Build a kernel from its config block, e.g.
    {"kind": "mixed", "p": 0.5, "f1": 0.1, "f2": 0.1} or
    {"kind": "distributed_rh", "f": 0.1, "g": {"shape": "triangular", "halfwidth": 0.05}}.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise InvalidConfigError(f"kernel spec must be an object with a 'kind', got {spec!r}")
    kind = spec["kind"]
    if kind == "robin_hood":
        if "f" not in spec:
            _missing(spec, "f")
        return RobinHood(f=spec["f"])
    if kind == "sheriff":
        if "f" not in spec:
            _missing(spec, "f")
        return Sheriff(f=spec["f"])
    if kind == "mixed":
        for key in ("p", "f1", "f2"):
            if key not in spec:
                _missing(spec, key)
        return Mixed(p=spec["p"], f1=spec["f1"], f2=spec["f2"])
    if kind in ("distributed_rh", "distributed_sn"):
        if "f" not in spec:
            _missing(spec, "f")
        g = base_density_from_spec(spec.get("g"))
        cls = DistributedRobinHood if kind == "distributed_rh" else DistributedSheriff
        return cls(f=spec["f"], g=g)
    raise InvalidConfigError(f"unknown kernel kind {kind!r}; expected one of {_KINDS}")


def _missing(spec, key):
    raise InvalidConfigError(f"kernel spec {spec.get('kind')!r} is missing field {key!r}")


def base_density_from_spec(spec) -> BaseDensity:
    if not isinstance(spec, dict):
        raise InvalidConfigError(f"'g' must be an object like "
                                 f"{{'shape': 'triangular', 'halfwidth': 0.05}}, got {spec!r}")
    shape = spec.get("shape", "triangular")
    if shape != "triangular":
        raise InvalidConfigError(f"unknown base density shape {shape!r}")
    if "halfwidth" not in spec:
        raise InvalidConfigError("'g' is missing field 'halfwidth'")
    return BaseDensity.triangular(spec["halfwidth"])


def kernel_to_spec(kernel: TransferKernel) -> dict:
    if isinstance(kernel, RobinHood):
        return {"kind": "robin_hood", "f": kernel.f}
    if isinstance(kernel, Sheriff):
        return {"kind": "sheriff", "f": kernel.f}
    if isinstance(kernel, Mixed):
        return {"kind": "mixed", "p": kernel.p, "f1": kernel.f1, "f2": kernel.f2}
    if isinstance(kernel, DistributedRobinHood):
        return {"kind": "distributed_rh", "f": kernel.f,
                "g": {"shape": kernel.g.shape, "halfwidth": kernel.g.halfwidth}}
    if isinstance(kernel, DistributedSheriff):
        return {"kind": "distributed_sn", "f": kernel.f,
                "g": {"shape": kernel.g.shape, "halfwidth": kernel.g.halfwidth}}
    raise InvalidConfigError(f"cannot serialize kernel {kernel!r}")
