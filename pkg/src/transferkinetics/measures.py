"""Finitely-atomic signed measures on the real line.

A measure is a weighted sum of point masses, stored as a sorted position
array and a weight array.  Construction normalizes: atoms are sorted,
positions closer than ``merge_tol`` are merged (weight-magnitude-weighted
mean position, summed weight), and zero-weight atoms are dropped.  After
that the value is immutable, so every operation below is a pure function
and safe to share across threads.

Total mass and first moment survive every operation here exactly in real
arithmetic; in floats the drift is a few ulps per merge.
"""

from __future__ import annotations

import json
from typing import Callable, Iterable, NamedTuple, Sequence, TextIO, Union

import numpy as np

from ._fast import greedy_pair_merge
from .errors import EvaluationError, InvalidInputError

DEFAULT_MERGE_TOL = 1e-12

# Atoms with weight below this fraction of the total mass are absorbed into
# their nearest neighbor when compress() has to shrink a measure.  Without a
# floor, kernels that expand the support (the sheriff family) breed atoms
# whose weights underflow toward 1e-300 while their positions run away
# geometrically; those numerically-empty atoms would otherwise hog the
# compression budget.  Merging them is mass- and mean-conserving.
DEFAULT_WEIGHT_FLOOR = 1e-15


class Atom(NamedTuple):
    position: float
    weight: float


def _normalize_arrays(pos, w, tol):
    """Sort, merge positions closer than tol (coincident ones always merge),
    drop zero weights.  Returns new arrays."""
    order = np.argsort(pos, kind="stable")
    p = pos[order]
    w = w[order]
    if p.size > 1:
        gaps = np.diff(p)
        merge = (gaps < tol) | (gaps == 0.0)
        if merge.any():
            starts = np.empty(p.size, bool)
            starts[0] = True
            starts[1:] = ~merge
            gid = np.cumsum(starts) - 1
            wsum = np.bincount(gid, weights=w)
            aw = np.abs(w)
            asum = np.bincount(gid, weights=aw)
            psum = np.bincount(gid, weights=aw * p)
            safe = np.where(asum > 0.0, asum, 1.0)
            pout = np.where(asum > 0.0, psum / safe, p[starts])
            p, w = pout, wsum
    nz = w != 0.0
    if not nz.all():
        p = p[nz]
        w = w[nz]
    return p, w


class AtomicMeasure:
    """Finite signed measure as a normalized list of weighted point masses."""

    __slots__ = ("positions", "weights", "merge_tol")

    def __init__(self, positions, weights, merge_tol=DEFAULT_MERGE_TOL, *,
                 _normalized=False):
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        w = np.ascontiguousarray(weights, dtype=np.float64)
        if pos.ndim != 1 or w.ndim != 1 or pos.size != w.size:
            raise InvalidInputError(
                f"positions and weights must be 1-d arrays of equal length, "
                f"got shapes {pos.shape} and {w.shape}")
        if merge_tol < 0 or not np.isfinite(merge_tol):
            raise InvalidInputError(f"merge_tol must be finite and >= 0, got {merge_tol}")
        if pos.size and not (np.isfinite(pos).all() and np.isfinite(w).all()):
            raise InvalidInputError("atom positions and weights must be finite")
        if not _normalized:
            pos, w = _normalize_arrays(pos, w, merge_tol)
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "merge_tol", float(merge_tol))

    def __setattr__(self, name, value):
        raise AttributeError("AtomicMeasure is immutable")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple], merge_tol=DEFAULT_MERGE_TOL):
        atoms = list(atoms)
        if atoms:
            pos, w = zip(*((a[0], a[1]) for a in atoms))
        else:
            pos, w = (), ()
        return cls(np.array(pos, dtype=np.float64), np.array(w, dtype=np.float64),
                   merge_tol)

    @classmethod
    def zero(cls, merge_tol=DEFAULT_MERGE_TOL):
        return cls(np.empty(0), np.empty(0), merge_tol, _normalized=True)

    @classmethod
    def dirac(cls, position, weight=1.0, merge_tol=DEFAULT_MERGE_TOL):
        return cls(np.array([position], dtype=np.float64),
                   np.array([weight], dtype=np.float64), merge_tol)

    # -- basic queries ---------------------------------------------------------

    def __len__(self):
        return self.positions.size

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(float(p), float(w)) for p, w in zip(self.positions, self.weights)]

    @property
    def is_zero(self) -> bool:
        return self.positions.size == 0

    @property
    def is_nonnegative(self) -> bool:
        return bool((self.weights >= 0.0).all())

    def mass(self) -> float:
        """Total (signed) mass, i.e. the zeroth moment."""
        return float(self.weights.sum())

    def support(self) -> tuple[float, float]:
        if self.is_zero:
            raise InvalidInputError("zero measure has empty support")
        return float(self.positions[0]), float(self.positions[-1])

    def __repr__(self):
        n = len(self)
        if n <= 4:
            inner = ", ".join(f"({p:g}, {w:g})" for p, w in zip(self.positions, self.weights))
            return f"AtomicMeasure([{inner}])"
        return (f"AtomicMeasure(<{n} atoms on "
                f"[{self.positions[0]:g}, {self.positions[-1]:g}], "
                f"mass {self.mass():g}>)")

    def __eq__(self, other):
        if not isinstance(other, AtomicMeasure):
            return NotImplemented
        return (self.positions.shape == other.positions.shape
                and bool(np.all(self.positions == other.positions))
                and bool(np.all(self.weights == other.weights)))

    def __hash__(self):
        return hash((self.positions.tobytes(), self.weights.tobytes()))

    def allclose(self, other: "AtomicMeasure", rtol=1e-12, atol=0.0) -> bool:
        return (self.positions.shape == other.positions.shape
                and bool(np.allclose(self.positions, other.positions, rtol=rtol, atol=atol))
                and bool(np.allclose(self.weights, other.weights, rtol=rtol, atol=atol)))


class JordanPair(NamedTuple):
    """Jordan decomposition: disjointly supported nonnegative parts with
    original = positive_part - negative_part, exactly."""

    positive_part: AtomicMeasure
    negative_part: AtomicMeasure

    @property
    def merge_tol(self) -> float:
        return self.positive_part.merge_tol

    def reconstruct(self) -> AtomicMeasure:
        return add(self.positive_part, scale(self.negative_part, -1.0))

    def total_variation_measure(self) -> AtomicMeasure:
        return add(self.positive_part, self.negative_part)


# -- operations ----------------------------------------------------------------


def normalize(positions, weights, merge_tol=DEFAULT_MERGE_TOL) -> AtomicMeasure:
    """Build a normalized measure from raw atom arrays."""
    return AtomicMeasure(positions, weights, merge_tol)


def jordan_decompose(mu: AtomicMeasure) -> JordanPair:
    """Split into positive and negative parts (both stored nonnegative)."""
    pos_mask = mu.weights > 0.0
    neg_mask = ~pos_mask
    positive = AtomicMeasure(mu.positions[pos_mask], mu.weights[pos_mask],
                             mu.merge_tol, _normalized=True)
    negative = AtomicMeasure(mu.positions[neg_mask], -mu.weights[neg_mask],
                             mu.merge_tol, _normalized=True)
    return JordanPair(positive, negative)


def tv_norm(mu: AtomicMeasure) -> float:
    """Total variation norm: sum of absolute atom weights."""
    return float(np.abs(mu.weights).sum())


def dual_pairing(mu: AtomicMeasure, phi: Callable[[float], float]) -> float:
    """Integral of a bounded test function against the measure."""
    if mu.is_zero:
        return 0.0
    try:
        values = np.asarray(phi(mu.positions), dtype=np.float64)
        if values.shape != mu.positions.shape:
            raise TypeError
    except (TypeError, ValueError):
        values = np.array([float(phi(float(p))) for p in mu.positions])
    if not np.isfinite(values).all():
        raise EvaluationError("test function returned a non-finite value")
    return float(np.dot(values, mu.weights))


def moment(mu: AtomicMeasure, n: int) -> float:
    """n-th raw moment, sum of position^n * weight."""
    if n < 0 or n != int(n):
        raise InvalidInputError(f"moment order must be a nonnegative integer, got {n}")
    if n == 0:
        return mu.mass()
    if n == 1:
        return float(np.dot(mu.positions, mu.weights))
    return float(np.dot(mu.positions ** n, mu.weights))


def mean_position(mu: AtomicMeasure) -> float:
    m = mu.mass()
    if m == 0.0:
        raise InvalidInputError("mean undefined for zero-mass measure")
    return moment(mu, 1) / m


def variance(mu: AtomicMeasure) -> float:
    """Second central moment per unit mass (requires positive mass)."""
    m = mu.mass()
    if m <= 0.0:
        raise InvalidInputError("variance requires positive total mass")
    c = moment(mu, 1) / m
    return float(np.dot((mu.positions - c) ** 2, mu.weights) / m)


def add(mu: AtomicMeasure, nu: AtomicMeasure) -> AtomicMeasure:
    tol = max(mu.merge_tol, nu.merge_tol)
    return AtomicMeasure(np.concatenate([mu.positions, nu.positions]),
                         np.concatenate([mu.weights, nu.weights]), tol)


def scale(mu: AtomicMeasure, lam: float) -> AtomicMeasure:
    if not np.isfinite(lam):
        raise InvalidInputError(f"scale factor must be finite, got {lam}")
    if lam == 0.0:
        return AtomicMeasure.zero(mu.merge_tol)
    # positions unchanged and weights stay nonzero, so structure is preserved
    return AtomicMeasure(mu.positions, mu.weights * lam, mu.merge_tol,
                         _normalized=True)


class CompressResult(NamedTuple):
    measure: AtomicMeasure
    w1_displacement: float
    merged_gap_sum: float


def _absorb_negligible(pos, w, floor):
    """Merge atoms with weight < floor into their nearest heavier neighbor
    (ties to the left).  Mass and first moment are conserved exactly in real
    arithmetic; order is preserved because merged positions stay between the
    participating atoms."""
    tiny = w < floor
    if not tiny.any() or tiny.all():
        return pos, w
    big = np.flatnonzero(~tiny)
    bp = pos[big]
    ti = np.flatnonzero(tiny)
    if bp.size > 1:
        k = np.searchsorted(bp, pos[ti])
        k = np.clip(k, 1, bp.size - 1)
        tgt = np.where(pos[ti] - bp[k - 1] <= bp[k] - pos[ti], k - 1, k)
    else:
        tgt = np.zeros(ti.size, np.int64)
    addw = np.bincount(tgt, weights=w[ti], minlength=bp.size)
    addwp = np.bincount(tgt, weights=w[ti] * pos[ti], minlength=bp.size)
    neww = w[big] + addw
    safe = np.where(neww > 0.0, neww, 1.0)
    newp = np.where(neww > 0.0, (w[big] * bp + addwp) / safe, bp)
    return newp, neww


def compress_detailed(mu: AtomicMeasure, budget: int,
                      weight_floor=DEFAULT_WEIGHT_FLOOR) -> CompressResult:
    """As compress(), additionally reporting the W1 cost of the merges."""
    if budget < 1 or budget != int(budget):
        raise InvalidInputError(f"compression budget must be an integer >= 1, got {budget}")
    if not mu.is_nonnegative:
        raise InvalidInputError("compress requires a nonnegative measure")
    if len(mu) <= budget:
        return CompressResult(mu, 0.0, 0.0)
    pos, w = mu.positions, mu.weights
    if weight_floor > 0.0:
        pos, w = _absorb_negligible(pos, w, weight_floor * float(w.sum()))
    if pos.size > budget:
        pos, w, disp, gapsum = greedy_pair_merge(pos, w, int(budget))
    else:
        disp = gapsum = 0.0
    out = AtomicMeasure(pos, w, mu.merge_tol, _normalized=True)
    return CompressResult(out, float(disp), float(gapsum))


def compress(mu: AtomicMeasure, budget: int,
             weight_floor=DEFAULT_WEIGHT_FLOOR) -> AtomicMeasure:
    """Reduce to at most ``budget`` atoms by greedily merging the closest
    adjacent pair (ties broken at the lowest position) until within budget.

    Mass and first moment are preserved exactly; the measure moves by at most
    the summed merge cost in W1.  A measure already within budget is returned
    unchanged.  When compression is active, atoms lighter than
    ``weight_floor`` times the total mass are first absorbed into their
    nearest neighbor (see DEFAULT_WEIGHT_FLOOR); pass 0 to disable.
    """
    return compress_detailed(mu, budget, weight_floor).measure


def wasserstein1(mu: AtomicMeasure, nu: AtomicMeasure) -> float:
    """W1 distance between nonnegative measures of equal mass, computed as
    the L1 distance between cumulative mass functions (exact in 1-d)."""
    if not (mu.is_nonnegative and nu.is_nonnegative):
        raise InvalidInputError("wasserstein1 requires nonnegative measures")
    m1, m2 = mu.mass(), nu.mass()
    if abs(m1 - m2) > 1e-9 * max(abs(m1), abs(m2), 1e-300):
        raise InvalidInputError(
            f"wasserstein1 requires equal total mass, got {m1!r} and {m2!r}")
    if len(mu) == 0 and len(nu) == 0:
        return 0.0
    p = np.concatenate([mu.positions, nu.positions])
    d = np.concatenate([mu.weights, -nu.weights])
    order = np.argsort(p, kind="stable")
    p = p[order]
    cdf = np.cumsum(d[order])[:-1]
    return float(np.dot(np.abs(cdf), np.diff(p)))


# -- serialization ---------------------------------------------------------------


def write_measure_csv(mu: AtomicMeasure, target: Union[str, TextIO]) -> None:
    """CSV rows ``position,weight``; floats via repr so the round trip is
    bit-exact for finite doubles."""
    rows = "".join(f"{p!r},{w!r}\n" for p, w in zip(mu.positions, mu.weights))
    if hasattr(target, "write"):
        target.write("position,weight\n")
        target.write(rows)
    else:
        with open(target, "w") as fh:
            fh.write("position,weight\n")
            fh.write(rows)


def read_measure_csv(source: Union[str, TextIO],
                     merge_tol=DEFAULT_MERGE_TOL) -> AtomicMeasure:
    if hasattr(source, "read"):
        lines = source.read().splitlines()
    else:
        with open(source) as fh:
            lines = fh.read().splitlines()
    pos, w = [], []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("position"):
            continue
        a, b = line.split(",")
        pos.append(float(a))
        w.append(float(b))
    return AtomicMeasure(np.array(pos, dtype=np.float64),
                         np.array(w, dtype=np.float64), merge_tol)


def measure_to_json(mu: AtomicMeasure) -> str:
    """JSON array of [position, weight] pairs."""
    return json.dumps([[p, w] for p, w in zip(mu.positions.tolist(),
                                              mu.weights.tolist())])


def measure_from_json(text: str, merge_tol=DEFAULT_MERGE_TOL) -> AtomicMeasure:
    pairs = json.loads(text)
    if pairs:
        pos, w = zip(*pairs)
    else:
        pos, w = (), ()
    return AtomicMeasure(np.array(pos, dtype=np.float64),
                         np.array(w, dtype=np.float64), merge_tol)
