"""Geometric sets: symbolic membership predicates and seeded samplers."""
from __future__ import annotations

import ast
import re
from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from .expr import (
    FALSE,
    TRUE,
    Atom,
    Const,
    Expr,
    Formula,
    Var,
    conj,
    disj,
    eval_formula,
    negate,
    power,
    sub,
    total,
)

# set roles
XD, XI, XU, XS, XG, XF = "XD", "XI", "XU", "XS", "XG", "XF"
ROLES = (XD, XI, XU, XS, XG, XF)


class DomainError(ValueError):
    pass


def _vec(values) -> tuple[float, ...]:
    return tuple(float(v) for v in values)


def _sq_dist(center, scales=None) -> Expr:
    terms = []
    for i, c in enumerate(center):
        d = sub(Var(i), Const(c))
        if scales is not None:
            d = d / Const(scales[i])
        terms.append(power(d, 2))
    return total(terms)


class Domain:
    """Base class; subclasses are frozen dataclasses."""

    kind: ClassVar[str] = "domain"

    @property
    def dimension(self) -> int:
        raise NotImplementedError

    def predicate(self) -> Formula:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        return eval_formula(self.predicate(), points)

    def boundary_predicate(self) -> Formula:
        raise DomainError(f"{self.kind} has no boundary encoding")

    def interior(self) -> "Domain":
        raise DomainError(f"{self.kind} has no interior")

    @property
    def characteristic_radius(self) -> float:
        raise NotImplementedError

    def _raw_sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, count: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        """``count`` points drawn uniformly from the set, reproducible per seed."""
        if count < 0:
            raise DomainError("count must be non-negative")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        out = np.empty((0, self.dimension))
        while out.shape[0] < count:
            need = count - out.shape[0]
            batch = self._raw_sample(rng, need)
            # floating-point edge cases are dropped so every point passes the predicate
            batch = batch[self.contains(batch)]
            out = np.vstack([out, batch])
        return out[:count]

    def boundary_sample(self, count: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        raise DomainError(f"boundary sampling is not supported for {self.kind}")

    def to_text(self) -> str:
        raise NotImplementedError

    def __str__(self):
        return self.to_text()


def _fmt(vals) -> str:
    return "[" + ", ".join(repr(float(v)) for v in vals) + "]"


def _unit_directions(rng, count, n):
    d = rng.standard_normal((count, n))
    norms = np.linalg.norm(d, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return d / norms


@dataclass(frozen=True)
class Sphere(Domain):
    center: tuple[float, ...]
    radius: float
    closed: bool = True
    kind: ClassVar[str] = "Sphere"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise DomainError("Sphere radius must be positive")

    @property
    def dimension(self):
        return len(self.center)

    def predicate(self):
        op = "<=" if self.closed else "<"
        return Atom(op, _sq_dist(self.center), Const(self.radius**2))

    def boundary_predicate(self):
        return Atom("=", _sq_dist(self.center), Const(self.radius**2))

    def interior(self):
        return Sphere(self.center, self.radius, closed=False)

    @property
    def characteristic_radius(self):
        return self.radius

    def _raw_sample(self, rng, count):
        n = self.dimension
        u = rng.random(count)
        r = self.radius * u ** (1.0 / n)
        return np.asarray(self.center) + _unit_directions(rng, count, n) * r[:, None]

    def boundary_sample(self, count, seed=0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return np.asarray(self.center) + _unit_directions(rng, count, self.dimension) * self.radius

    def to_text(self):
        name = "Sphere" if self.closed else "OpenSphere"
        return f"{name}({_fmt(self.center)}, {self.radius!r})"


@dataclass(frozen=True)
class Rectangle(Domain):
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    closed: bool = True
    kind: ClassVar[str] = "Rectangle"

    def __post_init__(self):
        object.__setattr__(self, "lower", _vec(self.lower))
        object.__setattr__(self, "upper", _vec(self.upper))
        if len(self.lower) != len(self.upper):
            raise DomainError("Rectangle bounds have different lengths")
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise DomainError("Rectangle needs lower[i] < upper[i] on every axis")

    @property
    def dimension(self):
        return len(self.lower)

    def predicate(self):
        lo_op, hi_op = (">=", "<=") if self.closed else (">", "<")
        atoms = []
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            atoms.append(Atom(lo_op, Var(i), Const(lo)))
            atoms.append(Atom(hi_op, Var(i), Const(hi)))
        return conj(*atoms)

    def boundary_predicate(self):
        faces = []
        for i, (lo, hi) in enumerate(zip(self.lower, self.upper)):
            faces.append(Atom("=", Var(i), Const(lo)))
            faces.append(Atom("=", Var(i), Const(hi)))
        closed = Rectangle(self.lower, self.upper, True).predicate()
        return conj(closed, disj(*faces))

    def interior(self):
        return Rectangle(self.lower, self.upper, closed=False)

    @property
    def characteristic_radius(self):
        return 0.5 * min(hi - lo for lo, hi in zip(self.lower, self.upper))

    def _raw_sample(self, rng, count):
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        return lo + rng.random((count, self.dimension)) * (hi - lo)

    def boundary_sample(self, count, seed=0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        n = self.dimension
        pts = lo + rng.random((count, n)) * (hi - lo)
        # faces weighted by their (n-1)-volume
        widths = hi - lo
        face_area = np.prod(widths) / widths
        p = np.repeat(face_area, 2) / (2 * face_area.sum())
        faces = rng.choice(2 * n, size=count, p=p)
        axis, side = faces // 2, faces % 2
        rows = np.arange(count)
        pts[rows, axis] = np.where(side == 0, lo[axis], hi[axis])
        return pts

    def to_text(self):
        name = "Rectangle" if self.closed else "OpenRectangle"
        return f"{name}({_fmt(self.lower)}, {_fmt(self.upper)})"


@dataclass(frozen=True)
class Torus(Domain):
    """Closed ball of ``outer_radius`` minus the open ball of ``inner_radius``."""

    center: tuple[float, ...]
    outer_radius: float
    inner_radius: float
    kind: ClassVar[str] = "Torus"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "outer_radius", float(self.outer_radius))
        object.__setattr__(self, "inner_radius", float(self.inner_radius))
        if not 0 < self.inner_radius < self.outer_radius:
            raise DomainError("Torus needs 0 < inner_radius < outer_radius")

    @property
    def dimension(self):
        return len(self.center)

    def predicate(self):
        d = _sq_dist(self.center)
        return conj(Atom(">=", d, Const(self.inner_radius**2)), Atom("<=", d, Const(self.outer_radius**2)))

    def boundary_predicate(self):
        # only the outer shell bounds trajectories; the hole is the excluded equilibrium
        return Atom("=", _sq_dist(self.center), Const(self.outer_radius**2))

    def interior(self):
        return Difference(Sphere(self.center, self.outer_radius, closed=False), Sphere(self.center, self.inner_radius))

    @property
    def characteristic_radius(self):
        return self.outer_radius

    def _raw_sample(self, rng, count):
        outer = Sphere(self.center, self.outer_radius)
        return outer._raw_sample(rng, count)

    def boundary_sample(self, count, seed=0):
        return Sphere(self.center, self.outer_radius).boundary_sample(count, seed)

    def to_text(self):
        return f"Torus({_fmt(self.center)}, {self.outer_radius!r}, {self.inner_radius!r})"


@dataclass(frozen=True)
class Ellipsoid(Domain):
    """Axis-aligned ellipsoid ``sum(((x - c) / a)**2) <= 1``."""

    center: tuple[float, ...]
    semi_axes: tuple[float, ...]
    kind: ClassVar[str] = "Ellipsoid"

    def __post_init__(self):
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "semi_axes", _vec(self.semi_axes))
        if len(self.center) != len(self.semi_axes):
            raise DomainError("Ellipsoid center and semi-axes have different lengths")
        if any(a <= 0 for a in self.semi_axes):
            raise DomainError("Ellipsoid semi-axes must be positive")

    @property
    def dimension(self):
        return len(self.center)

    def _form(self) -> Expr:
        return _sq_dist(self.center, self.semi_axes)

    def predicate(self):
        return Atom("<=", self._form(), Const(1.0))

    def boundary_predicate(self):
        return Atom("=", self._form(), Const(1.0))

    def interior(self):
        return _OpenEllipsoid(self.center, self.semi_axes)

    @property
    def characteristic_radius(self):
        return min(self.semi_axes)

    def _raw_sample(self, rng, count):
        unit = Sphere(tuple(0.0 for _ in self.center), 1.0)._raw_sample(rng, count)
        return np.asarray(self.center) + unit * np.asarray(self.semi_axes)

    def boundary_sample(self, count, seed=0):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        # uniform in angle, not in surface measure; adequate for training data
        unit = _unit_directions(rng, count, self.dimension)
        return np.asarray(self.center) + unit * np.asarray(self.semi_axes)

    def to_text(self):
        return f"Ellipsoid({_fmt(self.center)}, {_fmt(self.semi_axes)})"


@dataclass(frozen=True)
class _OpenEllipsoid(Ellipsoid):
    kind: ClassVar[str] = "OpenEllipsoid"

    def predicate(self):
        return Atom("<", self._form(), Const(1.0))


@dataclass(frozen=True)
class Difference(Domain):
    """Points of ``outer`` that are not in ``inner``."""

    outer: Domain
    inner: Domain
    kind: ClassVar[str] = "Difference"
    max_trials: ClassVar[int] = 10**6
    min_acceptance: ClassVar[float] = 1e-4

    def __post_init__(self):
        if self.outer.dimension != self.inner.dimension:
            raise DomainError("Difference operands have different dimensions")

    @property
    def dimension(self):
        return self.outer.dimension

    def predicate(self):
        return conj(self.outer.predicate(), negate(self.inner.predicate()))

    @property
    def characteristic_radius(self):
        return self.outer.characteristic_radius

    def sample(self, count, seed=0):
        if count < 0:
            raise DomainError("count must be non-negative")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        chunks, have, trials = [], 0, 0
        batch = max(1024, 2 * count)
        while have < count:
            pts = self.outer.sample(batch, rng)
            trials += batch
            keep = pts[self.contains(pts)]
            chunks.append(keep)
            have += keep.shape[0]
            if trials >= self.max_trials and have / trials < self.min_acceptance:
                raise DomainError(
                    f"degenerate domain {self.to_text()}: acceptance {have}/{trials} below {self.min_acceptance}"
                )
            batch = min(batch * 2, self.max_trials)
        return np.vstack(chunks)[:count] if chunks else np.empty((0, self.dimension))

    def to_text(self):
        return f"Difference({self.outer.to_text()}, {self.inner.to_text()})"


# ---------------------------------------------------------------------------
# textual constructors, as used in YAML configuration files

_CTOR = re.compile(r"^\s*([A-Za-z]+)\s*\((.*)\)\s*$", re.S)


def parse_domain(text: str) -> Domain:
    """Build a domain from ``Sphere([0,0], 1.0)``-style text."""
    m = _CTOR.match(str(text))
    if m is None:
        raise DomainError(f"cannot parse domain {text!r}")
    name, body = m.group(1), m.group(2)
    if name == "Difference":
        raise DomainError("Difference is a library-level construct, not a configuration value")
    try:
        args = ast.literal_eval(f"({body},)")
    except (ValueError, SyntaxError) as exc:
        raise DomainError(f"bad arguments in {text!r}: {exc}") from None
    try:
        if name == "Sphere":
            return Sphere(*args)
        if name == "OpenSphere":
            return Sphere(*args, closed=False)
        if name == "Rectangle":
            return Rectangle(*args)
        if name == "OpenRectangle":
            return Rectangle(*args, closed=False)
        if name == "Torus":
            return Torus(*args)
        if name == "Ellipsoid":
            return Ellipsoid(*args)
    except TypeError as exc:
        raise DomainError(f"bad arguments in {text!r}: {exc}") from None
    raise DomainError(f"unknown domain constructor {name!r}")


def check_set_relations(sets: dict[str, Domain], count: int = 10_000, seed: int = 0) -> list[str]:
    """Sampled sanity checks: ``XU`` and ``XF`` disjoint, ``XG`` inside ``XF``.

    Returns a list of human-readable problems (empty when all checks pass).
    """
    problems = []
    if XG in sets and XF in sets:
        pts = sets[XG].sample(count, seed)
        bad = ~sets[XF].contains(pts)
        if bad.any():
            problems.append(f"XG is not contained in XF (e.g. {pts[bad][0].tolist()})")
    if XU in sets and XF in sets:
        pts = sets[XF].sample(count, seed + 1)
        bad = sets[XU].contains(pts)
        if bad.any():
            problems.append(f"XU intersects XF (e.g. {pts[bad][0].tolist()})")
    return problems


__all__ = [
    "XD",
    "XI",
    "XU",
    "XS",
    "XG",
    "XF",
    "ROLES",
    "Domain",
    "DomainError",
    "Sphere",
    "Rectangle",
    "Torus",
    "Ellipsoid",
    "Difference",
    "parse_domain",
    "check_set_relations",
    "TRUE",
    "FALSE",
]
