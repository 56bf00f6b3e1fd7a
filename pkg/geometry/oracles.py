"""
Analytic shape oracles
Exact in/out tests, signed distances and surface samplers for synthetic shapes
in normalized units.
"""

from abc import ABC, abstractmethod
from typing import Annotated, List, Literal, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, field_validator


class UnsupportedShapeError(ValueError):
    """Raised when an operation is not available for a shape kind"""
    pass


class ShapeOracle(ABC):
    """Closed solid with an exact occupancy test"""

    kind: str = "shape"

    @abstractmethod
    def sdf(self, q: np.ndarray) -> np.ndarray:
        """Signed distance (negative inside); exact for primitives, a bound for composites"""

    @abstractmethod
    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box (low, high)"""

    def occupancy(self, q: np.ndarray) -> np.ndarray:
        """1 inside, 0 outside"""
        return (self.sdf(np.asarray(q, dtype=np.float64)) < 0.0).astype(np.int8)

    def sample_surface(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise UnsupportedShapeError(f"{self.kind} has no surface sampler")

    def max_side(self) -> float:
        low, high = self.bounds()
        return float(np.max(high - low))


class Sphere(ShapeOracle):
    kind = "sphere"

    def __init__(self, radius: float = 0.4, center=(0.0, 0.0, 0.0)):
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)

    def sdf(self, q):
        return np.linalg.norm(np.asarray(q) - self.center, axis=-1) - self.radius

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def sample_surface(self, n, rng):
        directions = rng.normal(size=(n, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return self.center + self.radius * directions


class Box(ShapeOracle):
    kind = "box"

    def __init__(self, half_extents=(0.3, 0.3, 0.3), center=(0.0, 0.0, 0.0)):
        half = np.broadcast_to(np.asarray(half_extents, dtype=np.float64), (3,))
        self.half = half.copy()
        self.center = np.asarray(center, dtype=np.float64)

    def sdf(self, q):
        d = np.abs(np.asarray(q) - self.center) - self.half
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def bounds(self):
        return self.center - self.half, self.center + self.half

    def sample_surface(self, n, rng):
        hx, hy, hz = self.half
        # faces normal to x, y, z; each axis has two faces of equal area
        areas = np.array([hy * hz, hx * hz, hx * hy])
        axis = rng.choice(3, size=n, p=areas / areas.sum())
        side = rng.choice([-1.0, 1.0], size=n)
        points = rng.uniform(-1.0, 1.0, size=(n, 3)) * self.half
        rows = np.arange(n)
        points[rows, axis] = side * self.half[axis]
        return self.center + points


class Torus(ShapeOracle):
    """Ring around the z axis"""

    kind = "torus"

    def __init__(self, major: float = 0.3, minor: float = 0.1, center=(0.0, 0.0, 0.0)):
        self.major = float(major)
        self.minor = float(minor)
        self.center = np.asarray(center, dtype=np.float64)

    def sdf(self, q):
        p = np.asarray(q) - self.center
        ring = np.linalg.norm(p[..., :2], axis=-1) - self.major
        return np.sqrt(ring ** 2 + p[..., 2] ** 2) - self.minor

    def bounds(self):
        reach = np.array([self.major + self.minor, self.major + self.minor, self.minor])
        return self.center - reach, self.center + reach

    def sample_surface(self, n, rng):
        # area element is proportional to (R + r cos v)
        chosen: List[np.ndarray] = []
        count = 0
        while count < n:
            u = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
            v = rng.uniform(0.0, 2.0 * np.pi, size=2 * n)
            keep = rng.uniform(0.0, 1.0, size=2 * n) < (self.major + self.minor * np.cos(v)) / (self.major + self.minor)
            u, v = u[keep], v[keep]
            ring = self.major + self.minor * np.cos(v)
            chosen.append(np.stack([ring * np.cos(u), ring * np.sin(u), self.minor * np.sin(v)], axis=1))
            count += len(u)
        return self.center + np.concatenate(chosen)[:n]


class ShapeUnion(ShapeOracle):
    kind = "union"

    def __init__(self, a: ShapeOracle, b: ShapeOracle):
        self.a, self.b = a, b

    def sdf(self, q):
        return np.minimum(self.a.sdf(q), self.b.sdf(q))

    def occupancy(self, q):
        return (self.a.occupancy(q) | self.b.occupancy(q)).astype(np.int8)

    def bounds(self):
        (la, ha), (lb, hb) = self.a.bounds(), self.b.bounds()
        return np.minimum(la, lb), np.maximum(ha, hb)


class ShapeDifference(ShapeOracle):
    """a with b carved out"""

    kind = "difference"

    def __init__(self, a: ShapeOracle, b: ShapeOracle):
        self.a, self.b = a, b

    def sdf(self, q):
        return np.maximum(self.a.sdf(q), -self.b.sdf(q))

    def occupancy(self, q):
        return (self.a.occupancy(q) & (1 - self.b.occupancy(q))).astype(np.int8)

    def bounds(self):
        return self.a.bounds()


class Empty(ShapeOracle):
    kind = "empty"

    def sdf(self, q):
        return np.full(np.asarray(q).shape[:-1], np.inf)

    def bounds(self):
        return np.zeros(3), np.zeros(3)

    def sample_surface(self, n, rng):
        return np.zeros((0, 3))


class Flipped(ShapeOracle):
    """Mirror image of another oracle across the plane axis = 0"""

    def __init__(self, base: ShapeOracle, axis: int):
        self.base = base
        self.axis = int(axis)
        self.kind = f"flipped-{base.kind}"

    def _mirror(self, q):
        q = np.array(q, dtype=np.float64, copy=True)
        q[..., self.axis] *= -1.0
        return q

    def sdf(self, q):
        return self.base.sdf(self._mirror(q))

    def occupancy(self, q):
        return self.base.occupancy(self._mirror(q))

    def bounds(self):
        low, high = self.base.bounds()
        low, high = low.copy(), high.copy()
        low[self.axis], high[self.axis] = -high[self.axis], -low[self.axis]
        return low, high

    def sample_surface(self, n, rng):
        return self._mirror(self.base.sample_surface(n, rng))


# ============================================================================
# Shape specs ("sphere:radius=0.4;center=0,0,0")
# ============================================================================

class _SpecBase(BaseModel):
    model_config = ConfigDict(extra="forbid")

    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)


class SphereSpec(_SpecBase):
    kind: Literal["sphere"] = "sphere"
    radius: float = Field(0.4, gt=0)

    def build(self) -> ShapeOracle:
        return Sphere(self.radius, self.center)


class BoxSpec(_SpecBase):
    kind: Literal["box"] = "box"
    half: Tuple[float, float, float] = (0.3, 0.3, 0.3)

    @field_validator("half", mode="before")
    @classmethod
    def _expand_scalar(cls, value):
        if isinstance(value, (str, int, float)):
            return (value, value, value)
        if isinstance(value, (list, tuple)) and len(value) == 1:
            return (value[0],) * 3
        return value

    @field_validator("half")
    @classmethod
    def _positive(cls, value):
        if min(value) <= 0:
            raise ValueError("half extents must be positive")
        return value

    def build(self) -> ShapeOracle:
        return Box(self.half, self.center)


class TorusSpec(_SpecBase):
    kind: Literal["torus"] = "torus"
    major: float = Field(0.3, gt=0)
    minor: float = Field(0.1, gt=0)

    def build(self) -> ShapeOracle:
        return Torus(self.major, self.minor, self.center)


_SHAPE_ADAPTER = TypeAdapter(
    Annotated[Union[SphereSpec, BoxSpec, TorusSpec], Field(discriminator="kind")]
)


def parse_shape_spec(text: str) -> ShapeOracle:
    """
    Build an oracle from a one-line description

    Args:
        text: "kind:key=value;key=v1,v2,v3", e.g. "box:half=0.3;center=0,0,0.1"

    Returns:
        The described shape
    """
    kind, _, body = text.strip().partition(":")
    fields = {"kind": kind.strip().lower()}
    for item in filter(None, (part.strip() for part in body.split(";"))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed shape field {item!r}, expected key=value")
        values = [v.strip() for v in value.split(",")]
        fields[key.strip()] = values if len(values) > 1 else values[0]
    return _SHAPE_ADAPTER.validate_python(fields).build()
