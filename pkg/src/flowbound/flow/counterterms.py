"""Loop-graded counterterm coefficients of the bare interaction."""
from __future__ import annotations

import dataclasses
import json


@dataclasses.dataclass(frozen=True)
class CountertermSeries:
    """Coefficients ``a[l]``, ``b2[l]``, ``b4[l]`` for loop orders ``l >= 1``.

    Order 0 is implicit: ``a = b2 = 0`` and ``b4 = g0``. At the UV cutoff the
    two-point function starts from ``b2[l] + a[l] p^2`` and the four-point
    function from ``b4[l]``.
    """

    g0: float
    a: tuple[float, ...] = ()
    b2: tuple[float, ...] = ()
    b4: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.g0 > 0:
            raise ValueError("g0 must be positive")
        for name in ("a", "b2", "b4"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))

    @property
    def max_order(self) -> int:
        return max(len(self.a), len(self.b2), len(self.b4))

    def coefficient(self, name: str, order: int) -> float:
        if order == 0:
            return self.g0 if name == "b4" else 0.0
        seq = getattr(self, name)
        return seq[order - 1] if order - 1 < len(seq) else 0.0

    def with_order(self, order: int, *, a: float | None = None, b2: float | None = None,
                   b4: float | None = None) -> "CountertermSeries":
        if order < 1:
            raise ValueError("order-0 counterterms are fixed by g0")
        out = {}
        for name, val in (("a", a), ("b2", b2), ("b4", b4)):
            seq = list(getattr(self, name))
            seq += [0.0] * (order - len(seq))
            if val is not None:
                seq[order - 1] = float(val)
            out[name] = tuple(seq)
        return dataclasses.replace(self, **out)

    def truncated(self, order: int) -> "CountertermSeries":
        """Drop all coefficients above ``order``."""
        return dataclasses.replace(self, a=self.a[:order], b2=self.b2[:order], b4=self.b4[:order])

    def two_point_boundary(self, order: int, p2: float) -> float:
        return self.coefficient("b2", order) + self.coefficient("a", order) * p2

    def four_point_boundary(self, order: int) -> float:
        return self.coefficient("b4", order)

    def to_dict(self) -> dict:
        return {"g0": self.g0, "a": list(self.a), "b2": list(self.b2), "b4": list(self.b4)}

    @classmethod
    def from_dict(cls, d: dict) -> "CountertermSeries":
        return cls(d["g0"], tuple(d.get("a", ())), tuple(d.get("b2", ())), tuple(d.get("b4", ())))

    def key(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
