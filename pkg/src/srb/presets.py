"""Ready-made systems used by the CLI demos and the test-suite."""

from __future__ import annotations

from .interval_maps import PiecewisePolynomial, PowerMap
from .orbit_engine import IFSystem


def two_basin_maps() -> tuple[PiecewisePolynomial, PiecewisePolynomial]:
    """Quadratic pair with interior fixed points 1/3 and 2/3.

    tau_1 = 3r^2 below 1/3 and 1 - 1.5(1-r)^2 above;
    tau_2 = 1.5r^2 below 2/3 and 1 - 3(1-r)^2 above.
    """
    t1 = PiecewisePolynomial([0.0, 1 / 3, 1.0], [[0.0, 0.0, 3.0], [-0.5, 3.0, -1.5]])
    t2 = PiecewisePolynomial([0.0, 2 / 3, 1.0], [[0.0, 0.0, 1.5], [-2.0, 6.0, -3.0]])
    return t1, t2


def two_basin_system(p1: float = 0.5) -> IFSystem:
    return IFSystem(two_basin_maps(), (p1, 1.0 - p1))


def square_root_system(p1: float = 0.5) -> IFSystem:
    """r^2 with probability p1, sqrt(r) otherwise: drift (2 p1 - 1) ln 2."""
    return IFSystem((PowerMap(2.0), PowerMap(0.5)), (p1, 1.0 - p1))
