"""uclab: numerical laboratory for unique continuation of hyperbolic systems
and kinematic fault-slip inversion."""

__version__ = "0.1.0"
