# modules/errors.py
"""
Exception hierarchy for the os2 toolkit.

Every failure the numerical modules can raise derives from Os2Error so the
CLI can report it uniformly.
"""

from typing import List, Optional, Sequence


class Os2Error(Exception):
    """Base class for all os2 errors."""


# =======================================
# MESH / FE
# =======================================

class DegenerateElementError(Os2Error):
    def __init__(self, element: int):
        self.element = int(element)
        super().__init__(f"Degenerate element {self.element}: non-positive Jacobian determinant")


class OutsideDomainError(Os2Error):
    def __init__(self, point: Sequence[float], distance: float):
        self.point = tuple(float(v) for v in point)
        self.distance = float(distance)
        super().__init__(f"Point {self.point} lies outside the mesh (distance {self.distance:.3e})")


class EmptyTagError(Os2Error):
    def __init__(self, tag: str):
        self.tag = tag
        super().__init__(f"Boundary tag '{tag}' has no facets")


class StorageFormatError(Os2Error):
    pass


# =======================================
# PHYSICS
# =======================================

class InvertedElementError(Os2Error):
    def __init__(self, count: int = 1):
        self.count = int(count)
        super().__init__(f"Inverted element(s): det F <= 0 at {self.count} quadrature point(s)")


class NegativeWeightError(Os2Error):
    pass


# =======================================
# COMPONENTS
# =======================================

class GeometryError(Os2Error):
    pass


class ParameterBoxError(Os2Error):
    pass


class ExtensionError(Os2Error):
    pass


class OwnershipError(Os2Error):
    def __init__(self, component: int, point: Sequence[float]):
        self.component = int(component)
        self.point = tuple(float(v) for v in point)
        super().__init__(f"Port point {self.point} of component {self.component} is owned by no neighbor")


# =======================================
# SOLVERS
# =======================================

class NewtonDivergenceError(Os2Error):
    def __init__(self, label: str, history: Optional[List[float]] = None):
        self.label = label
        self.history = list(history or [])
        tail = ", ".join(f"{v:.3e}" for v in self.history[-5:])
        super().__init__(f"Newton diverged for {label} (residual history tail: [{tail}])")


class LocalMapSingularError(Os2Error):
    def __init__(self, component: int):
        self.component = int(component)
        super().__init__(f"Singular local Jacobian in the port-to-bubble map of component {self.component}")


class LineSearchError(Os2Error):
    pass


class EimRankError(Os2Error):
    def __init__(self, achieved: int, requested: int):
        self.achieved = int(achieved)
        self.requested = int(requested)
        super().__init__(f"EIM residual vanished after {self.achieved} of {self.requested} points")


# =======================================
# PIPELINE
# =======================================

class ConfigurationMismatchError(Os2Error):
    pass


class StageError(Os2Error):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"Stage '{stage}' failed: {cause}")
