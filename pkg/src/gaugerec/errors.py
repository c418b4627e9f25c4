"""Exception taxonomy for the reconstruction toolkit.

Every failure mode that callers are expected to branch on gets its own class.
Exceptions that point at specific grid locations carry a ``nodes`` attribute
with the offending multi-indices so harness code can report or mask them.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ToolkitError",
    "ConfigError",
    "SingularSystem",
    "EllipticityViolation",
    "VanishingGauge",
    "DegenerateTensor",
    "VanishingU1",
    "FrameDegenerate",
    "MDependent",
    "CoverageFailure",
    "VanishingDeterminant",
    "BranchAmbiguity",
    "NonIntegrableField",
    "ComplexCoefficients",
    "NonPositiveH1",
]


class ToolkitError(Exception):
    """Base class for all package errors."""


class ConfigError(ToolkitError):
    """Invalid experiment configuration.

    Carries the dotted path of the offending field (e.g.
    ``"illumination.family"``) in ``field``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class _NodeError(ToolkitError):
    """Shared plumbing for errors localized at grid nodes."""

    def __init__(self, message: str, nodes=None):
        if nodes is not None:
            nodes = np.atleast_2d(np.asarray(nodes, dtype=np.intp))
            first = tuple(int(i) for i in nodes[0])
            message = f"{message} ({nodes.shape[0]} node(s), first at {first})"
        self.nodes = nodes
        super().__init__(message)


class SingularSystem(ToolkitError):
    """Direct solve failed or its residual exceeded tolerance.

    ``trace_index`` is set when the failure came from solving one member of
    an illumination set.
    """

    def __init__(self, message: str, residual: float | None = None, trace_index: int | None = None):
        self.residual = residual
        self.trace_index = trace_index
        if trace_index is not None:
            message = f"illumination {trace_index}: {message}"
        if residual is not None:
            message = f"{message} (relative residual {residual:.3e})"
        super().__init__(message)


class EllipticityViolation(_NodeError):
    """Re(a) fails the two-sided ellipticity bound somewhere on the grid."""


class VanishingGauge(ToolkitError):
    """A gauge factor tau vanishes (or dips below the configured floor)."""


class DegenerateTensor(ToolkitError):
    """The reference tensor is null for the bilinear pairing (a0 : a0* = 0)."""


class VanishingU1(_NodeError):
    """The designated first solution dips below the admissibility floor."""


class FrameDegenerate(_NodeError):
    """The gradient Gram matrix of the frame ratios is too ill conditioned."""


class MDependent(_NodeError):
    """The candidate M-matrices fail pointwise linear independence from Id."""


class CoverageFailure(ToolkitError):
    """No admissible patch covers part of the grid.

    Attributes
    ----------
    uncovered : (k, dim) integer array of node multi-indices left uncovered.
    partial : tuple (representative, patch_map) for the covered region, or
        None when nothing at all was reconstructible.
    """

    def __init__(self, uncovered, partial=None):
        self.uncovered = np.atleast_2d(np.asarray(uncovered, dtype=np.intp))
        self.partial = partial
        super().__init__(
            f"reconstruction does not cover the grid: {self.uncovered.shape[0]} "
            f"node(s) uncovered, first at {tuple(int(i) for i in self.uncovered[0])}"
        )


class VanishingDeterminant(_NodeError):
    """det(a) below floor; the determinant gauge split is undefined."""


class BranchAmbiguity(_NodeError):
    """Branch continuation of a root/phase could not be resolved."""


class NonIntegrableField(ToolkitError):
    """Curl test failed: the target vector field is not a discrete gradient."""

    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (relative curl residual {residual:.3e})"
        super().__init__(message)


class ComplexCoefficients(ToolkitError):
    """An operation restricted to real coefficients received complex input."""


class NonPositiveH1(_NodeError):
    """The first internal-functional datum is not strictly positive."""
