"""Horizontal geometry of hypersurfaces in Carnot groups, with numerical checks of its identities and inequalities."""

from .algebra import (
    MATRIX_NORM,
    CarnotGroup,
    HomogeneousNormSpec,
    StrataSignature,
    StructureTensor,
    abelian,
    builtin_group,
    engel,
    free_step2,
    group_from_json,
    heisenberg,
    hom_dist,
    hom_norm,
    product_with_euclidean,
    validate_algebra,
)
from .checks import CheckReport, PlateauCandidate, run_checks
from .exprparse import evaluate, parse, pretty
from .operators import EigenResult, assemble, eigensolve, grad_HS, integration_by_parts_residual
from .surface import EPS_CHAR, Region, Surface, SurfaceSpec, integrate_H, spec_from_json

__all__ = [
    "MATRIX_NORM",
    "EPS_CHAR",
    "CarnotGroup",
    "HomogeneousNormSpec",
    "StrataSignature",
    "StructureTensor",
    "abelian",
    "builtin_group",
    "engel",
    "free_step2",
    "group_from_json",
    "heisenberg",
    "hom_dist",
    "hom_norm",
    "product_with_euclidean",
    "validate_algebra",
    "CheckReport",
    "PlateauCandidate",
    "run_checks",
    "evaluate",
    "parse",
    "pretty",
    "EigenResult",
    "assemble",
    "eigensolve",
    "grad_HS",
    "integration_by_parts_residual",
    "Region",
    "Surface",
    "SurfaceSpec",
    "integrate_H",
    "spec_from_json",
]
