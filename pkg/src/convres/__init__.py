"""Convex restrictions of AC power flow feasibility sets.

Typical use::

    from convres import load_case, prepare, certify

    study = prepare(load_case("case9.m"))
    cert = certify(study.u0, study.model)
"""

from convres.basis import ModelOptions, RestrictionModel, build_model
from convres.errors import (
    CaseSyntaxError,
    ConvresError,
    DomainError,
    InfeasibleBase,
    SingularBranch,
    SingularJacobian,
    SoundnessViolation,
    ValidationError,
)
from convres.matpower_io import NetworkCase, load_case, parse_case, validate_case
from convres.powerflow import ControlVector, PolarState, check_operational, nr_solve
from convres.restriction import Certificate, CertifyOptions, certify, check_at
from convres.scan import ScanSpec, cross_section, emit_csv, emit_svg
from convres.study import Study, prepare

__version__ = "0.1.0"

__all__ = [
    "CaseSyntaxError",
    "Certificate",
    "CertifyOptions",
    "ControlVector",
    "ConvresError",
    "DomainError",
    "InfeasibleBase",
    "ModelOptions",
    "NetworkCase",
    "PolarState",
    "RestrictionModel",
    "ScanSpec",
    "SingularBranch",
    "SingularJacobian",
    "SoundnessViolation",
    "Study",
    "ValidationError",
    "build_model",
    "certify",
    "check_at",
    "check_operational",
    "cross_section",
    "emit_csv",
    "emit_svg",
    "load_case",
    "nr_solve",
    "parse_case",
    "prepare",
    "validate_case",
]
