from services.oracle.grid import GridSpec, oracle_ar, oracle_pr, robust_fraction
from services.oracle.verifier import (
    VerificationVerdict,
    load_verdict,
    save_verdict,
    verify_propositions,
    verify_radius_monotonicity,
)

__all__ = [
    "GridSpec",
    "oracle_ar",
    "oracle_pr",
    "robust_fraction",
    "VerificationVerdict",
    "load_verdict",
    "save_verdict",
    "verify_propositions",
    "verify_radius_monotonicity",
]
