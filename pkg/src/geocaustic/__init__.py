"""Tangential caustics of curves on Riemannian surfaces."""

from .caustic import (assemble_envelope, caustic_domains, detect_singularities,
                      inflection_correspondence, naif_envelope, trace_caustic, verify_theorem1)
from .curve import (arc_length_reparameterize, curve_from_dict, expression_curve,
                    find_inflections, geodesic_curvature, perturb_curve, tangent_geodesic_seed)
from .flow import UnitTangent, conjugate_distances, conjugate_point, jacobi_scalar, shoot
from .stability import stability_experiment, stability_sweep
from .surface import ChartPoint, Spheroid, conformal_perturbation, surface_from_dict

__version__ = "0.1.0"

__all__ = [
    "ChartPoint", "Spheroid", "UnitTangent", "arc_length_reparameterize", "assemble_envelope",
    "caustic_domains", "conformal_perturbation", "conjugate_distances", "conjugate_point",
    "curve_from_dict", "detect_singularities", "expression_curve", "find_inflections",
    "geodesic_curvature", "inflection_correspondence", "jacobi_scalar", "naif_envelope",
    "perturb_curve", "shoot", "stability_experiment", "stability_sweep", "surface_from_dict",
    "tangent_geodesic_seed", "trace_caustic", "verify_theorem1",
]
