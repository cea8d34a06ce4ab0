"""Learning-based synthesis of certificates and feedback controllers for dynamical systems."""
from .certificates import CertificateKind
from .cegis import CegisConfig, CegisReport, NetShape, Status, learn_only, synthesise, verify_only
from .config import dump, load, loads
from .domains import Ellipsoid, Rectangle, Sphere, Torus, parse_domain
from .models import DynamicalModel, TimeDomain
from .verifier import Backend, SolverKind

__version__ = "0.1.0"
