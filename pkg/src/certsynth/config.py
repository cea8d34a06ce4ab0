"""YAML configuration files: loading, validation and dumping."""
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping

import yaml

from . import expr as E
from .certificates import TWO_FUNCTION, CertificateError, CertificateKind
from .cegis import CegisConfig, ConfigError, NetShape
from .domains import ROLES, DomainError, check_set_relations, parse_domain
from .learner import TrainConfig
from .models import DynamicalModel, ModelError, TimeDomain
from .nnet import NetworkError, parse_activation
from .verifier import Backend, SolverKind, VerifierError

REQUIRED_KEYS = ("SYSTEM", "CERTIFICATE", "DOMAINS", "N_HIDDEN_NEURONS", "ACTIVATION", "VERIFIER")
OPTIONAL_KEYS = (
    "N_VARS",
    "TIME_DOMAIN",
    "N_DATA",
    "N_HIDDEN_NEURONS_ALT",
    "ACTIVATION_ALT",
    "CTRLAYER",
    "CTRLACTIVATION",
    "CEGIS_MAX_ITERS",
    "SEED",
    # training and solver overrides
    "LEARNING_RATE",
    "EPOCHS",
    "CONTROL_WEIGHT",
    "SOLVER_TIMEOUT",
    "DREAL_PRECISION",
)
KEYS = REQUIRED_KEYS + OPTIONAL_KEYS


def _err(key: str, reason: str) -> ConfigError:
    return ConfigError(f"{key}: {reason}")


def _int_list(key: str, value) -> list[int]:
    if isinstance(value, int):
        value = [value]
    if not isinstance(value, (list, tuple)) or not value:
        raise _err(key, "expected a non-empty list of integers")
    try:
        out = [int(v) for v in value]
    except (TypeError, ValueError):
        raise _err(key, "expected a non-empty list of integers") from None
    if any(v <= 0 for v in out):
        raise _err(key, "layer widths must be positive")
    return out


def _net_shape(wkey: str, akey: str, widths, acts) -> NetShape:
    widths = _int_list(wkey, widths)
    if isinstance(acts, str):
        acts = [acts]
    if not isinstance(acts, (list, tuple)) or not acts:
        raise _err(akey, "expected a non-empty list of activation names")
    try:
        activations = [parse_activation(a) for a in acts]
    except NetworkError as exc:
        raise _err(akey, str(exc)) from None
    if len(widths) == 1 and len(activations) > 1:
        # one width shared by every listed layer
        widths = widths * len(activations)
    if len(widths) != len(activations):
        raise _err(akey, f"{len(activations)} activations for {len(widths)} hidden layers")
    return NetShape(tuple(widths), tuple(activations))


def from_mapping(raw: Mapping[str, Any], check_relations: bool = True) -> CegisConfig:
    """Validated :class:`CegisConfig` from a parsed YAML mapping."""
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration must be a mapping")
    unknown = [k for k in raw if k not in KEYS]
    if unknown:
        raise _err(unknown[0], f"unknown key (allowed: {', '.join(KEYS)})")
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise _err(missing[0], "missing required key")

    system = raw["SYSTEM"]
    if not isinstance(system, (list, tuple)) or not system:
        raise _err("SYSTEM", "expected a non-empty list of expressions")
    n_vars = raw.get("N_VARS", len(system))
    if n_vars != len(system):
        raise _err("SYSTEM", f"{len(system)} components but N_VARS is {n_vars}")
    try:
        time_domain = TimeDomain(str(raw.get("TIME_DOMAIN", "CONTINUOUS")).upper())
    except ValueError:
        raise _err("TIME_DOMAIN", "expected CONTINUOUS or DISCRETE") from None
    try:
        parsed = [E.parse(str(s), n_vars=n_vars) for s in system]
    except E.ExprError as exc:
        raise _err("SYSTEM", str(exc)) from None
    used_inputs = sorted(set().union(*(E.input_indices(p) for p in parsed)))
    n_inputs = used_inputs[-1] + 1 if used_inputs else 0
    if used_inputs and used_inputs != list(range(n_inputs)):
        raise _err("SYSTEM", f"control inputs must be u0..u{n_inputs - 1} without gaps, found {used_inputs}")
    try:
        model = DynamicalModel(n_vars, tuple(parsed), n_inputs, time_domain)
    except ModelError as exc:
        raise _err("SYSTEM", str(exc)) from None

    try:
        kind = CertificateKind.parse(raw["CERTIFICATE"])
    except CertificateError as exc:
        raise _err("CERTIFICATE", str(exc)) from None

    domains = raw["DOMAINS"]
    if not isinstance(domains, Mapping):
        raise _err("DOMAINS", "expected a mapping from set role to domain")
    sets = {}
    for role, text in domains.items():
        if role not in ROLES:
            raise _err("DOMAINS", f"unknown set role {role!r} (allowed: {', '.join(ROLES)})")
        try:
            sets[role] = parse_domain(str(text))
        except DomainError as exc:
            raise _err(f"DOMAINS.{role}", str(exc)) from None
        if sets[role].dimension != n_vars:
            raise _err(f"DOMAINS.{role}", f"dimension {sets[role].dimension}, expected {n_vars}")

    n_data = raw.get("N_DATA", {}) or {}
    if not isinstance(n_data, Mapping):
        raise _err("N_DATA", "expected a mapping from set role to sample count")
    for role, count in n_data.items():
        if not isinstance(count, int) or count < 0:
            raise _err(f"N_DATA.{role}", "expected a non-negative integer")

    certificate = _net_shape("N_HIDDEN_NEURONS", "ACTIVATION", raw["N_HIDDEN_NEURONS"], raw["ACTIVATION"])
    has_alt = "N_HIDDEN_NEURONS_ALT" in raw or "ACTIVATION_ALT" in raw
    if has_alt != (kind in TWO_FUNCTION):
        key = "N_HIDDEN_NEURONS_ALT"
        raise _err(key, f"{kind.value} {'requires' if kind in TWO_FUNCTION else 'does not take'} a second network")
    alternate = None
    if has_alt:
        if "N_HIDDEN_NEURONS_ALT" not in raw or "ACTIVATION_ALT" not in raw:
            raise _err("ACTIVATION_ALT", "N_HIDDEN_NEURONS_ALT and ACTIVATION_ALT go together")
        alternate = _net_shape("N_HIDDEN_NEURONS_ALT", "ACTIVATION_ALT", raw["N_HIDDEN_NEURONS_ALT"], raw["ACTIVATION_ALT"])

    controller = None
    if "CTRLAYER" in raw or "CTRLACTIVATION" in raw:
        layers = _int_list("CTRLAYER", raw.get("CTRLAYER"))
        if len(layers) < 2:
            raise _err("CTRLAYER", "expected hidden widths followed by the number of control inputs")
        if layers[-1] != n_inputs:
            raise _err("CTRLAYER", f"last entry {layers[-1]} must equal the number of control inputs ({n_inputs})")
        controller = _net_shape("CTRLAYER", "CTRLACTIVATION", layers[:-1], raw.get("CTRLACTIVATION", []))
    if (controller is not None) != (n_inputs > 0):
        raise _err("CTRLAYER", "required exactly when SYSTEM uses control inputs")

    try:
        backend = Backend(
            SolverKind.parse(raw["VERIFIER"]),
            timeout=float(raw.get("SOLVER_TIMEOUT", Backend.timeout)),
            precision=float(raw.get("DREAL_PRECISION", Backend.precision)),
        )
    except VerifierError as exc:
        raise _err("VERIFIER", str(exc)) from None
    try:
        train = TrainConfig(
            learning_rate=float(raw.get("LEARNING_RATE", TrainConfig.learning_rate)),
            max_epochs=int(raw.get("EPOCHS", TrainConfig.max_epochs)),
            control_weight=float(raw.get("CONTROL_WEIGHT", TrainConfig.control_weight)),
        )
    except ValueError as exc:
        raise _err("LEARNING_RATE", str(exc)) from None

    max_iters = raw.get("CEGIS_MAX_ITERS", 10)
    if not isinstance(max_iters, int) or max_iters < 0:
        raise _err("CEGIS_MAX_ITERS", "expected a non-negative integer")
    seed = raw.get("SEED", 0)
    if not isinstance(seed, int):
        raise _err("SEED", "expected an integer")

    cfg = CegisConfig(model, kind, sets, certificate, dict(n_data), alternate, controller, backend,
                      max_iters, train, seed)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise _err("CERTIFICATE" if "sets" in str(exc) else "VERIFIER" if "DREAL" in str(exc) or "polynomial" in str(exc) else "CONFIG", str(exc)) from None
    if check_relations:
        problems = check_set_relations(sets, seed=seed)
        if problems:
            raise _err("DOMAINS", "; ".join(problems))
    return cfg


def loads(text: str, **kw) -> CegisConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None
    return from_mapping(raw, **kw)


def load(path: str | Path, **kw) -> CegisConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such configuration file: {path}")
    return loads(path.read_text(), **kw)


def to_mapping(cfg: CegisConfig) -> dict:
    out: dict[str, Any] = {
        "N_VARS": cfg.model.n_vars,
        "SYSTEM": cfg.model.system_strings(),
        "CERTIFICATE": cfg.kind.value,
        "TIME_DOMAIN": cfg.model.time_domain.value,
        "DOMAINS": {role: d.to_text() for role, d in cfg.sets.items()},
        "N_DATA": dict(cfg.n_data),
        "N_HIDDEN_NEURONS": list(cfg.certificate.hidden),
        "ACTIVATION": [a.label for a in cfg.certificate.activations],
    }
    if cfg.alternate is not None:
        out["N_HIDDEN_NEURONS_ALT"] = list(cfg.alternate.hidden)
        out["ACTIVATION_ALT"] = [a.label for a in cfg.alternate.activations]
    if cfg.controller is not None:
        out["CTRLAYER"] = [*cfg.controller.hidden, cfg.model.n_inputs]
        out["CTRLACTIVATION"] = [a.label for a in cfg.controller.activations]
    out["VERIFIER"] = cfg.backend.kind.value
    out["CEGIS_MAX_ITERS"] = cfg.max_iterations
    out["SEED"] = cfg.seed
    out["LEARNING_RATE"] = cfg.train.learning_rate
    out["EPOCHS"] = cfg.train.max_epochs
    out["CONTROL_WEIGHT"] = cfg.train.control_weight
    out["SOLVER_TIMEOUT"] = cfg.backend.timeout
    out["DREAL_PRECISION"] = cfg.backend.precision
    return out


def dump(cfg: CegisConfig) -> str:
    return yaml.safe_dump(to_mapping(cfg), sort_keys=False)
