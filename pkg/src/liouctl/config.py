"""JSON run configuration: schema validation and problem assembly.

Complex matrices are written as ``{"re": [[...]], "im": [[...]]}`` (row
major; ``im`` may be omitted for real matrices).  Every block rejects
unknown keys, and errors carry the dotted path of the offending field.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .controller import F_KINDS, ControllerConfig
from .dynamics import SimulationProblem, spectrum_distance
from .errors import ConfigError, InvalidDensityError
from .hermitian import HERMITICITY_TOL, hermiticity_defect, validate_density
from .pdesign import design_P
from .perturbation import NEGATIVE_MODES, THETA_KINDS, ThetaSpec
from .target import TargetFrame, diagonalize_target, transform_problem

BUNDLED = ("ladder",)

_SCHEMA = {
    "system": {"H0": None, "Hk": None, "hamiltonian_frame": "original"},
    "states": {"rho0": None, "rhof": None, "U2": None},
    "controller": {"mask": None, "M": 0.1, "theta_kind": "linear", "gamma_star": None,
                   "gamma_max": None, "negative": "signed", "K": None, "f_kind": "identity",
                   "f_scale": 1.0, "P": "auto", "P_min_gap": 0.5, "P_base": 0.01},
    "integration": {"dt": 0.01, "duration": 30.0, "record_stride": 1, "early_stop": None},
    "tolerances": {"gamma_tol": 1e-12, "gamma_max_iter": 100, "strong_regularity": 1e-8,
                   "connectedness": 1e-10, "p_diag": 1e-8, "check_gamma_max": 0.2,
                   "check_gamma_step": 0.01},
    "output": {"trajectory_csv": "trajectory.csv", "controls_csv": "controls.csv",
               "precision": 17, "frame": "original"},
}
_REQUIRED = {"system": ("H0", "Hk"), "states": ("rho0", "rhof")}
_OPTIONAL_BLOCKS = ("controller", "integration", "tolerances", "output")


@dataclass
class RunConfig:
    """Validated configuration.  ``raw`` is the fully defaulted JSON tree."""

    raw: dict
    H0: np.ndarray
    Hks: tuple
    rho0: np.ndarray
    rhof: np.ndarray
    U2: Optional[np.ndarray]
    hamiltonian_frame: str
    controller: ControllerConfig
    P_auto: bool
    dt: float
    duration: float
    record_stride: int
    early_stop: Optional[float]
    tolerances: dict
    output: dict

    @property
    def dim(self) -> int:
        return self.H0.shape[0]


def bundled_config_path(name: str) -> Path:
    if name not in BUNDLED:
        raise ConfigError(f"no bundled config named {name!r}; available: {', '.join(BUNDLED)}")
    return Path(str(resources.files("liouctl") / "data" / f"{name}.json"))


def load_config_text(path: str) -> str:
    """Read a config file; ``@name`` refers to a bundled config."""
    if path.startswith("@"):
        return bundled_config_path(path[1:]).read_text()
    return Path(path).read_text()


def _matrix(obj: Any, path: str) -> np.ndarray:
    if isinstance(obj, dict):
        extra = set(obj) - {"re", "im"}
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", path)
        if "re" not in obj:
            raise ConfigError("missing 're'", path)
        re_ = obj["re"]
        im_ = obj.get("im")
    else:
        re_, im_ = obj, None
    try:
        re_a = np.asarray(re_, dtype=float)
        im_a = np.zeros_like(re_a) if im_ is None else np.asarray(im_, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"matrix entries must be numbers ({exc})", path) from None
    if re_a.ndim != 2 or re_a.shape[0] != re_a.shape[1] or re_a.shape[0] == 0:
        raise ConfigError(f"expected a square matrix, got shape {re_a.shape}", path)
    if im_a.shape != re_a.shape:
        raise ConfigError(f"'im' shape {im_a.shape} differs from 're' shape {re_a.shape}", path)
    m = re_a + 1j * im_a
    if not np.all(np.isfinite(m)):
        raise ConfigError("non-finite matrix entry", path)
    return m


def _hermitian(obj, path):
    m = _matrix(obj, path)
    d = hermiticity_defect(m)
    if d > HERMITICITY_TOL:
        raise ConfigError(f"matrix is not Hermitian (||A - A^H||_F = {d:.3e})", path)
    return m


def _density(obj, path):
    m = _matrix(obj, path)
    try:
        return validate_density(m)
    except InvalidDensityError as exc:
        raise ConfigError(str(exc), path) from None


def _number(value, path, *, positive=False, nonneg=False, allow_none=False, integer=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", path)
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {value!r}", path)
    if integer and int(value) != value:
        raise ConfigError(f"expected an integer, got {value!r}", path)
    if positive and not value > 0:
        raise ConfigError(f"must be > 0, got {value!r}", path)
    if nonneg and value < 0:
        raise ConfigError(f"must be >= 0, got {value!r}", path)
    return int(value) if integer else float(value)


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(f"expected one of {list(options)}, got {value!r}", path)
    return value


def with_defaults(tree: dict) -> dict:
    """Fill defaults and reject unknown keys; returns a new tree."""
    if not isinstance(tree, dict):
        raise ConfigError("top level must be a JSON object")
    extra = set(tree) - set(_SCHEMA)
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    out = {}
    for block, defaults in _SCHEMA.items():
        given = tree.get(block)
        if given is None:
            if block not in _OPTIONAL_BLOCKS:
                raise ConfigError("missing block", block)
            given = {}
        if not isinstance(given, dict):
            raise ConfigError("expected an object", block)
        extra = set(given) - set(defaults)
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", block)
        for key in _REQUIRED.get(block, ()):
            if key not in given:
                raise ConfigError("missing required field", f"{block}.{key}")
        merged = copy.deepcopy(defaults)
        merged.update(copy.deepcopy(given))
        out[block] = merged
    return out


def parse_config(text: str) -> RunConfig:
    try:
        tree = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return parse_config_tree(tree)


def parse_config_tree(tree: dict) -> RunConfig:
    raw = with_defaults(tree)
    sysb, st, cb, ib, tb, ob = (raw[k] for k in _SCHEMA)

    H0 = _hermitian(sysb["H0"], "system.H0")
    n = H0.shape[0]
    if not isinstance(sysb["Hk"], list) or not sysb["Hk"]:
        raise ConfigError("expected a non-empty list of control Hamiltonians", "system.Hk")
    Hks = tuple(_hermitian(h, f"system.Hk.{k}") for k, h in enumerate(sysb["Hk"]))
    for k, h in enumerate(Hks):
        if h.shape != (n, n):
            raise ConfigError(f"shape {h.shape} differs from H0 {(n, n)}", f"system.Hk.{k}")
    ham_frame = _choice(sysb["hamiltonian_frame"], ("original", "tilde"), "system.hamiltonian_frame")

    rho0 = _density(st["rho0"], "states.rho0")
    rhof = _density(st["rhof"], "states.rhof")
    for name, m in (("rho0", rho0), ("rhof", rhof)):
        if m.shape != (n, n):
            raise ConfigError(f"shape {m.shape} differs from H0 {(n, n)}", f"states.{name}")
    drift = spectrum_distance(rho0, rhof)
    if drift > 1e-8:
        raise ConfigError(f"rho0 and rhof are not unitarily equivalent (spectra differ by {drift:.3e})",
                          "states")
    U2 = None if st["U2"] is None else _matrix(st["U2"], "states.U2")

    r = len(Hks)
    mask = cb["mask"] if cb["mask"] is not None else [1] * r
    if not isinstance(mask, list) or len(mask) != r:
        raise ConfigError(f"expected a list of {r} entries", "controller.mask")
    K = cb["K"] if cb["K"] is not None else [0.25] * r
    if not isinstance(K, list) or len(K) != r:
        raise ConfigError(f"expected a list of {r} gains", "controller.K")
    K = [_number(k, f"controller.K.{i}", positive=True) for i, k in enumerate(K)]
    f_kind = cb["f_kind"]
    if isinstance(f_kind, str):
        f_kind = [f_kind] * r
    if not isinstance(f_kind, list) or len(f_kind) != r:
        raise ConfigError(f"expected a string or a list of {r} strings", "controller.f_kind")
    for i, f in enumerate(f_kind):
        _choice(f, F_KINDS, f"controller.f_kind.{i}")
    try:
        theta = ThetaSpec(
            kind=_choice(cb["theta_kind"], THETA_KINDS, "controller.theta_kind"),
            slope=_number(cb["M"], "controller.M", nonneg=True),
            gamma_star=_number(cb["gamma_star"], "controller.gamma_star", positive=True, allow_none=True),
            negative=_choice(cb["negative"], NEGATIVE_MODES, "controller.negative"),
            gamma_max=_number(cb["gamma_max"], "controller.gamma_max", positive=True, allow_none=True),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "controller") from None

    P_auto = cb["P"] == "auto"
    if P_auto:
        P_values = None  # filled once the working-frame target is known
    else:
        if not isinstance(cb["P"], list) or len(cb["P"]) != n:
            raise ConfigError(f"expected 'auto' or a list of {n} values", "controller.P")
        P_values = [_number(p, f"controller.P.{i}", positive=True) for i, p in enumerate(cb["P"])]
    min_gap = _number(cb["P_min_gap"], "controller.P_min_gap", positive=True)
    base = _number(cb["P_base"], "controller.P_base", positive=True)

    dt = _number(ib["dt"], "integration.dt", positive=True)
    duration = _number(ib["duration"], "integration.duration", nonneg=True)
    stride = _number(ib["record_stride"], "integration.record_stride", positive=True, integer=True)
    early = _number(ib["early_stop"], "integration.early_stop", positive=True, allow_none=True)

    tol = {
        "gamma_tol": _number(tb["gamma_tol"], "tolerances.gamma_tol", positive=True),
        "gamma_max_iter": _number(tb["gamma_max_iter"], "tolerances.gamma_max_iter", positive=True, integer=True),
        "strong_regularity": _number(tb["strong_regularity"], "tolerances.strong_regularity", nonneg=True),
        "connectedness": _number(tb["connectedness"], "tolerances.connectedness", nonneg=True),
        "p_diag": _number(tb["p_diag"], "tolerances.p_diag", nonneg=True),
        "check_gamma_max": _number(tb["check_gamma_max"], "tolerances.check_gamma_max", positive=True),
        "check_gamma_step": _number(tb["check_gamma_step"], "tolerances.check_gamma_step", positive=True),
    }
    out = {
        "trajectory_csv": str(ob["trajectory_csv"]),
        "controls_csv": str(ob["controls_csv"]),
        "precision": _number(ob["precision"], "output.precision", positive=True, integer=True),
        "frame": _choice(ob["frame"], ("original", "tilde"), "output.frame"),
    }

    cfg = RunConfig(raw=raw, H0=H0, Hks=Hks, rho0=rho0, rhof=rhof, U2=U2,
                    hamiltonian_frame=ham_frame, controller=None, P_auto=P_auto, dt=dt,
                    duration=duration, record_stride=stride, early_stop=early,
                    tolerances=tol, output=out)
    if P_auto:
        frame = target_frame(cfg)
        d = np.real(np.diag(frame.rhof_tilde if frame is not None else rhof))
        P_values = list(design_P(d, min_gap, base).values)
    try:
        cfg.controller = ControllerConfig(mask=mask, theta=theta, gains=K, P_values=P_values,
                                          f_kind=f_kind, f_scale=_number(cb["f_scale"], "controller.f_scale", positive=True),
                                          gamma_tol=tol["gamma_tol"], gamma_max_iter=tol["gamma_max_iter"])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "controller") from None
    return cfg


def is_diagonal(m, tol: float = 1e-12) -> bool:
    m = np.asarray(m)
    return float(np.linalg.norm(m - np.diag(np.diag(m)))) <= tol


def target_frame(cfg: RunConfig) -> Optional[TargetFrame]:
    """Diagonalising frame for the target, or ``None`` when it is already diagonal."""
    if cfg.U2 is None and is_diagonal(cfg.rhof):
        return None
    try:
        return diagonalize_target(cfg.rhof, cfg.U2)
    except ValueError as exc:
        raise ConfigError(str(exc), "states.U2") from None


def build_problem(cfg: RunConfig, diagnostics: bool = True) -> tuple:
    """Working-frame problem plus the target frame (``None`` in direct mode)."""
    problem = SimulationProblem(H0=cfg.H0, Hks=cfg.Hks, rho0=cfg.rho0, rhof=cfg.rhof,
                                controller=cfg.controller, dt=cfg.dt, duration=cfg.duration,
                                record_stride=cfg.record_stride, early_stop=cfg.early_stop,
                                diagnostics=diagnostics)
    frame = target_frame(cfg)
    if frame is not None:
        problem = transform_problem(problem, frame, hamiltonians=cfg.hamiltonian_frame == "original")
    return problem, frame


def set_path(tree: dict, path: str, value) -> dict:
    """Copy of ``tree`` with the dotted ``path`` (list indices allowed) set to ``value``."""
    tree = copy.deepcopy(tree)
    parts = path.split(".")
    node = tree
    for i, part in enumerate(parts[:-1]):
        node = _child(node, part, ".".join(parts[: i + 1]), create=True, next_part=parts[i + 1])
    last = parts[-1]
    if isinstance(node, list):
        idx = _index(node, last, path)
        node[idx] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigError("cannot index into a scalar", path)
    return tree


def _index(node: list, part: str, path: str) -> int:
    try:
        idx = int(part)
    except ValueError:
        raise ConfigError(f"expected a list index, got {part!r}", path) from None
    if not -len(node) <= idx < len(node):
        raise ConfigError(f"index {idx} out of range", path)
    return idx


def _child(node, part, path, create, next_part):
    if isinstance(node, list):
        return node[_index(node, part, path)]
    if isinstance(node, dict):
        if part not in node or node[part] is None:
            if not create:
                raise ConfigError("no such field", path)
            node[part] = [] if next_part.lstrip("-").isdigit() else {}
        return node[part]
    raise ConfigError("cannot index into a scalar", path)
