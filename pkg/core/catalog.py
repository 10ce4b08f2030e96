"""
Catalog of generators, terminal values, loss fields and named scenarios

Every builder takes a parameter dictionary and rejects unknown parameters with
ConfigError, so configuration files fail loudly on typos.
"""

import logging
from typing import Any, Callable, Dict, Optional

import numpy as np

from model.data_models import (BrownianEnsemble, GeneratorSpec, InputPath, LossFieldPair,
                               ReflectedSolution, TerminalFunctional, TimeGrid)
from .error_handler import ConfigError
from .measure import mean
from .skorokhod import clipping_oracle

logger = logging.getLogger(__name__)


def _take(params: Dict[str, Any], defaults: Dict[str, float], kind: str) -> Dict[str, float]:
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown {kind} parameter(s): {sorted(unknown)}", {"allowed": sorted(defaults)})
    merged = dict(defaults)
    for key, value in params.items():
        try:
            merged[key] = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{kind} parameter '{key}' must be numeric", {"value": value})
    return merged


# Generators

def log_modulus(u: np.ndarray, eta: float) -> np.ndarray:
    """h(u) = u ln(1/u) on [0, eta], continued linearly with slope h'(eta) above eta."""
    u = np.asarray(u, dtype=float)
    safe = np.clip(u, 1e-300, eta)
    inner = np.where(u > 0, safe * np.log(1.0 / safe), 0.0)
    slope = np.log(1.0 / eta) - 1.0
    return np.where(u <= eta, inner, eta * np.log(1.0 / eta) + slope * (u - eta))


def make_zero_generator(params: Dict[str, Any]) -> GeneratorSpec:
    _take(params, {}, "generator")
    return GeneratorSpec(name="zero", evaluator=lambda t, y, mu, z, nu: np.zeros_like(y), lam=0.0)


def make_constant_generator(params: Dict[str, Any]) -> GeneratorSpec:
    p = _take(params, {"a": 0.0}, "generator")
    a = p["a"]
    return GeneratorSpec(name="constant", evaluator=lambda t, y, mu, z, nu: np.full_like(y, a), params=p)


def make_mean_y_generator(params: Dict[str, Any]) -> GeneratorSpec:
    p = _take(params, {"a": 1.0}, "generator")
    a = p["a"]
    return GeneratorSpec(name="mean_y",
                         evaluator=lambda t, y, mu, z, nu: np.full_like(y, a * mean(mu)[0]),
                         lam=0.0, params=p)


def make_linear_generator(params: Dict[str, Any]) -> GeneratorSpec:
    """f = a y + b E[y] + c_z zbar + const, zbar the average Z component."""
    p = _take(params, {"a": 0.0, "b": 0.0, "c_z": 0.0, "const": 0.0}, "generator")

    def evaluator(t, y, mu, z, nu):
        return p["a"] * y + p["b"] * mean(mu)[0] + p["c_z"] * z.mean(axis=1) + p["const"]

    return GeneratorSpec(name="linear", evaluator=evaluator, lam=abs(p["c_z"]), params=p)


def make_mao_log_generator(params: Dict[str, Any]) -> GeneratorSpec:
    """
    f = kappa/2 (sqrt(h(y^2)) + sqrt(h(E[y]^2))) + lam zbar with h = log_modulus

    Declared modulus rho(r) = 2 kappa^2 h(r); the z-constant is sqrt(2) lam.
    """
    p = _take(params, {"kappa": 0.5, "eta": 0.1, "lam": 0.1}, "generator")
    kappa, eta, lam = p["kappa"], p["eta"], p["lam"]
    if not 0 < eta < np.exp(-1.0):
        raise ConfigError("mao_log eta must lie in (0, 1/e)", {"eta": eta})

    def evaluator(t, y, mu, z, nu):
        m = mean(mu)[0]
        return (0.5 * kappa * (np.sqrt(log_modulus(y ** 2, eta)) + np.sqrt(log_modulus(m ** 2, eta)))
                + lam * z.mean(axis=1))

    def rho(r):
        return 2.0 * kappa ** 2 * log_modulus(r, eta)

    h_eta = eta * np.log(1.0 / eta)
    slope = np.log(1.0 / eta) - 1.0
    beta = max(1.5, 2.0 * kappa ** 2 * max(h_eta, slope))
    return GeneratorSpec(name="mao_log", evaluator=evaluator, regularity="mao",
                         lam=np.sqrt(2.0) * lam, beta=beta, rho=rho, params=p)


GENERATORS: Dict[str, Callable[[Dict[str, Any]], GeneratorSpec]] = {
    "zero": make_zero_generator,
    "constant": make_constant_generator,
    "mean_y": make_mean_y_generator,
    "linear": make_linear_generator,
    "mao_log": make_mao_log_generator,
}


# Terminal values

def make_affine_terminal(params: Dict[str, Any]) -> TerminalFunctional:
    p = _take(params, {"a": 0.0, "b": 1.0}, "terminal")
    return TerminalFunctional(name="affine", evaluator=lambda b_T, path: p["a"] + p["b"] * b_T.sum(axis=1), params=p)


def make_sine_terminal(params: Dict[str, Any]) -> TerminalFunctional:
    p = _take(params, {"a": 1.0, "b": 0.5}, "terminal")
    return TerminalFunctional(name="sine", evaluator=lambda b_T, path: p["a"] + p["b"] * np.sin(b_T.sum(axis=1)),
                              params=p)


def make_path_mean_terminal(params: Dict[str, Any]) -> TerminalFunctional:
    p = _take(params, {"a": 0.0, "b": 1.0}, "terminal")
    return TerminalFunctional(name="path_mean",
                              evaluator=lambda b_T, path: p["a"] + p["b"] * path.sum(axis=2).mean(axis=0),
                              params=p)


TERMINALS: Dict[str, Callable[[Dict[str, Any]], TerminalFunctional]] = {
    "affine": make_affine_terminal,
    "sine": make_sine_terminal,
    "path_mean": make_path_mean_terminal,
}


# Loss fields

def _barrier_gap(p: Dict[str, float], T: float, scale: float) -> float:
    gap = scale * min(p["u0"] - p["d0"], p["u0"] + p["u1"] * T - p["d0"] - p["d1"] * T)
    if not gap > 0:
        raise ConfigError("loss barriers need u(t) > d(t) on [0, T]", p)
    return gap


def make_affine_losses(params: Dict[str, Any], T: float) -> LossFieldPair:
    """L = slope (x - u(t)), R = slope (x - d(t)), u and d affine in t."""
    p = _take(params, {"u0": 1.0, "u1": 0.0, "d0": -1.0, "d1": 0.0, "slope": 1.0}, "losses")
    slope = p["slope"]
    if not slope > 0:
        raise ConfigError("affine losses need a positive slope", p)
    gap = _barrier_gap(p, T, slope)
    return LossFieldPair(
        L=lambda t, x, state: slope * (x - (p["u0"] + p["u1"] * t)),
        R=lambda t, x, state: slope * (x - (p["d0"] + p["d1"] * t)),
        c=slope, C=slope, gap=gap, name="affine", params=p,
    )


def make_arctan_losses(params: Dict[str, Any], T: float) -> LossFieldPair:
    """L = x + a arctan(x) - u(t), R = x + a arctan(x) - d(t); bi-Lipschitz with c = 1, C = 1 + a."""
    p = _take(params, {"u0": 1.0, "u1": 0.0, "d0": -1.0, "d1": 0.0, "a": 0.2}, "losses")
    a = p["a"]
    if a < 0:
        raise ConfigError("arctan losses need a >= 0", p)
    gap = _barrier_gap(p, T, 1.0)
    return LossFieldPair(
        L=lambda t, x, state: x + a * np.arctan(x) - (p["u0"] + p["u1"] * t),
        R=lambda t, x, state: x + a * np.arctan(x) - (p["d0"] + p["d1"] * t),
        c=1.0, C=1.0 + a, gap=gap, name="arctan", params=p,
    )


def make_state_shift_losses(params: Dict[str, Any], T: float) -> LossFieldPair:
    """Affine barriers shifted per particle by sigma tanh(B_t): L = x - u - sigma tanh(B_t)."""
    p = _take(params, {"u0": 1.0, "u1": 0.0, "d0": -1.0, "d1": 0.0, "sigma": 0.1}, "losses")
    sigma = p["sigma"]

    def shift(state, like):
        if state is None:
            return np.zeros_like(like)
        return sigma * np.tanh(state.sum(axis=1))

    gap = _barrier_gap(p, T, 1.0)
    return LossFieldPair(
        L=lambda t, x, state: x - (p["u0"] + p["u1"] * t) - shift(state, x),
        R=lambda t, x, state: x - (p["d0"] + p["d1"] * t) - shift(state, x),
        c=1.0, C=1.0, gap=gap, name="state_shift", params=p,
    )


LOSSES: Dict[str, Callable[[Dict[str, Any], float], LossFieldPair]] = {
    "affine": make_affine_losses,
    "arctan": make_arctan_losses,
    "state_shift": make_state_shift_losses,
}


def build_generator(key: str, params: Dict[str, Any]) -> GeneratorSpec:
    if key not in GENERATORS:
        raise ConfigError(f"unknown generator '{key}'", {"known": sorted(GENERATORS)})
    return GENERATORS[key](params)


def build_terminal(key: str, params: Dict[str, Any]) -> TerminalFunctional:
    if key not in TERMINALS:
        raise ConfigError(f"unknown terminal '{key}'", {"known": sorted(TERMINALS)})
    return TERMINALS[key](params)


def build_losses(key: str, params: Dict[str, Any], T: float) -> LossFieldPair:
    if key not in LOSSES:
        raise ConfigError(f"unknown losses '{key}'", {"known": sorted(LOSSES)})
    return LOSSES[key](params, T)


# Named scenarios: flat key -> value defaults, same keys as a configuration file

SCENARIOS: Dict[str, Dict[str, Any]] = {
    "inactive_barriers": {
        "T": 1.0, "n_steps": 50, "N": 2000, "d": 1, "seed": 7,
        "generator": "constant", "generator.a": 0.5,
        "terminal": "affine", "terminal.a": 0.0, "terminal.b": 1.0,
        "losses": "affine", "losses.u0": 50.0, "losses.d0": -50.0,
    },
    "constant_drift_lower_barrier": {
        "T": 1.0, "n_steps": 50, "N": 10000, "d": 1, "seed": 11,
        "generator": "constant", "generator.a": -1.0,
        "terminal": "affine", "terminal.a": 1.0, "terminal.b": 1.0,
        "losses": "affine", "losses.u0": 10.0, "losses.d0": 0.5,
    },
    "linear_meanfield": {
        "T": 1.0, "n_steps": 100, "N": 10000, "d": 1, "seed": 13,
        "generator": "mean_y", "generator.a": 1.0,
        "terminal": "affine", "terminal.a": 1.0, "terminal.b": 0.2,
        "losses": "affine", "losses.u0": 50.0, "losses.d0": -50.0,
    },
    "mao_log_driver": {
        "T": 1.0, "n_steps": 50, "N": 10000, "d": 1, "seed": 17,
        "generator": "mao_log", "generator.kappa": 0.5, "generator.eta": 0.1, "generator.lam": 0.1,
        "terminal": "affine", "terminal.a": 1.0, "terminal.b": 0.5,
        "losses": "affine", "losses.u0": 1.2, "losses.d0": 0.9,
        "max_picard_iters": 20,
    },
    "nonlinear_losses": {
        "T": 1.0, "n_steps": 50, "N": 5000, "d": 1, "seed": 19,
        "generator": "mean_y", "generator.a": 0.5,
        "terminal": "affine", "terminal.a": 1.0, "terminal.b": 0.5,
        "losses": "arctan", "losses.a": 0.2, "losses.u0": 1.35, "losses.d0": 0.6,
    },
}


def affine_oracle_applies(generator: GeneratorSpec, terminal: TerminalFunctional, losses: LossFieldPair) -> bool:
    return generator.name in ("zero", "constant") and terminal.name == "affine" and losses.name == "affine"


def affine_oracle_K(grid: TimeGrid, generator: GeneratorSpec, terminal: TerminalFunctional,
                    losses: LossFieldPair) -> np.ndarray:
    """
    Forward K from the exact mean path E[y_t] = a_xi + a_f (T - t)

    The reversed problem keeps the mean inside [d(T - t), u(T - t)] by clipping.
    """
    a_f = generator.params.get("a", 0.0)
    mean_path = terminal.params["a"] + a_f * grid.times
    reversed_times = grid.T - grid.times
    p = losses.params
    upper = p["u0"] + p["u1"] * reversed_times
    lower = p["d0"] + p["d1"] * reversed_times
    _, K_bar = clipping_oracle(InputPath(grid=grid, values=mean_path), lower, upper)
    n = grid.n_steps
    return K_bar[n] - K_bar[::-1]


def closed_form_error(grid: TimeGrid, generator: GeneratorSpec, terminal: TerminalFunctional,
                      losses: LossFieldPair, solution: ReflectedSolution) -> Optional[Dict[str, Any]]:
    """
    Distance to the available closed form, or None when the scenario has none

    Affine data: sup |K - K_oracle|. Mean-field linear driver with K = 0:
    sup_k |mean(Y_k) - m e^{a (T - t_k)}|.
    """
    if affine_oracle_applies(generator, terminal, losses):
        oracle = affine_oracle_K(grid, generator, terminal, losses)
        return {"kind": "affine_K", "error": float(np.max(np.abs(solution.K - oracle)))}
    if generator.name == "mean_y" and terminal.name == "affine" and not np.any(solution.K):
        a = generator.params["a"]
        expected = terminal.params["a"] * np.exp(a * (grid.T - grid.times))
        return {"kind": "meanfield_ode", "error": float(np.max(np.abs(solution.Y.mean(axis=1) - expected)))}
    return None
