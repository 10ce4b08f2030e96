"""
Core data models for the mean-reflected BSDE solver.

Arrays follow one layout everywhere: the first axis is the grid node k = 0..n_steps,
the second the particle i, the third (where present) the Brownian component.
"""
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of [0, T]."""
    T: float = 1.0
    n_steps: int = 50

    def __post_init__(self):
        """Validate grid data after initialization."""
        if not self.T > 0:
            raise ValueError("TimeGrid horizon T must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("TimeGrid n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1, dtype=float) * self.T / self.n_steps
        t[-1] = self.T
        return t

    def __len__(self) -> int:
        return self.n_steps + 1


@dataclass
class InputPath:
    """Continuous input s sampled at the grid nodes."""
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.grid),):
            raise ValueError(
                f"InputPath needs one value per node: expected {len(self.grid)}, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("InputPath values must be finite")


@dataclass
class ConstraintPair:
    """
    Barrier functions (l, r) of a Skorokhod problem.

    Both maps take (t, x) with scalar x and are strictly increasing and
    bi-Lipschitz in x with constants (c, C); r - l stays above ``gap``.
    """
    l: Callable[[float, float], float]
    r: Callable[[float, float], float]
    c: float
    C: float
    gap: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("ConstraintPair lower bi-Lipschitz constant c must be positive")
        if self.C < self.c:
            raise ValueError("ConstraintPair requires C >= c")
        if not self.gap > 0:
            raise ValueError("ConstraintPair gap must be positive")

    def check_assumptions(self, grid: TimeGrid, x_box: Tuple[float, float] = (-10.0, 10.0),
                          n_samples: int = 200, seed: int = 0, tol: float = 1e-9) -> List[str]:
        """
        Sample (t, x, y) and report violations of monotonicity, bi-Lipschitz bounds and the gap.

        Returns:
            List of human-readable violations; empty when every sample passes
        """
        rng = np.random.default_rng(seed)
        ts = rng.choice(grid.times, size=n_samples)
        xs = rng.uniform(x_box[0], x_box[1], size=n_samples)
        ys = rng.uniform(x_box[0], x_box[1], size=n_samples)
        violations = []
        for t, x, y in zip(ts, xs, ys):
            if x == y:
                continue
            lo, hi = min(x, y), max(x, y)
            for name, g in (("l", self.l), ("r", self.r)):
                diff = g(t, hi) - g(t, lo)
                if diff <= 0:
                    violations.append(f"{name}(t={t:.4g}, .) not increasing on [{lo:.4g}, {hi:.4g}]")
                ratio = abs(diff) / (hi - lo)
                if ratio < self.c - tol or ratio > self.C + tol:
                    violations.append(f"{name} slope {ratio:.4g} outside [{self.c}, {self.C}] at t={t:.4g}")
            if self.r(t, x) - self.l(t, x) < self.gap - tol:
                violations.append(f"r - l below gap {self.gap} at (t={t:.4g}, x={x:.4g})")
        return violations


@dataclass
class SkorokhodSolution:
    """Discrete solution (x, K) with K = Kr - Kl."""
    grid: TimeGrid
    x: np.ndarray
    K: np.ndarray
    Kr: np.ndarray
    Kl: np.ndarray
    flat_off_residual: float
    root_tol: float = 1e-10


@dataclass
class BoundReport:
    """Left and right side of a numerically checked estimate."""
    lhs: float
    rhs: float
    holds: bool
    slack: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EmpiricalMeasure:
    """Uniformly weighted empirical measure of N samples in R^d."""
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim == 0:
            samples = samples.reshape(1, 1)
        elif samples.ndim == 1:
            samples = samples.reshape(-1, 1)
        if samples.ndim != 2:
            raise ValueError("EmpiricalMeasure samples must be an (N, d) array")
        if samples.shape[0] < 1 or samples.shape[1] < 1:
            raise ValueError("EmpiricalMeasure needs at least one sample of dimension >= 1")
        if not np.all(np.isfinite(samples)):
            raise ValueError("EmpiricalMeasure samples must be finite")
        self.samples = samples

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @classmethod
    def dirac0(cls, d: int = 1) -> "EmpiricalMeasure":
        return cls(np.zeros((1, d)))


@dataclass
class BrownianEnsemble:
    """N simulated d-dimensional Brownian paths on a grid."""
    grid: TimeGrid
    d: int
    N: int
    seed: int
    increments: np.ndarray
    paths: np.ndarray

    def __post_init__(self):
        n = self.grid.n_steps
        if self.increments.shape != (n, self.N, self.d):
            raise ValueError("BrownianEnsemble increments must have shape (n_steps, N, d)")
        if self.paths.shape != (n + 1, self.N, self.d):
            raise ValueError("BrownianEnsemble paths must have shape (n_steps + 1, N, d)")

    def variance_zscores(self) -> np.ndarray:
        """
        Standardized deviation of the per-step, per-component sample variance from dt.

        Returns:
            Array of shape (n_steps, d); values beyond 5 flag a broken sampler
        """
        dt = self.grid.dt
        sample_var = self.increments.var(axis=1, ddof=1)
        standard_error = dt * np.sqrt(2.0 / (self.N - 1))
        return (sample_var - dt) / standard_error

    def same_as(self, other: "BrownianEnsemble") -> bool:
        if self is other:
            return True
        return (self.grid == other.grid and self.d == other.d and self.N == other.N
                and self.seed == other.seed and np.array_equal(self.increments, other.increments))


@dataclass
class GeneratorSpec:
    """
    Driver f(t, y, mu, z, nu) of a mean-field BSDE.

    The evaluator is vectorized over particles: y has shape (N,), z has shape (N, d),
    mu and nu are EmpiricalMeasure objects; the result has shape (N,).
    """
    name: str
    evaluator: Callable[..., np.ndarray]
    regularity: str = "lipschitz"
    lam: float = 0.0
    beta: Optional[float] = None
    rho: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.regularity not in ("lipschitz", "mao"):
            raise ValueError("GeneratorSpec regularity must be 'lipschitz' or 'mao'")
        if self.lam < 0:
            raise ValueError("GeneratorSpec lam must be nonnegative")
        if self.regularity == "mao":
            if self.rho is None or self.beta is None:
                raise ValueError("mao generators need both rho and beta")
            r = np.linspace(0.0, 10.0, 201)
            values = np.asarray(self.rho(r), dtype=float)
            if values[0] != 0.0:
                raise ValueError("rho(0) must be 0")
            if np.any(np.diff(values) < -1e-12):
                raise ValueError("rho must be nondecreasing")
            if np.any(values[1:-1] + 1e-12 < 0.5 * (values[:-2] + values[2:])):
                raise ValueError("rho must be concave")
            if np.any(values > self.beta * (1.0 + r) + 1e-12):
                raise ValueError("rho must satisfy rho(r) <= beta * (1 + r)")

    def evaluate(self, t: float, y: np.ndarray, mu: EmpiricalMeasure,
                 z: np.ndarray, nu: EmpiricalMeasure) -> np.ndarray:
        return np.asarray(self.evaluator(t, y, mu, z, nu), dtype=float)

    def driver(self, k: int, t: float, y: np.ndarray, mu: EmpiricalMeasure,
               z: np.ndarray, nu: EmpiricalMeasure) -> np.ndarray:
        """Step-indexed form used by the backward solver; k is unused here."""
        return self.evaluate(t, y, mu, z, nu)

    def at_origin(self, t: float, d: int = 1) -> float:
        """f(t, 0, delta_0, 0, delta_0)."""
        zero_measure = EmpiricalMeasure.dirac0(1)
        value = self.evaluate(t, np.zeros(1), zero_measure, np.zeros((1, d)), EmpiricalMeasure.dirac0(d))
        return float(value[0])


@dataclass
class TerminalFunctional:
    """Terminal value xi as a function of B_T (and optionally the full path)."""
    name: str
    evaluator: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: Dict[str, float] = field(default_factory=dict)

    def evaluate(self, ensemble: BrownianEnsemble) -> np.ndarray:
        values = np.asarray(self.evaluator(ensemble.paths[-1], ensemble.paths), dtype=float)
        if values.shape != (ensemble.N,):
            raise ValueError(f"Terminal '{self.name}' must return one value per particle")
        return values


@dataclass
class BackwardSolution:
    """Particle-wise (Y, Z) of an unconstrained MFBSDE solve."""
    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    basis_degree: int
    residuals: np.ndarray
    ensemble: Optional[BrownianEnsemble] = None

    def __post_init__(self):
        n = self.grid.n_steps
        if self.Y.ndim != 2 or self.Y.shape[0] != n + 1:
            raise ValueError("BackwardSolution Y must have shape (n_steps + 1, N)")
        if self.Z.shape[:2] != self.Y.shape:
            raise ValueError("BackwardSolution Z must have shape (n_steps + 1, N, d)")


@dataclass
class GapReport:
    """Empirical sides of the MFBSDE perturbation estimate."""
    sup_Y_gap2: float
    Z_gap2: float
    terminal_gap2: float
    driver_gap2: float
    lhs: float
    rhs: float
    ratio: float


@dataclass
class LossFieldPair:
    """
    Loss functions (L, R) defining the distributional barriers.

    Each map takes (t, x, state) where x has shape (N,) and state is the (N, d)
    Brownian position of the particles (ignored by deterministic losses).
    """
    L: Callable[[float, np.ndarray, Optional[np.ndarray]], np.ndarray]
    R: Callable[[float, np.ndarray, Optional[np.ndarray]], np.ndarray]
    c: float
    C: float
    gap: float
    name: str = "custom"
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("LossFieldPair lower bi-Lipschitz constant c must be positive")
        if self.C < self.c:
            raise ValueError("LossFieldPair requires C >= c")
        if not self.gap > 0:
            raise ValueError("LossFieldPair gap must be positive")

    def check_assumptions(self, grid: TimeGrid, state: Optional[np.ndarray] = None,
                          x_box: Tuple[float, float] = (-10.0, 10.0),
                          n_samples: int = 200, seed: int = 0, tol: float = 1e-9) -> List[str]:
        """Sampled monotonicity, bi-Lipschitz and gap checks per particle state."""
        rng = np.random.default_rng(seed)
        violations = []
        for t in rng.choice(grid.times, size=min(n_samples, 20)):
            m = n_samples if state is None else state.shape[0]
            xs = rng.uniform(x_box[0], x_box[1], size=m)
            ys = xs + rng.uniform(1e-3, 1.0, size=m)
            for name, g in (("L", self.L), ("R", self.R)):
                slope = (g(t, ys, state) - g(t, xs, state)) / (ys - xs)
                if np.any(slope < self.c - tol) or np.any(slope > self.C + tol):
                    violations.append(f"{name} slope outside [{self.c}, {self.C}] at t={t:.4g}")
            if np.any(self.R(t, xs, state) - self.L(t, xs, state) < self.gap - tol):
                violations.append(f"R - L below gap {self.gap} at t={t:.4g}")
        return violations


@dataclass
class Scenario:
    """Everything a doubly mean-reflected solve needs."""
    grid: TimeGrid
    d: int
    N: int
    seed: int
    generator: GeneratorSpec
    terminal: TerminalFunctional
    losses: LossFieldPair
    picard_tol: float = 1e-6
    max_picard_iters: int = 50
    basis_degree: int = 4
    root_tol: float = 1e-10
    name: str = "custom"

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("Scenario needs N >= 2 particles")
        if self.d < 1:
            raise ValueError("Scenario Brownian dimension d must be >= 1")
        if not (self.picard_tol > 0 and self.root_tol > 0):
            raise ValueError("Scenario tolerances must be positive")
        if self.max_picard_iters < 1:
            raise ValueError("Scenario max_picard_iters must be >= 1")
        if self.basis_degree < 0:
            raise ValueError("Scenario basis_degree must be >= 0")


@dataclass
class PicardIterate:
    """One Picard step: the unconstrained solve, its Skorokhod solve, and the assembly."""
    y_solution: BackwardSolution
    skorokhod: SkorokhodSolution
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    KR: np.ndarray
    KL: np.ndarray


@dataclass
class ReflectedSolution:
    """Particle-wise (Y, Z) plus the deterministic reflection K = KR - KL."""
    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    KR: np.ndarray
    KL: np.ndarray
    picard_history: List[float]
    iterations: int
    converged: bool = True
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    constraint_report: Optional["AuditReport"] = None

    def __post_init__(self):
        n = self.grid.n_steps
        for name in ("K", "KR", "KL"):
            if getattr(self, name).shape != (n + 1,):
                raise ValueError(f"ReflectedSolution {name} must be stored once per node")


@dataclass
class AuditReport:
    """Constraint, flat-off and dynamics residuals of a reflected solution."""
    times: np.ndarray
    EL: np.ndarray
    ER: np.ndarray
    tol_total: np.ndarray
    dKR: np.ndarray
    dKL: np.ndarray
    flat_off_R: float
    flat_off_L: float
    dynamics_residual: float
    constraints_hold: bool
    flat_off_holds: bool
    assembly_holds: bool
    terminal_exact: bool
    k_total_variation: float
    uniform_bound: Optional[float] = None
    uniform_bound_ratio: Optional[float] = None
    details: Dict[str, Any] = field(default_factory=dict)

    @property
    def hard_invariants_hold(self) -> bool:
        return self.assembly_holds and self.terminal_exact

    def summary(self) -> Dict[str, Any]:
        """JSON-ready scalar summary."""
        return {
            "constraints_hold": bool(self.constraints_hold),
            "flat_off_holds": bool(self.flat_off_holds),
            "assembly_holds": bool(self.assembly_holds),
            "terminal_exact": bool(self.terminal_exact),
            "flat_off_R": float(self.flat_off_R),
            "flat_off_L": float(self.flat_off_L),
            "dynamics_residual": float(self.dynamics_residual),
            "k_total_variation": float(self.k_total_variation),
            "max_EL": float(np.max(self.EL)),
            "min_ER": float(np.min(self.ER)),
            "max_tol_total": float(np.max(self.tol_total)),
            "uniform_bound": None if self.uniform_bound is None else float(self.uniform_bound),
            "uniform_bound_ratio": None if self.uniform_bound_ratio is None else float(self.uniform_bound_ratio),
            **{k: v for k, v in self.details.items() if isinstance(v, (int, float, bool, str, type(None)))},
        }


@dataclass
class RunReport:
    """Outcome of one configured run: echo, history, residual tables, oracle error, timings."""
    scenario: Dict[str, str]
    picard_history: List[float]
    audit: Dict[str, Any]
    constraint_table: Dict[str, List[float]]
    closed_form: Optional[Dict[str, Any]]
    timings: Dict[str, float]
    hard_invariants_hold: bool
    diagnostics: Dict[str, Any] = field(default_factory=dict)

    @property
    def closed_form_error(self) -> Optional[float]:
        return None if self.closed_form is None else self.closed_form["error"]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "picard_history": list(self.picard_history),
            "audit": self.audit,
            "constraint_table": self.constraint_table,
            "closed_form": self.closed_form,
            "timings": self.timings,
            "hard_invariants_hold": self.hard_invariants_hold,
            "diagnostics": self.diagnostics,
        }


@dataclass
class SweepReport:
    """Convergence table of one swept configuration axis."""
    axis: str
    values: List[float]
    rows: List[Dict[str, Any]]

    def column(self, name: str) -> List[Any]:
        return [row[name] for row in self.rows]
