from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from typing import List, Optional, Dict, Any, Literal
from datetime import datetime
import hashlib
import math

import numpy as np

from config import config


def _as_float_array(value: Any) -> np.ndarray:
    return np.array(value, dtype=float, copy=True).reshape(-1)


# ---------------------------------------------------------------------------
# Random streams and Levy triplets
# ---------------------------------------------------------------------------

class RngStream(BaseModel):
    """Seeded variate stream; one replica owns exactly one stream.

    Splitting rule: the generator seed is the first 8 bytes (little endian) of
    blake2b("<seed>:<stream_id>"), fed to a PCG64 bit generator.
    """
    model_config = ConfigDict(frozen=True)

    seed: int = Field(ge=0, lt=2**64)
    stream_id: int = Field(0, ge=0, lt=2**64)

    def child_seed(self) -> int:
        digest = hashlib.blake2b(f"{self.seed}:{self.stream_id}".encode(), digest_size=8).digest()
        return int.from_bytes(digest, "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.child_seed()))


class JumpLaw(BaseModel):
    """Finite-activity jump law: Pi(dx) = intensity * density(x) dx."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["none", "two_sided_exponential", "gaussian", "point_masses"] = "none"
    intensity: float = Field(0.0, ge=0)
    # two_sided_exponential: p_up*rate_up*e^{-rate_up x} on x>0, (1-p_up)*rate_down*e^{rate_down x} on x<0
    rate_up: Optional[float] = None
    rate_down: Optional[float] = None
    p_up: float = Field(0.5, ge=0, le=1)
    # gaussian
    mean: float = 0.0
    std: Optional[float] = None
    # point_masses
    locations: List[float] = Field(default_factory=list)
    weights: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_family(self):
        if (self.intensity == 0) != (self.kind == "none"):
            raise ValueError("jump intensity must be 0 exactly when kind is 'none'")
        if self.kind == "two_sided_exponential":
            if not self.rate_up or not self.rate_down or self.rate_up <= 0 or self.rate_down <= 0:
                raise ValueError("two_sided_exponential needs rate_up > 0 and rate_down > 0")
        elif self.kind == "gaussian":
            if self.std is None or self.std <= 0:
                raise ValueError("gaussian jumps need std > 0")
        elif self.kind == "point_masses":
            if not self.locations or len(self.locations) != len(self.weights):
                raise ValueError("point_masses needs matching, non-empty locations and weights")
            if any(w < 0 for w in self.weights) or abs(sum(self.weights) - 1.0) > 1e-12:
                raise ValueError(f"point_masses weights must be non-negative and sum to 1, got {sum(self.weights)}")
        return self

    @classmethod
    def two_sided_exponential(cls, rate: float, intensity: float) -> "JumpLaw":
        """Symmetric law with density (rate/2) e^{-rate |x|}."""
        return cls(kind="two_sided_exponential", intensity=intensity, rate_up=rate, rate_down=rate, p_up=0.5)

    @classmethod
    def gaussian(cls, std: float, intensity: float, mean: float = 0.0) -> "JumpLaw":
        return cls(kind="gaussian", intensity=intensity, std=std, mean=mean)

    @classmethod
    def point_masses(cls, locations: List[float], weights: List[float], intensity: float) -> "JumpLaw":
        return cls(kind="point_masses", intensity=intensity, locations=list(locations), weights=list(weights))

    @property
    def theta_star(self) -> float:
        """Supremum of the (non-negative) domain of the moment generating function."""
        if self.kind == "two_sided_exponential":
            return float(self.rate_up)
        return math.inf

    @property
    def expected_jump(self) -> float:
        if self.kind == "two_sided_exponential":
            return self.p_up / self.rate_up - (1.0 - self.p_up) / self.rate_down
        if self.kind == "gaussian":
            return self.mean
        if self.kind == "point_masses":
            return float(np.dot(self.locations, self.weights))
        return 0.0

    @property
    def second_moment(self) -> float:
        if self.kind == "two_sided_exponential":
            return 2.0 * self.p_up / self.rate_up**2 + 2.0 * (1.0 - self.p_up) / self.rate_down**2
        if self.kind == "gaussian":
            return self.std**2 + self.mean**2
        if self.kind == "point_masses":
            return float(np.dot(np.square(self.locations), self.weights))
        return 0.0


class LevyTriplet(BaseModel):
    """(drift b, diffusion sigma, finite-activity jumps) of the driving process Z.

    Laplace exponent: psi(theta) = b theta + sigma^2 theta^2 / 2 + intensity (M(theta) - 1),
    so E(Z_1) = b + intensity * E[jump]. Triplets must be centered unless
    allow_uncentered is set (tilted triplets are never centered).
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    drift: float = 0.0
    diffusion: float = Field(1.0, gt=0)
    jumps: JumpLaw = Field(default_factory=JumpLaw)
    allow_uncentered: bool = False

    @model_validator(mode="after")
    def _check_centered(self):
        if not self.allow_uncentered and abs(self.mean_velocity) > 1e-9:
            raise ValueError(
                f"triplet is not centered: E(Z_1) = {self.mean_velocity}; "
                "use LevyTriplet.centered(...) or set allow_uncentered"
            )
        return self

    @classmethod
    def brownian(cls, sigma: float = 1.0) -> "LevyTriplet":
        return cls(drift=0.0, diffusion=sigma)

    @classmethod
    def centered(cls, diffusion: float = 1.0, jumps: Optional[JumpLaw] = None) -> "LevyTriplet":
        jumps = jumps or JumpLaw()
        return cls(drift=-jumps.intensity * jumps.expected_jump, diffusion=diffusion, jumps=jumps)

    @property
    def mean_velocity(self) -> float:
        return self.drift + self.jumps.intensity * self.jumps.expected_jump


class LaplaceExponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    triplet: LevyTriplet
    theta_star: float = Field(gt=0)


class DualityPoint(BaseModel):
    c: float = Field(gt=0)
    theta_c: float = Field(ge=0)
    rate: float
    at_boundary: bool = False


# ---------------------------------------------------------------------------
# Estimates, grids, closed-form family
# ---------------------------------------------------------------------------

class EstimateWithCI(BaseModel):
    value: float
    stderr: float = Field(ge=0)
    n: int = Field(ge=1)

    def lower(self, k: float = 2.0) -> float:
        return self.value - k * self.stderr

    def upper(self, k: float = 2.0) -> float:
        return self.value + k * self.stderr


class QsdBrownianFamily(BaseModel):
    """Member nu_r of the QSD family of Brownian motion with drift -c."""
    c: float = Field(gt=0)
    r: float = Field(gt=0)
    m: float = Field(gt=0)
    beta: float = Field(ge=0)

    @model_validator(mode="after")
    def _check_integrable(self):
        if self.r > self.c**2 / 2 * (1 + 1e-12):
            raise ValueError(f"r={self.r} exceeds c^2/2={self.c**2 / 2}: density not integrable")
        return self

    @property
    def is_minimal(self) -> bool:
        return self.beta == 0.0

    @property
    def mean_absorption_time(self) -> float:
        return 1.0 / self.r


class Grid1D(BaseModel):
    xmin: float
    xmax: float
    h: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_spacing(self):
        if self.xmax <= self.xmin:
            raise ValueError(f"empty grid: xmin={self.xmin} >= xmax={self.xmax}")
        cells = (self.xmax - self.xmin) / self.h
        if abs(cells - round(cells)) > 1e-7 * max(1.0, cells):
            raise ValueError(f"(xmax - xmin)/h = {cells} is not an integer")
        return self

    @property
    def n_cells(self) -> int:
        return int(round((self.xmax - self.xmin) / self.h))

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.xmin, self.xmax, self.n_cells + 1)

    def function(self, values: Any, diagnostics: Optional[Dict[str, Any]] = None) -> "GridFunction":
        return GridFunction(xmin=self.xmin, xmax=self.xmax, h=self.h, values=values, diagnostics=diagnostics or {})


class GridFunction(Grid1D):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("values", mode="before")
    @classmethod
    def _to_array(cls, v):
        return _as_float_array(v)

    @model_validator(mode="after")
    def _check_values(self):
        if self.values.size != self.n_cells + 1:
            raise ValueError(f"expected {self.n_cells + 1} values, got {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        return self

    @property
    def grid(self) -> Grid1D:
        return Grid1D(xmin=self.xmin, xmax=self.xmax, h=self.h)

    def mass(self) -> float:
        """Cell-sum mass h * sum(values); equals the trapezoid rule when both ends vanish."""
        return float(self.h * self.values.sum())


# ---------------------------------------------------------------------------
# Finite-state chains
# ---------------------------------------------------------------------------

class SubstochasticMatrix(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    entries: np.ndarray

    @field_validator("entries", mode="before")
    @classmethod
    def _to_matrix(cls, v):
        return np.array(v, dtype=float, copy=True, ndmin=2)

    @model_validator(mode="after")
    def _check_substochastic(self):
        p = self.entries
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("transition matrix has negative entries")
        rows = p.sum(axis=1)
        if np.any(rows > 1 + 1e-12):
            raise ValueError(f"row sums exceed 1 (max {rows.max()})")
        if not np.any(rows < 1 - 1e-15):
            raise ValueError("no absorption: every row sums to 1")
        return self

    @property
    def n(self) -> int:
        return self.entries.shape[0]


class Eigentriple(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    R: float = Field(gt=1)
    nu: np.ndarray
    beta: np.ndarray
    iterations: int = 0


# ---------------------------------------------------------------------------
# Particle systems
# ---------------------------------------------------------------------------

class ParticleEnsemble(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    positions: np.ndarray
    t: float = 0.0
    resample_count: int = 0

    @field_validator("positions", mode="before")
    @classmethod
    def _to_array(cls, v):
        return _as_float_array(v)

    @model_validator(mode="after")
    def _check_size(self):
        if self.positions.size < 2:
            raise ValueError(f"an ensemble needs N >= 2 particles, got {self.positions.size}")
        return self

    @property
    def N(self) -> int:
        return int(self.positions.size)


class FvConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    triplet: LevyTriplet = Field(default_factory=LevyTriplet.brownian)
    c: float = Field(gt=0)
    N: int = Field(ge=2)
    dt: float = Field(gt=0)
    T: float = Field(ge=0)
    bridge_correction: bool = config.BRIDGE_CORRECTION
    seed: int = config.SEED
    stream_id: int = 0
    snapshot_every: int = Field(100, ge=1)

    @model_validator(mode="after")
    def _check_horizon(self):
        if 0 < self.T < self.dt:
            raise ValueError(f"horizon T={self.T} is shorter than one step dt={self.dt}")
        return self

    @property
    def stream(self) -> RngStream:
        return RngStream(seed=self.seed, stream_id=self.stream_id)


class BbmState(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    positions: np.ndarray
    t: float = 0.0
    events: int = 0

    @property
    def N_t(self) -> int:
        return int(self.positions.size)


class SelectionConfig(BaseModel):
    """N-BBM / N-BRW run parameters.

    The dynamics are event driven and exact in law; dt is only the spacing of
    recorded snapshots.
    """
    model_config = ConfigDict(extra="forbid")

    N: int = Field(ge=2)
    r: float = Field(1.0, gt=0)
    displacement: Optional[JumpLaw] = None
    triplet: Optional[LevyTriplet] = None
    dt: float = Field(0.5, gt=0)
    T: float = Field(gt=0)
    seed: int = config.SEED
    stream_id: int = 0
    dump_positions_every: int = Field(1, ge=0)

    @model_validator(mode="after")
    def _check_displacement(self):
        if self.displacement is not None:
            if self.displacement.kind == "none":
                raise ValueError("N-BRW displacement law cannot be 'none'")
            if abs(self.displacement.expected_jump) > 1e-12:
                raise ValueError(f"displacement must be symmetric, mean is {self.displacement.expected_jump}")
        return self

    @property
    def stream(self) -> RngStream:
        return RngStream(seed=self.seed, stream_id=self.stream_id)


class Snapshot(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    t: float
    positions: Optional[np.ndarray] = None
    values: Optional[GridFunction] = None
    counters: Dict[str, float] = Field(default_factory=dict)


class SnapshotSeries(BaseModel):
    kind: str
    N: Optional[int] = None
    snapshots: List[Snapshot] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots], dtype=float)

    def counter(self, name: str) -> np.ndarray:
        return np.array([s.counters.get(name, math.nan) for s in self.snapshots], dtype=float)


class PdeConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    grid: Grid1D
    dt: float = Field(gt=0)
    T: float = Field(ge=0)
    scheme: Literal["explicit", "semi_implicit"] = "explicit"
    sigma: float = Field(1.0, gt=0)
    snapshot_interval: Optional[float] = Field(None, gt=0)


class FreeBoundarySnapshot(BaseModel):
    t: float
    gamma: float
    values: GridFunction


class FreeBoundarySeries(BaseModel):
    snapshots: List[FreeBoundarySnapshot] = Field(default_factory=list)
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.snapshots], dtype=float)

    def gammas(self) -> np.ndarray:
        return np.array([s.gamma for s in self.snapshots], dtype=float)


# ---------------------------------------------------------------------------
# Experiment documents
# ---------------------------------------------------------------------------

class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


class QsdEvalParams(_Params):
    c: float = Field(gt=0)
    r: float = Field(gt=0)
    x_min: float = Field(0.0, ge=0)
    x_max: float = 10.0
    points: int = Field(201, ge=2)


class LevyAnalyzeParams(_Params):
    triplet: LevyTriplet = Field(default_factory=LevyTriplet.brownian)
    velocities: List[float] = Field(default_factory=lambda: [0.5, 1.0, 2.0])
    rates: List[float] = Field(default_factory=list)


class ChainQsdParams(_Params):
    p_up: float = Field(0.3, ge=0)
    p_down: float = Field(0.4, gt=0)
    L: int = Field(20, ge=1)
    tol: float = Field(1e-12, gt=0)


class FvSimParams(_Params):
    c: float = Field(gt=0)
    N: int = Field(1000, ge=2)
    dt: float = Field(1e-3, gt=0)
    T: float = Field(50.0, ge=0)
    triplet: LevyTriplet = Field(default_factory=LevyTriplet.brownian)
    bridge_correction: bool = config.BRIDGE_CORRECTION
    init: Literal["uniform", "minimal_qsd", "qsd", "tail"] = "uniform"
    init_r: Optional[float] = None
    init_b: Optional[float] = None
    snapshot_every: int = Field(1000, ge=1)
    burn_in: float = Field(10.0, ge=0)
    replicas: int = Field(1, ge=1)


class SelectionSimParams(_Params):
    N: int = Field(1000, ge=2)
    r: float = Field(0.5, gt=0)
    T: float = Field(200.0, gt=0)
    dt: float = Field(0.5, gt=0)
    displacement: Optional[JumpLaw] = None
    triplet: Optional[LevyTriplet] = None
    burn_in: float = Field(50.0, ge=0)
    statistic: Literal["min", "median", "max"] = "median"
    dump_positions_every: int = Field(0, ge=0)
    replicas: int = Field(1, ge=1)


class NbrwSimParams(SelectionSimParams):
    # each particle gives birth at rate one
    r: float = Field(1.0, gt=0)


class BbmMckeanParams(_Params):
    r: float = Field(1.0, ge=0)
    t: float = Field(1.0, gt=0)
    xs: List[float] = Field(default_factory=lambda: [-2.0, 0.0, 2.0])
    reps: int = Field(100000, ge=1)


class KppSolveParams(_Params):
    r: float = Field(1.0, gt=0)
    xmin: float = -100.0
    xmax: float = 300.0
    h: float = Field(0.05, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    T: float = Field(40.0, ge=0)
    scheme: Literal["explicit", "semi_implicit"] = "explicit"
    snapshot_interval: float = Field(1.0, gt=0)
    initial: Literal["heaviside", "exponential_tail"] = "heaviside"
    b: Optional[float] = Field(None, gt=0)
    level: float = Field(0.5, gt=0, lt=1)


class CondevSolveParams(_Params):
    c: float = Field(1.0, gt=0)
    L: float = Field(80.0, gt=0)
    h: float = Field(0.01, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    T: float = Field(10.0, ge=0)
    scheme: Literal["explicit", "semi_implicit"] = "explicit"
    snapshot_interval: float = Field(1.0, gt=0)
    initial: Literal["minimal_qsd", "qsd", "tail"] = "minimal_qsd"
    r: Optional[float] = Field(None, gt=0)
    b: Optional[float] = Field(None, gt=0)


class DrSolveParams(_Params):
    r: float = Field(0.5, gt=0)
    xmin: float = -5.0
    xmax: float = 100.0
    h: float = Field(0.02, gt=0)
    dt: Optional[float] = Field(None, gt=0)
    T: float = Field(30.0, ge=0)
    scheme: Literal["explicit", "semi_implicit"] = "explicit"
    snapshot_interval: float = Field(1.0, gt=0)
    initial: Literal["minimal_wave", "qsd", "bump"] = "minimal_wave"
    c: Optional[float] = Field(None, gt=0)
    burn_in: float = Field(5.0, ge=0)


class DrrwSolveParams(_Params):
    displacement: JumpLaw = Field(default_factory=lambda: JumpLaw.gaussian(std=1.0, intensity=1.0))
    xmin: float = -10.0
    xmax: float = 220.0
    h: float = Field(0.05, gt=0)
    dt: float = Field(0.01, gt=0)
    T: float = Field(100.0, ge=0)
    snapshot_interval: float = Field(1.0, gt=0)
    burn_in: float = Field(50.0, ge=0)


class CorrespondenceParams(_Params):
    c: float = Field(1.0, gt=0)
    N: int = Field(1000, ge=2)
    T: float = Field(50.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    burn_in: float = Field(10.0, ge=0)
    rate_tolerance: float = Field(0.10, gt=0)
    velocity_floor: float = Field(0.8, gt=0)
    ks_tolerance: float = Field(0.05, gt=0)
    nbbm_ks_tolerance: float = Field(0.10, gt=0)
    residual_h: float = Field(1e-3, gt=0)


COMMAND_PARAMETERS = {
    "qsd-eval": QsdEvalParams,
    "levy-analyze": LevyAnalyzeParams,
    "chain-qsd": ChainQsdParams,
    "fv-sim": FvSimParams,
    "nbbm-sim": SelectionSimParams,
    "nbrw-sim": NbrwSimParams,
    "bbm-mckean": BbmMckeanParams,
    "kpp-solve": KppSolveParams,
    "condev-solve": CondevSolveParams,
    "dr-solve": DrSolveParams,
    "drrw-solve": DrrwSolveParams,
    "correspondence-report": CorrespondenceParams,
}


class OutputPaths(_Params):
    directory: Optional[str] = None
    prefix: str = ""


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1] = 1
    command: Literal[
        "fv-sim", "nbbm-sim", "nbrw-sim", "bbm-mckean", "kpp-solve", "condev-solve",
        "dr-solve", "drrw-solve", "qsd-eval", "levy-analyze", "chain-qsd", "correspondence-report",
    ]
    parameters: Dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(config.SEED, ge=0, lt=2**64)
    outputs: OutputPaths = Field(default_factory=OutputPaths)

    @model_validator(mode="after")
    def _check_parameters(self):
        # raises ValidationError on unknown or malformed keys
        COMMAND_PARAMETERS[self.command].model_validate(self.parameters)
        return self

    def typed_parameters(self) -> BaseModel:
        return COMMAND_PARAMETERS[self.command].model_validate(self.parameters)


class ExperimentStatus(BaseModel):
    status: str  # "running", "completed", "failed", "idle"
    command: Optional[str] = None
    start_time: Optional[datetime] = None
    end_time: Optional[datetime] = None
    errors: List[str] = []


class ManifestEntry(BaseModel):
    name: str
    sha256: str
    bytes: int


class RunManifest(BaseModel):
    config: Dict[str, Any]
    artifact_version: str
    started_at: datetime
    wall_time_seconds: float
    status: str
    exit_code: int
    files: List[ManifestEntry] = []
    criteria: Dict[str, bool] = {}
