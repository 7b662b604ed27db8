"""Synthetic operating profiles from a four-node lumped parameter thermal network.

Nodes are the stator winding, the two bearings and the motor shell. Heat flows
along conductances between nodes and to ambient; copper loss heats the winding
and mechanical loss heats the bearings. The shell node is reported as the
reference temperature. This is a fixed ground truth for tests and demos, not a
calibrated motor model.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .data_model import DYNAMICS, Dataset, Profile, validate_profile
from .errors import ConfigError, DataError, NumericError

NODES = ("winding", "bearing_DE", "bearing_NDE", "shell")

TORQUE_RATED = 97.0  # N*m
SPEED_RATED = 1478.0  # rpm
CURRENT_RATED = 30.6  # A at rated torque

DWELL_RANGES = {"slow": (600, 1800), "medium": (120, 600), "fast": (10, 120)}
MAX_SUBSTEPS = 10_000


@dataclass(frozen=True)
class LptnParams:
    capacitance: dict  # node -> J/degC
    conductances: tuple  # (node_a, node_b, W/degC)
    ambient_conductance: dict  # node -> W/degC
    k_cu: float  # W/A^2
    k_mech: float  # W/rpm^2, split evenly over both bearings
    T_amb: float = 25.0
    sigma_noise: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "conductances", tuple(tuple(e) for e in self.conductances))

    @classmethod
    def from_dict(cls, d: dict) -> "LptnParams":
        try:
            return cls(
                capacitance=dict(d["capacitance"]),
                conductances=tuple((a, b, float(g)) for a, b, g in d["conductances"]),
                ambient_conductance=dict(d.get("ambient_conductance", {})),
                k_cu=float(d["k_cu"]),
                k_mech=float(d["k_mech"]),
                T_amb=float(d.get("T_amb", 25.0)),
                sigma_noise=float(d.get("sigma_noise", 0.2)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"bad LPTN parameters: {e}") from None

    def to_dict(self) -> dict:
        return {
            "capacitance": dict(self.capacitance),
            "conductances": [list(e) for e in self.conductances],
            "ambient_conductance": dict(self.ambient_conductance),
            "k_cu": self.k_cu,
            "k_mech": self.k_mech,
            "T_amb": self.T_amb,
            "sigma_noise": self.sigma_noise,
        }

    def with_noise(self, sigma: float) -> "LptnParams":
        d = self.to_dict()
        d["sigma_noise"] = sigma
        return LptnParams.from_dict(d)

    def matrices(self):
        """Return ``(C, A, g_amb)`` so that ``C dT/dt = -A T + g_amb*T_amb + P``."""
        n = len(NODES)
        C = np.array([float(self.capacitance[k]) for k in NODES])
        A = np.zeros((n, n))
        for a, b, g in self.conductances:
            i, j = NODES.index(a), NODES.index(b)
            A[i, j] -= g
            A[j, i] -= g
            A[i, i] += g
            A[j, j] += g
        g_amb = np.array([float(self.ambient_conductance.get(k, 0.0)) for k in NODES])
        A[np.diag_indices(n)] += g_amb
        return C, A, g_amb

    def validate(self) -> list[str]:
        out = []
        for k in NODES:
            if k not in self.capacitance:
                out.append(f"capacitance missing for node {k}")
            elif not float(self.capacitance[k]) > 0:
                out.append(f"capacitance of {k} must be > 0")
        for a, b, g in self.conductances:
            if a not in NODES or b not in NODES or a == b:
                out.append(f"bad conductance edge {a}-{b}")
            elif not g >= 0:
                out.append(f"conductance {a}-{b} must be >= 0")
        for k, g in self.ambient_conductance.items():
            if k not in NODES:
                out.append(f"unknown node {k} in ambient_conductance")
            elif not g >= 0:
                out.append(f"ambient conductance of {k} must be >= 0")
        if self.k_cu < 0 or self.k_mech < 0 or self.sigma_noise < 0:
            out.append("k_cu, k_mech and sigma_noise must be >= 0")
        if out:
            return out
        # every node must drain to ambient through positive conductances
        reached = {k for k, g in self.ambient_conductance.items() if g > 0}
        grew = True
        while grew:
            grew = False
            for a, b, g in self.conductances:
                if g > 0 and (a in reached) != (b in reached):
                    reached |= {a, b}
                    grew = True
        for k in NODES:
            if k not in reached:
                out.append(f"node {k} has no positive-conductance path to ambient")
        return out


def default_params() -> LptnParams:
    text = resources.files("motortemp").joinpath("configs/lptn_default.json").read_text(encoding="utf-8")
    return LptnParams.from_dict(json.loads(text))


def load_params(path) -> LptnParams:
    try:
        return LptnParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except FileNotFoundError:
        raise ConfigError(f"LPTN config not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None


@dataclass(frozen=True, eq=False)
class CommandSeries:
    torque: np.ndarray  # N*m per second
    speed: np.ndarray  # rpm per second
    dynamics_class: str
    dwells: tuple = field(default=())

    def __len__(self):
        return len(self.torque)

    @classmethod
    def constant(cls, torque: float, speed: float, duration: int, dynamics_class: str = "slow") -> "CommandSeries":
        return cls(np.full(duration, float(torque)), np.full(duration, float(speed)), dynamics_class, (duration,))


def generate_commands(dynamics_class: str, duration: int, seed: int) -> CommandSeries:
    """Piecewise-constant torque/speed setpoints with class-dependent dwell times.

    Every dwell falls inside the class range unless ``duration`` itself is
    shorter than the class minimum.
    """
    if dynamics_class not in DWELL_RANGES:
        raise DataError(f"unknown dynamics class {dynamics_class!r}")
    duration = int(duration)
    if duration < 60:
        raise DataError(f"duration {duration} s too short (minimum 60 s)")
    lo, hi = DWELL_RANGES[dynamics_class]
    rng = np.random.default_rng(seed)
    torque = np.empty(duration)
    speed = np.empty(duration)
    dwells = []
    pos = 0
    while pos < duration:
        remaining = duration - pos
        if remaining <= hi:
            d = remaining
        else:
            d = int(rng.integers(lo, min(hi, remaining - lo) + 1))
        if rng.random() < 0.1:
            tq, sp = 0.0, 0.0  # standstill, lets the machine cool
        else:
            tq = float(rng.uniform(0.0, TORQUE_RATED))
            sp = float(rng.uniform(0.0, SPEED_RATED))
        torque[pos : pos + d] = tq
        speed[pos : pos + d] = sp
        dwells.append(d)
        pos += d
    return CommandSeries(torque, speed, dynamics_class, tuple(dwells))


def current_from_torque(torque) -> np.ndarray:
    return CURRENT_RATED * np.abs(np.asarray(torque, dtype=float)) / TORQUE_RATED


def node_losses(p: LptnParams, current, speed) -> np.ndarray:
    """Per-node heat input (W), shape ``(n, 4)``."""
    current = np.asarray(current, dtype=float)
    speed = np.asarray(speed, dtype=float)
    P = np.zeros((current.size, len(NODES)))
    P[:, 0] = p.k_cu * current**2
    P[:, 1] = 0.5 * p.k_mech * speed**2
    P[:, 2] = 0.5 * p.k_mech * speed**2
    return P


def substep_count(p: LptnParams, dt: float = 1.0) -> int:
    """Explicit-Euler substeps per ``dt`` so the substep stays below ``2 min(C) / max|A|_row``."""
    C, A, _ = p.matrices()
    max_row = np.abs(A).sum(axis=1).max()
    if max_row == 0:
        return 1
    bound = 2.0 * C.min() / max_row
    n = int(math.floor(dt / bound)) + 1
    if n > MAX_SUBSTEPS:
        raise NumericError(
            f"unstable LPTN parameterization: needs substep < {bound:.3g} s, "
            f"more than {MAX_SUBSTEPS} substeps per second"
        )
    return n


def _one_second_map(p: LptnParams):
    """Affine map for one second of constant input: ``T' = M T + S b``."""
    C, A, _ = p.matrices()
    n_sub = substep_count(p)
    h = 1.0 / n_sub
    E = np.eye(len(NODES)) - h * (A / C[:, None])
    M = np.eye(len(NODES))
    acc = np.zeros_like(E)
    for _ in range(n_sub):
        acc = acc + M
        M = E @ M
    S = acc * (h / C)[None, :]
    return M, S


def simulate_lptn(
    cmd: CommandSeries,
    p: LptnParams,
    seed: int,
    profile_id: str = "sim",
    T0=None,
) -> Profile:
    """Integrate the network over ``cmd`` and return a noisy 1 Hz profile."""
    problems = p.validate()
    if problems:
        raise ConfigError("invalid LPTN parameters: " + "; ".join(problems))
    M, S = _one_second_map(p)
    _, _, g_amb = p.matrices()
    current = current_from_torque(cmd.torque)
    speed = np.asarray(cmd.speed, dtype=float)
    b = node_losses(p, current, speed) + g_amb * p.T_amb
    drive = b @ S.T
    n = len(cmd)
    temps = np.empty((n, len(NODES)))
    T = np.full(len(NODES), p.T_amb) if T0 is None else np.asarray(T0, dtype=float).copy()
    for k in range(n):
        temps[k] = T
        T = M @ T + drive[k]
    if not np.all(np.isfinite(temps)):
        raise NumericError("LPTN integration produced non-finite temperatures")
    rng = np.random.default_rng(seed)
    if p.sigma_noise > 0:
        temps = temps + rng.normal(0.0, p.sigma_noise, size=temps.shape)
    prof = Profile.from_columns(
        profile_id,
        cmd.dynamics_class,
        t=np.arange(n),
        n_m=speed,
        I_m=current,
        T_ref=temps[:, 3],
        T_W=temps[:, 0],
        T_DE=temps[:, 1],
        T_NDE=temps[:, 2],
    )
    problems = validate_profile(prof)
    if problems:
        raise NumericError(f"simulated profile failed validation: {problems[0]}")
    return prof


def steady_state(p: LptnParams, torque: float, speed: float) -> np.ndarray:
    """Equilibrium node temperatures for constant operation, ordered as ``NODES``."""
    _, A, g_amb = p.matrices()
    P = node_losses(p, current_from_torque([torque]), [speed])[0]
    return np.linalg.solve(A, P + g_amb * p.T_amb)


def generate_dataset(n_profiles: int, hours_total: float, params: LptnParams, seed: int) -> Dataset:
    """Evenly split ``n_profiles`` over the dynamics classes and simulate each one."""
    if n_profiles < 3:
        raise DataError(f"need at least 3 profiles (one per dynamics class), got {n_profiles}")
    total = int(round(hours_total * 3600))
    base, extra = divmod(total, n_profiles)
    if base < 60:
        raise DataError(f"{hours_total} h over {n_profiles} profiles leaves under 60 s per profile")
    children = np.random.SeedSequence(seed).spawn(n_profiles)
    profiles = []
    for i, child in enumerate(children):
        cls = DYNAMICS[i % len(DYNAMICS)]
        duration = base + (1 if i < extra else 0)
        cmd_seed, noise_seed = (int(s) for s in child.generate_state(2))
        cmd = generate_commands(cls, duration, cmd_seed)
        profiles.append(simulate_lptn(cmd, params, noise_seed, profile_id=f"p{i:02d}_{cls}"))
    return Dataset(tuple(profiles), {"kind": "synthetic", "seed": seed, "hours_total": hours_total})
