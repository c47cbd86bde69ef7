"""Synthetic data: three coupled pendulums, a discrete vehicle model, and a
small ground truth for the velocity/friction example."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidArgument, NonFiniteValue
from .knowledge import KnowledgeSpec, example1_spec
from .monomial import build_basis, evaluate
from .train import Dataset

BLOW_UP = 1e6
PENDULUM_STATE = ("theta1", "theta2", "theta3", "v1", "v2", "v3")
VEHICLE_STATE = ("p", "y", "psi", "v_p", "v_y", "v_psi")


def split_tags(n_groups: int, rng: np.random.Generator) -> np.ndarray:
    """Shuffle groups and assign them train/val/test in 4/1/1 proportion."""
    order = rng.permutation(n_groups)
    n_val = max(1, round(n_groups / 6)) if n_groups >= 3 else 0
    n_test = n_val
    tags = np.empty(n_groups, dtype="<U5")
    tags[order[: n_groups - n_val - n_test]] = "train"
    tags[order[n_groups - n_val - n_test: n_groups - n_test]] = "val"
    tags[order[n_groups - n_test:]] = "test"
    return tags


def pairs_dataset(trajectories: np.ndarray, tags: np.ndarray | None = None) -> Dataset:
    """(x(k), x(k+1)) pairs from an (N, T+1, d) stack, tagged per trajectory."""
    N, steps, d = trajectories.shape
    # copies: inputs and targets must not alias each other or the source
    x = trajectories[:, :-1].reshape(-1, d).copy()
    y = trajectories[:, 1:].reshape(-1, d).copy()
    traj = np.repeat(np.arange(N), steps - 1)
    split = None if tags is None else np.repeat(tags, steps - 1)
    return Dataset(x, y, split, traj)


def dataset_trajectories(data: Dataset, split: str | None = None) -> np.ndarray:
    """Inverse of pairs_dataset: an (N, T+1, d) stack, cut to the shortest trajectory.

    Pairs of one trajectory must appear in time order, as pairs_dataset writes them.
    """
    if data.input_dim != data.target_dim:
        raise DimensionMismatch("trajectories need equal input and target dims")
    if split is not None:
        data = data.subset(split)
    ids = list(dict.fromkeys(data.traj.tolist()))
    if not ids:
        raise InvalidArgument(f"no rows in split {split!r}")
    trajs = []
    for t in ids:
        keep = data.traj == t
        x, y = data.inputs[keep], data.targets[keep]
        if not np.array_equal(x[1:], y[:-1]):
            raise InvalidArgument(f"trajectory {t} is not a chain of consecutive pairs")
        trajs.append(np.vstack([x, y[-1:]]))
    length = min(len(t) for t in trajs)
    return np.stack([t[:length] for t in trajs])


def _check_blow_up(states: np.ndarray, step: int):
    if not np.all(np.isfinite(states)) or np.max(np.abs(states)) > BLOW_UP:
        raise NonFiniteValue(f"simulation blew up at step {step}")


# ------------------------------------------------------------- pendulums

PENDULUM_ADJACENCY = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)


@dataclass(frozen=True)
class PendulumParams:
    mass: float = 1.0
    length: float = 1.0
    gravity: float = 9.81
    spring: float = 1.0
    dt: float = 1e-3
    period: float = 0.01
    steps: int = 50

    def __post_init__(self):
        if min(self.mass, self.length, self.gravity, self.dt, self.period) <= 0 or self.spring < 0:
            raise InvalidArgument(f"physical constants and step sizes must be positive: {self}")
        ratio = self.period / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidArgument("period must be an integer multiple of dt")
        if self.steps < 1:
            raise InvalidArgument("steps must be >= 1")

    @property
    def substeps(self) -> int:
        return int(round(self.period / self.dt))


def pendulum_rhs(state: np.ndarray, p: PendulumParams) -> np.ndarray:
    """theta_i'' = -(g/l) sin theta_i + (k/m) sum_j a_ij (theta_j - theta_i)."""
    theta, v = state[..., :3], state[..., 3:]
    coupling = theta @ PENDULUM_ADJACENCY - theta * PENDULUM_ADJACENCY.sum(axis=1)
    acc = -(p.gravity / p.length) * np.sin(theta) + (p.spring / p.mass) * coupling
    return np.concatenate([v, acc], axis=-1)


def rk4_step(f, state: np.ndarray, h: float) -> np.ndarray:
    k1 = f(state)
    k2 = f(state + 0.5 * h * k1)
    k3 = f(state + 0.5 * h * k2)
    k4 = f(state + h * k3)
    return state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def pendulum_energy(state: np.ndarray, p: PendulumParams) -> np.ndarray:
    """Conserved quantity of pendulum_rhs (per unit inertia)."""
    theta, v = state[..., :3], state[..., 3:]
    kinetic = 0.5 * np.sum(v**2, axis=-1)
    gravity = (p.gravity / p.length) * np.sum(1.0 - np.cos(theta), axis=-1)
    diffs = theta[..., :, None] - theta[..., None, :]
    spring = 0.25 * (p.spring / p.mass) * np.sum(PENDULUM_ADJACENCY * diffs**2, axis=(-2, -1))
    return kinetic + gravity + spring


def integrate_pendulums(x0: np.ndarray, p: PendulumParams) -> np.ndarray:
    """RK4 at ``dt``, sampled every ``period``; returns (N, steps + 1, 6)."""
    state = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    out = [state.copy()]
    f = lambda s: pendulum_rhs(s, p)  # noqa: E731
    for k in range(1, p.steps + 1):
        for _ in range(p.substeps):
            state = rk4_step(f, state, p.dt)
        _check_blow_up(state, k)
        out.append(state.copy())
    return np.stack(out, axis=1)


def simulate_pendulums(
    params: PendulumParams,
    n_traj: int,
    theta_range: tuple[float, float] = (-1.0, 1.0),
    seed: int = 0,
    velocity_range: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Trajectories from angles drawn uniformly in ``theta_range``; initial
    velocities are drawn from ``velocity_range`` (at rest by default)."""
    rng = np.random.default_rng(seed)
    theta0 = rng.uniform(*theta_range, size=(n_traj, 3))
    v0 = rng.uniform(*velocity_range, size=(n_traj, 3))
    x0 = np.concatenate([theta0, v0], axis=1)
    return integrate_pendulums(x0, params)


PENDULUM_KNOWLEDGE = ("law", "period", "topology", "force")


def pendulum_knowledge(order: int, period: float, flags=PENDULUM_KNOWLEDGE) -> KnowledgeSpec:
    """Knowledge spec for the next-state map of the pendulum state.

    law       theta_i(k+1) carries theta_i(k) with coefficient 1
    period    the velocity monomials of theta_i(k+1): T on v_i, 0 otherwise
    topology  no monomial that involves a non-adjacent pendulum
    force     v_i(k+1) carries v_i(k) with coefficient 1 and no other velocity monomial
    """
    unknown = set(flags) - set(PENDULUM_KNOWLEDGE)
    if unknown:
        raise InvalidArgument(f"unknown knowledge flags {sorted(unknown)}")
    basis = build_basis(6, order)
    E = basis.exponents
    L = len(basis)
    known = np.zeros((6, L), bool)
    values = np.zeros((6, L))
    has_velocity = E[:, 3:].sum(axis=1) > 0
    neighbours = PENDULUM_ADJACENCY + np.eye(3)

    def put(row, cols, value):
        known[row, cols] = True
        values[row, cols] = value

    for i in range(3):
        theta_row, v_row = i, 3 + i
        if "topology" in flags:
            foreign = (E[:, :3] + E[:, 3:])[:, neighbours[i] == 0].sum(axis=1) > 0
            put(theta_row, foreign, 0.0)
            put(v_row, foreign, 0.0)
        if "period" in flags:
            put(theta_row, has_velocity, 0.0)
            put(theta_row, 1 + 3 + i, period)
        if "law" in flags:
            put(theta_row, 1 + i, 1.0)
        if "force" in flags:
            put(v_row, has_velocity, 0.0)
            put(v_row, 1 + 3 + i, 1.0)
    values[~known] = np.nan
    return KnowledgeSpec(6, basis, known, values)


# --------------------------------------------------------------- vehicle

@dataclass(frozen=True)
class VehicleParams:
    T: float = 0.1
    # unknown entries of the v_p row: p and v_p
    vp_row: tuple[float, float] = (-0.05, 0.95)
    # full rows for v_y and v_psi
    vy_row: tuple[float, ...] = (0.0, -0.05, 0.01, 0.02, 0.95, 0.01)
    vpsi_row: tuple[float, ...] = (0.0, 0.01, -0.05, 0.0, 0.02, 0.95)
    # mild nonlinearity: v_y += c * v_p * v_psi, v_psi -= c * v_p * v_y
    coupling: float = 0.02
    noise_std: float = 0.0

    def __post_init__(self):
        if self.T <= 0 or self.noise_std < 0:
            raise InvalidArgument("T must be > 0 and noise_std >= 0")
        if len(self.vy_row) != 6 or len(self.vpsi_row) != 6 or len(self.vp_row) != 2:
            raise InvalidArgument("vehicle rows have the wrong length")
        rho = float(np.max(np.abs(np.linalg.eigvals(self.matrix()))))
        if rho > 1.05:
            raise InvalidArgument(f"spectral radius {rho:.4f} exceeds 1.05")

    def matrix(self) -> np.ndarray:
        T = self.T
        A = np.zeros((6, 6))
        A[:3, :3] = np.eye(3)
        A[:3, 3:] = T * np.eye(3)
        A[3, 0], A[3, 3] = self.vp_row
        A[4] = self.vy_row
        A[5] = self.vpsi_row
        return A

    def to_dict(self) -> dict:
        return asdict(self)


def vehicle_step(x: np.ndarray, p: VehicleParams) -> np.ndarray:
    nxt = x @ p.matrix().T
    if p.coupling:
        nxt[..., 4] += p.coupling * x[..., 3] * x[..., 5]
        nxt[..., 5] -= p.coupling * x[..., 3] * x[..., 4]
    return nxt


def simulate_vehicle(params: VehicleParams, x0, steps: int, seed: int = 0) -> np.ndarray:
    """Noisy observations of the vehicle recursion, shape (N, steps + 1, 6)."""
    rng = np.random.default_rng(seed)
    state = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    if state.shape[-1] != 6:
        raise InvalidArgument(f"vehicle state has 6 entries, got {state.shape[-1]}")
    out = [state.copy()]
    for k in range(1, steps + 1):
        state = vehicle_step(state, params)
        _check_blow_up(state, k)
        out.append(state.copy())
    clean = np.stack(out, axis=1)
    if params.noise_std:
        clean = clean + rng.normal(0.0, params.noise_std, size=clean.shape)
    return clean


def random_vehicle_starts(n: int, seed: int = 0, scale: float = 1.0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(-scale, scale, size=(n, 6))


def vehicle_knowledge(order: int, T: float = 0.1) -> KnowledgeSpec:
    """Known entries of the discrete vehicle model over m(x, order).

    Position rows are exact (x_i + T v_i, every other monomial 0).  The v_p row
    may use p and v_p only, so every monomial touching y, psi, v_y or v_psi is
    a known zero.  The last two rows are free.
    """
    basis = build_basis(6, order)
    E = basis.exponents
    L = len(basis)
    known = np.zeros((6, L), bool)
    values = np.full((6, L), np.nan)
    for i in range(3):
        known[i] = True
        values[i] = 0.0
        values[i, 1 + i] = 1.0
        values[i, 1 + 3 + i] = T
    other = E[:, [1, 2, 4, 5]].sum(axis=1) > 0
    known[3, other] = True
    values[3, other] = 0.0
    return KnowledgeSpec(6, basis, known, values)


# ---------------------------------------------------------- example 1

EXAMPLE1_TRUTH = np.array([
    [0.0, 1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.0, 0.95, 0.1, 0.0, 0.0, 0.0, -0.02, 0.01, 0.0],
    [0.5, 0.0, -0.3, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0, 0.0],
])


def example1_dataset(n: int, seed: int = 0, noise_std: float = 0.0) -> tuple[Dataset, KnowledgeSpec]:
    """Samples y = A m(x, 2) for x = [p, v, m] in [-1, 1]^3.

    A respects every known zero of the example's knowledge spec.
    """
    spec = example1_spec()
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, 3))
    y = evaluate(spec.basis, x) @ EXAMPLE1_TRUTH.T
    if noise_std:
        y = y + rng.normal(0.0, noise_std, size=y.shape)
    groups = np.arange(n) % 6
    tags = split_tags(6, rng)[groups]
    return Dataset(x, y, tags, groups), spec
