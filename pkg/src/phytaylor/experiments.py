"""Desk-scale pendulum and vehicle experiments.

Both compare models of identical training budget and differ only in how much
knowledge is embedded.  Results are plain dicts so they can go straight into a
run report.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .datagen import (
    PENDULUM_KNOWLEDGE,
    PendulumParams,
    VehicleParams,
    pairs_dataset,
    pendulum_knowledge,
    random_vehicle_starts,
    simulate_pendulums,
    simulate_vehicle,
    split_tags,
    vehicle_knowledge,
)
from .editing import LayerPlan, PhyTaylorModel, build_model
from .knowledge import KnowledgeSpec
from .monomial import basis_len
from .train import TrainConfig, evaluate_loss, rollout_error, train_model

PENDULUM_MODELS = {
    "phy-taylor-1": PENDULUM_KNOWLEDGE,
    "phy-taylor-2": ("law", "topology"),
    "fdnn": (),
}


@dataclass(frozen=True)
class PendulumExperiment:
    n_traj: int = 20
    steps: int = 50
    velocity: float = 1.0
    ood_traj: int = 10
    ood_range: tuple[float, float] = (-1.5, -1.0)
    horizon: int = 100
    order: int = 2
    learning_rate: float = 2e-3
    batch_size: int = 20
    epochs: int = 200
    squared: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def pendulum_model(name: str, cfg: PendulumExperiment, period: float, seed: int) -> PhyTaylorModel:
    if name == "fdnn":
        # dense tanh layer as wide as the order-r augmentation, then linear
        plan = [LayerPlan(basis_len(6, cfg.order), 1, "tanh"), LayerPlan(6, 1, "identity")]
        return build_model(KnowledgeSpec.unknown(6, 6, 1), plan, seed=seed)
    spec = pendulum_knowledge(cfg.order, period, PENDULUM_MODELS[name])
    return build_model(spec, [LayerPlan(6, cfg.order, "identity")], seed=seed)


def run_pendulum(cfg: PendulumExperiment = PendulumExperiment(), seed: int = 0,
                 params: PendulumParams | None = None) -> dict[str, float]:
    """OOD rollout error of each model in PENDULUM_MODELS for one seed."""
    params = params or PendulumParams()
    train_p = PendulumParams(**{**asdict(params), "steps": cfg.steps})
    test_p = PendulumParams(**{**asdict(params), "steps": cfg.horizon})
    v = (-cfg.velocity, cfg.velocity)
    data = pairs_dataset(simulate_pendulums(train_p, cfg.n_traj, (-1.0, 1.0), seed, v))
    ood = simulate_pendulums(test_p, cfg.ood_traj, cfg.ood_range, 100 + seed, v)
    tc = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                     epochs=cfg.epochs, seed=seed)
    out = {}
    for name in PENDULUM_MODELS:
        model = pendulum_model(name, cfg, params.period, seed)
        train_model(model, data, tc)
        out[name] = rollout_error(model, ood, cfg.horizon, squared=cfg.squared)
    return out


@dataclass(frozen=True)
class VehicleExperiment:
    n_traj: int = 30
    steps: int = 40
    noise_std: float = 0.01
    hidden: int = 7
    order: int = 2
    activation: str = "tanh"
    learning_rate: float = 1e-3
    batch_size: int = 200
    epochs: int = 500

    def to_dict(self) -> dict:
        return asdict(self)


def run_vehicle(cfg: VehicleExperiment = VehicleExperiment(), seed: int = 0) -> dict[str, list]:
    """Validation-loss curves of the edited model and its unedited twin."""
    params = VehicleParams(noise_std=cfg.noise_std)
    traj = simulate_vehicle(params, random_vehicle_starts(cfg.n_traj, seed), cfg.steps, seed)
    data = pairs_dataset(traj, split_tags(cfg.n_traj, np.random.default_rng(seed)))
    plan = [LayerPlan(cfg.hidden, cfg.order, cfg.activation),
            LayerPlan(6, cfg.order, cfg.activation)]
    tc = TrainConfig(learning_rate=cfg.learning_rate, batch_size=cfg.batch_size,
                     epochs=cfg.epochs, seed=seed)
    specs = {"edited": vehicle_knowledge(cfg.order, params.T),
             "unedited": KnowledgeSpec.unknown(6, 6, cfg.order)}
    out = {}
    for name, spec in specs.items():
        model = build_model(spec, plan, seed=seed)
        history = train_model(model, data, tc)
        out[name] = list(history.val_loss)
        out[name + "_test"] = evaluate_loss(model, data.subset("test"))
    return out
