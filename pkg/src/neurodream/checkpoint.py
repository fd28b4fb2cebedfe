"""Readout checkpoints: npz archives holding weights and optimizer state."""

from __future__ import annotations

import json

import numpy as np

from .policy import PolicyReadout
from .worldmodel import ModelReadout

_FORMAT = "neurodream-checkpoint-v1"


def save_checkpoint(path, policy: PolicyReadout, model: ModelReadout | None = None, meta: dict | None = None) -> None:
    """Write policy (and optionally model) readouts with enough state to resume."""
    arrays = {
        "format": np.array(_FORMAT),
        "meta": np.array(json.dumps(meta or {})),
        "policy_weights": policy.weights,
        "policy_m": policy.m,
        "policy_v": policy.v,
        "policy_step_count": np.array(policy.step_count, dtype=np.int64),
        "policy_learning_rate": np.array(policy.learning_rate),
    }
    if model is not None:
        arrays["model_state_weights"] = model.state_weights
        arrays["model_reward_weights"] = model.reward_weights
        arrays["model_eta_state"] = np.array(model.eta_state)
        arrays["model_eta_reward"] = np.array(model.eta_reward)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[PolicyReadout, ModelReadout | None, dict]:
    """Rebuild readouts from a checkpoint; returns (policy, model or None, meta)."""
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != _FORMAT:
            raise ValueError(f"unrecognized checkpoint format {data['format']!r}")
        policy = PolicyReadout(data["policy_weights"], float(data["policy_learning_rate"]))
        policy.m = data["policy_m"].copy()
        policy.v = data["policy_v"].copy()
        policy.step_count = int(data["policy_step_count"])
        model = None
        if "model_state_weights" in data:
            model = ModelReadout(
                data["model_state_weights"],
                data["model_reward_weights"],
                float(data["model_eta_state"]),
                float(data["model_eta_reward"]),
            )
        meta = json.loads(str(data["meta"]))
    return policy, model, meta
