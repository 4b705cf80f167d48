"""Constrained policy training by sampled weight-space projection."""

import json

from ._scpo import SAFETY_TOLERANCE, Policy, project, solve_dare
from ._scpo import reachable as _reachable
from ._scpo import run as _run


def _json(config):
    return config if isinstance(config, str) else json.dumps(config)


def run(config, out_dir):
    """Train from a config dict or JSON string; returns the epoch log."""
    return _run(_json(config), str(out_dir))


def reachable(config, policy, out_dir):
    """Reachable-set masks for a checkpoint; returns cell counts."""
    return _reachable(_json(config), str(policy), str(out_dir))


__all__ = ["SAFETY_TOLERANCE", "Policy", "project", "reachable", "run", "solve_dare"]
