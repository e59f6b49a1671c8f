"""Policy checkpoints in the JSON policy format."""
from __future__ import annotations

import json
from pathlib import Path

from ..envs import policy_from_dict
from ..io import atomic_write_text


def save_policy(path, policy, meta: dict | None = None) -> None:
    doc = policy.to_dict()
    if meta:
        doc["meta"] = meta
    atomic_write_text(Path(path), json.dumps(doc))


def load_policy(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    doc.pop("meta", None)
    return policy_from_dict(doc)
