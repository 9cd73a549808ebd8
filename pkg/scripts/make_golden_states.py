"""Regenerate the committed golden encoder states (mini config, seed 7)."""
import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from hateclf.encoder import EncoderConfig, build_mini

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"
TOY_IDS = [2, 10, 11, 12, 13, 3]


def golden_input():
    ids = torch.zeros(1, 64, dtype=torch.long)
    ids[0, : len(TOY_IDS)] = torch.tensor(TOY_IDS)
    mask = (ids != 0).long()
    return ids, mask


def main():
    model = build_mini(EncoderConfig(num_layers=2, hidden_size=16, num_heads=2, vocab_size=64, seed=7), torch.float64)
    ids, mask = golden_input()
    with torch.no_grad():
        states = model(ids, mask)[0].numpy()
    path = FIXTURES / "mini_seed7_states.npy"
    np.save(path, states)
    meta = {
        "config": {"num_layers": 2, "hidden_size": 16, "num_heads": 2, "vocab_size": 64, "seed": 7},
        "ids": TOY_IDS,
        "sum": float(states.sum()),
        "abs_sum": float(np.abs(states).sum()),
        "sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
    }
    (FIXTURES / "mini_seed7_states.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(meta)


if __name__ == "__main__":
    main()
