"""Regenerate the golden weight fixture used by tests/test_nn.py.

Only run this after an intentional change to initialisation, the weight
format or the forward pass; the fixture exists to catch unintentional ones.
"""

import json
from pathlib import Path

import numpy as np

from leafgrasp.nn import init_weights
from leafgrasp.nn.model import forward
from leafgrasp.nn.serialize import save_weights

OUT = Path(__file__).resolve().parent.parent / "tests" / "data"
INPUT_SEED = 7


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    w = init_weights(0)
    save_weights(w, OUT / "golden_init_seed0.bin")
    x = np.random.default_rng(INPUT_SEED).normal(size=(4, 9, 32, 32))
    probs = forward(w, x, np.float64)
    (OUT / "golden_outputs.json").write_text(
        json.dumps({"input_seed": INPUT_SEED, "probabilities": [float(p) for p in probs]}, indent=1) + "\n"
    )
    print("wrote", OUT)


if __name__ == "__main__":
    main()
