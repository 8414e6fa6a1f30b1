"""Regenerate the golden forward fixture.

Run from the repository root after any *deliberate* change to
initialization or forward semantics:

    python3 tests/fixtures/make_golden.py
"""
import os

import numpy as np

from rtda import models, tensorio
from rtda.autodiff import Tensor

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    rng = np.random.default_rng(20240817)
    x = rng.uniform(0.0, 1.0, size=(3, 1, 16, 16))
    model = models.build_model(models.ModelConfig(seed=0))
    logits = model.forward(Tensor(x)).data
    tensorio.save_tensor(os.path.join(HERE, "forward_input.rtns"), x)
    tensorio.save_tensor(os.path.join(HERE, "forward_logits.rtns"), logits)
    print("wrote fixture; logits:")
    print(logits)


if __name__ == "__main__":
    main()
