import sys
import time

from fedmt.config import config_from_dict
from fedmt.runner import run_seed


def probe(label, overrides):
    base = {"mode": "m2en", "seeds": [1], "evaluate_test_bleu": False}
    base.update(overrides)
    cfg = config_from_dict(base)
    t0 = time.time()
    res = run_seed(cfg, 1)
    red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
    print(
        f"{label:44s} {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> {res.mean_best_dev:.3f}  ({red:+.1f}%)",
        flush=True,
    )
    return res


probe("centralized-model (warm 2ep)", {"method": "centralized-model"})
probe("centralized-model (warm 8ep)", {"method": "centralized-model", "warmup": {"epochs": 8}})
probe("adapter-local (warm 8ep)", {"method": "adapter-local", "warmup": {"epochs": 8}})
probe("adapter-local (warm 8ep, lr 3e-3)",
      {"method": "adapter-local", "warmup": {"epochs": 8}, "fed": {"learning_rate": 3e-3}})
probe("adapter-local (warm 8ep, lr 3e-3, accum 1)",
      {"method": "adapter-local", "warmup": {"epochs": 8},
       "fed": {"learning_rate": 3e-3, "grad_accumulation": 1}})
