import time

from fedmt.config import config_from_dict
from fedmt.runner import run_seed

WARM = {"sentences_per_pair": 256, "epochs": 10}


def probe(method, fed):
    cfg = config_from_dict({
        "mode": "m2en", "method": method, "seeds": [1],
        "warmup": WARM, "evaluate_test_bleu": False, "fed": dict(fed),
    })
    t0 = time.time()
    res = run_seed(cfg, 1)
    red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
    print(f"{method:22s} lr={fed.get('learning_rate')} accum={fed.get('grad_accumulation')}"
          f"  {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> "
          f"{res.mean_best_dev:.3f}  ({red:+.1f}%) {'PASS' if red >= 50 else 'FAIL'}",
          flush=True)


BASE = {"full_model_learning_rate": 1e-3, "grad_accumulation": 2}

probe("centralized-model", dict(BASE, learning_rate=2e-3))
probe("centralized-model", dict(BASE, learning_rate=2e-3, grad_accumulation=1))
probe("adapter-fed", dict(BASE, learning_rate=2.5e-3))
probe("adapter-fed", dict(BASE, learning_rate=3e-3))
probe("centralized-adapter", dict(BASE, learning_rate=3e-3))
probe("adapter-random", dict(BASE, learning_rate=3e-3))
probe("model-fed", dict(BASE, learning_rate=3e-3))
probe("adapter-local", dict(BASE, learning_rate=3e-3))
probe("adapter-gradients", dict(BASE, learning_rate=3e-3))
probe("adapter-families", dict(BASE, learning_rate=3e-3))
