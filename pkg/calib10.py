import time

from fedmt.config import config_from_dict
from fedmt.runner import run_seed

METHODS = ("model-fed", "adapter-fed", "adapter-local", "adapter-random",
           "adapter-gradients", "adapter-families", "centralized-model",
           "centralized-adapter")
WARM = {"sentences_per_pair": 256, "epochs": 6}

for local_epochs in (1, 2):
    fed = {"learning_rate": 2e-3, "full_model_learning_rate": 1e-3,
           "grad_accumulation": 1, "local_epochs": local_epochs}
    print(f"=== warm 6, adapters lr 2e-3, full-model lr 1e-3, accum 1, "
          f"local_epochs {local_epochs} ===", flush=True)
    ok = 0
    for method in METHODS:
        cfg = config_from_dict({
            "mode": "m2en", "method": method, "seeds": [1],
            "warmup": WARM, "evaluate_test_bleu": False, "fed": dict(fed),
        })
        t0 = time.time()
        res = run_seed(cfg, 1)
        red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
        ok += int(red >= 50)
        print(f"{method:22s} {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> "
              f"{res.mean_best_dev:.3f}  ({red:+.1f}%) {'PASS' if red >= 50 else 'FAIL'}",
              flush=True)
    print(f"--- {ok}/8 pass\n", flush=True)
