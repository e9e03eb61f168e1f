import time

from fedmt.config import config_from_dict
from fedmt.runner import run_seed

WARM = {"sentences_per_pair": 256, "epochs": 4}
METHODS = ("model-fed", "adapter-fed", "adapter-local", "adapter-random",
           "adapter-gradients", "adapter-families", "centralized-model",
           "centralized-adapter")

print("=== criterion 6a dry run: all methods, seed 1, default preset ===", flush=True)
ratios = {}
for method in METHODS:
    cfg = config_from_dict({
        "mode": "m2en", "method": method, "seeds": [1],
        "warmup": WARM, "evaluate_test_bleu": False,
    })
    t0 = time.time()
    res = run_seed(cfg, 1)
    red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
    ratios[method] = (res.trainable_params, res.total_params)
    print(f"{method:22s} {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> "
          f"{res.mean_best_dev:.3f}  ({red:+.1f}%)", flush=True)

adapter_payload = ratios["adapter-fed"][0]
model_payload = ratios["model-fed"][0]
print(f"\n=== criterion 6c: payload ratio {adapter_payload}/{model_payload} = "
      f"{100*adapter_payload/model_payload:.3f}% ===", flush=True)

print("\n=== criterion 6b dry run: families vs fed, cross-family 0, seeds 1-3 ===", flush=True)
wins = 0
for seed in (1, 2, 3):
    devs = {}
    for method in ("adapter-fed", "adapter-families"):
        cfg = config_from_dict({
            "mode": "m2en", "method": method, "seeds": [seed],
            "warmup": WARM, "evaluate_test_bleu": False,
            "data": {"cross_family_overlap": 0.0},
        })
        t0 = time.time()
        res = run_seed(cfg, seed)
        devs[method] = res.mean_best_dev
        print(f"seed {seed} {method:18s} {time.time()-t0:5.1f}s  best dev {res.mean_best_dev:.4f}",
              flush=True)
    win = devs["adapter-families"] < devs["adapter-fed"]
    wins += int(win)
    print(f"seed {seed}: families {'<' if win else '>='} fed", flush=True)
print(f"families wins: {wins}/3")
