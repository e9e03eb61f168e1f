import time

from fedmt.clustering import cluster_by_family, cluster_by_gradient, compute_gradient_feature
from fedmt.config import config_from_dict
from fedmt.runner import build_method_model, prepare_data, run_seed, warmup_backbone

METHODS = ("model-fed", "adapter-fed", "adapter-local", "adapter-random",
           "adapter-gradients", "adapter-families", "centralized-model",
           "centralized-adapter")

WARM = {"sentences_per_pair": 256, "epochs": 6}

for fed_overrides in ({"learning_rate": 2e-3, "grad_accumulation": 1},
                      {"learning_rate": 3e-3, "grad_accumulation": 1}):
    label = f"lr={fed_overrides['learning_rate']}, accum={fed_overrides['grad_accumulation']}"
    print(f"=== warm 6, {label}: criterion 6a (seed 1) ===", flush=True)
    ok = 0
    for method in METHODS:
        cfg = config_from_dict({
            "mode": "m2en", "method": method, "seeds": [1],
            "warmup": WARM, "evaluate_test_bleu": False,
            "fed": dict(fed_overrides),
        })
        t0 = time.time()
        res = run_seed(cfg, 1)
        red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
        ok += int(red >= 50)
        print(f"{method:22s} {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> "
              f"{res.mean_best_dev:.3f}  ({red:+.1f}%) {'PASS' if red >= 50 else 'FAIL'}",
              flush=True)
    print(f"--- {ok}/8 methods pass 6a at {label}\n", flush=True)

print("=== warm 6, lr 2e-3 accum 1: 6b + recovery (cross=0, seeds 1-3) ===", flush=True)
wins = rec = 0
for seed in (1, 2, 3):
    devs = {}
    for method in ("adapter-fed", "adapter-families"):
        cfg = config_from_dict({
            "mode": "m2en", "method": method, "seeds": [seed],
            "warmup": WARM, "evaluate_test_bleu": False,
            "fed": {"learning_rate": 2e-3, "grad_accumulation": 1},
            "data": {"cross_family_overlap": 0.0},
        })
        devs[method] = run_seed(cfg, seed).mean_best_dev
    win = devs["adapter-families"] < devs["adapter-fed"]
    wins += int(win)
    cfg = config_from_dict({
        "mode": "m2en", "method": "adapter-gradients", "seeds": [seed],
        "warmup": WARM, "evaluate_test_bleu": False,
        "data": {"cross_family_overlap": 0.0},
    })
    _, clients, vocab = prepare_data(cfg, seed)
    backbone = warmup_backbone(cfg, seed)
    probe = build_method_model(cfg, seed, vocab, backbone)
    feats = [compute_gradient_feature(c, probe, vocab)
             for c in sorted(clients, key=lambda c: c.id)]
    truth = set(cluster_by_family(clients, "encoder", "m2en"))
    got = set(cluster_by_gradient(feats, k=4, seed=seed))
    rec += int(got == truth)
    print(f"seed {seed}: families {devs['adapter-families']:.4f} "
          f"{'<' if win else '>='} fed {devs['adapter-fed']:.4f}; recovery {'Y' if got == truth else 'N'}",
          flush=True)
print(f"families wins {wins}/3, recovery {rec}/3", flush=True)
