import time

from fedmt.config import config_from_dict
from fedmt.runner import run_seed, warmup_backbone, prepare_data, bind_model_config
from fedmt.federation import evaluate_dev_loss
from fedmt.model import ToyModel


def probe(label, overrides):
    base = {"mode": "m2en", "seeds": [1], "evaluate_test_bleu": False}
    base.update(overrides)
    cfg = config_from_dict(base)
    t0 = time.time()
    res = run_seed(cfg, 1)
    red = 100 * (1 - res.mean_best_dev / res.mean_round0_dev)
    print(
        f"{label:46s} {time.time()-t0:5.1f}s  dev {res.mean_round0_dev:.3f} -> {res.mean_best_dev:.3f}  ({red:+.1f}%)",
        flush=True,
    )
    return res


WARM = {"sentences_per_pair": 256, "epochs": 8}
t0 = time.time()
cfg = config_from_dict({"mode": "m2en", "method": "adapter-local", "seeds": [1], "warmup": WARM})
backbone = warmup_backbone(cfg, 1)
_, clients, vocab = prepare_data(cfg, 1)
warm_model = ToyModel(bind_model_config(cfg, vocab), backbone, {})
devs = {c.id: evaluate_dev_loss(warm_model, c, vocab) for c in clients}
print(f"warm-up (256x8): {time.time()-t0:.1f}s; per-client dev:",
      {k: round(v, 2) for k, v in devs.items()}, flush=True)

probe("adapter-local (strong warm, lr 1e-3)", {"method": "adapter-local", "warmup": WARM})
probe("adapter-local (strong warm, lr 3e-3)",
      {"method": "adapter-local", "warmup": WARM, "fed": {"learning_rate": 3e-3}})
probe("adapter-fed (strong warm, lr 3e-3)",
      {"method": "adapter-fed", "warmup": WARM, "fed": {"learning_rate": 3e-3}})
probe("adapter-families (strong warm, lr 3e-3)",
      {"method": "adapter-families", "warmup": WARM, "fed": {"learning_rate": 3e-3}})
