import time

from fedmt.clustering import cluster_by_family, cluster_by_gradient, compute_gradient_feature
from fedmt.config import config_from_dict
from fedmt.runner import build_method_model, prepare_data, warmup_backbone

for zipf in (1.0, 1.3):
    for warm_epochs in (4, 8):
        hits = 0
        t0 = time.time()
        for seed in (1, 2, 3):
            cfg = config_from_dict({
                "mode": "m2en", "method": "adapter-gradients", "seeds": [seed],
                "warmup": {"sentences_per_pair": 256, "epochs": warm_epochs},
                "data": {"intra_family_overlap": 1.0, "cross_family_overlap": 0.0,
                         "zipf_exponent": zipf},
            })
            _, clients, vocab = prepare_data(cfg, seed)
            backbone = warmup_backbone(cfg, seed)
            probe = build_method_model(cfg, seed, vocab, backbone)
            feats = [compute_gradient_feature(c, probe, vocab)
                     for c in sorted(clients, key=lambda c: c.id)]
            truth = set(cluster_by_family(clients, "encoder", "m2en"))
            got = set(cluster_by_gradient(feats, k=4, seed=seed))
            hits += int(got == truth)
        print(f"zipf {zipf} warm {warm_epochs}: recovery {hits}/3  ({time.time()-t0:.0f}s)", flush=True)
