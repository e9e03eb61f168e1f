import time

import numpy as np

from fedmt.clustering import cluster_by_family, cluster_by_gradient, compute_gradient_feature
from fedmt.config import config_from_dict
from fedmt.runner import build_method_model, prepare_data, warmup_backbone

WARM = {"sentences_per_pair": 256, "epochs": 8}

for seed in (1, 2, 3):
    cfg = config_from_dict({
        "mode": "m2en", "method": "adapter-gradients", "seeds": [seed],
        "warmup": WARM,
        "data": {"intra_family_overlap": 1.0, "cross_family_overlap": 0.0},
    })
    t0 = time.time()
    _, clients, vocab = prepare_data(cfg, seed)
    backbone = warmup_backbone(cfg, seed)
    probe = build_method_model(cfg, seed, vocab, backbone)
    feats = [compute_gradient_feature(c, probe, vocab) for c in sorted(clients, key=lambda c: c.id)]
    # cosine similarity matrix
    mat = np.stack([f.vector for f in feats])
    sims = mat @ mat.T
    ids = [f.client_id for f in feats]
    fam = cluster_by_family(clients, "encoder", "m2en")
    got = cluster_by_gradient(feats, k=4, seed=seed)
    print(f"seed {seed} ({time.time()-t0:.0f}s)")
    print("  family truth:", fam)
    print("  kmeans got:  ", got, " MATCH" if set(got) == set(fam) else "  MISMATCH", flush=True)
    within, cross = [], []
    fam_of = {c.id: c.src.family for c in clients}
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            (within if fam_of[ids[i]] == fam_of[ids[j]] else cross).append(sims[i, j])
    print(f"  cosine within-family {np.mean(within):.3f}  cross {np.mean(cross):.3f}")
