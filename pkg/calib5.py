import numpy as np

from fedmt.clustering import compute_gradient_feature
from fedmt.config import config_from_dict
from fedmt.runner import build_method_model, prepare_data, warmup_backbone
from calib4 import partitions_k, cost


def family_partition(clients):
    groups = {}
    for c in clients:
        groups.setdefault(c.src.family, []).append(c.id)
    return [tuple(sorted(v)) for v in groups.values()]


def analyze(points_by_id, truth_part):
    best_cost, best_part = None, None
    for part in partitions_k(tuple(sorted(points_by_id)), 4):
        c = cost(points_by_id, part)
        if best_cost is None or c < best_cost:
            best_cost, best_part = c, part
    return set(map(tuple, (sorted(g) for g in best_part))) == set(map(tuple, truth_part))


for epochs in (1, 2, 4):
    hits = {"first": 0, "last_ffn": 0, "first_cen": 0, "last_ffn_cen": 0}
    sims_report = []
    for seed in (1, 2, 3):
        cfg = config_from_dict({
            "mode": "m2en", "method": "adapter-gradients", "seeds": [seed],
            "warmup": {"sentences_per_pair": 256, "epochs": epochs},
            "data": {"intra_family_overlap": 1.0, "cross_family_overlap": 0.0},
        })
        _, clients, vocab = prepare_data(cfg, seed)
        backbone = warmup_backbone(cfg, seed)
        probe = build_method_model(cfg, seed, vocab, backbone)
        truth = family_partition(clients)
        ordered = sorted(clients, key=lambda c: c.id)
        for slice_key, prefix in (("first", "enc.layer0.attn_adapter"),
                                  ("last_ffn", "enc.layer2.ffn_adapter")):
            feats = [compute_gradient_feature(c, probe, vocab, slice_prefix=prefix)
                     for c in ordered]
            ids = [f.client_id for f in feats]
            mat = np.stack([f.vector for f in feats])
            pts = {cid: mat[j] for j, cid in enumerate(ids)}
            if analyze(pts, truth):
                hits[slice_key] += 1
            cen = mat - mat.mean(axis=0)
            cen /= np.linalg.norm(cen, axis=1, keepdims=True)
            pts_c = {cid: cen[j] for j, cid in enumerate(ids)}
            if analyze(pts_c, truth):
                hits[slice_key + "_cen"] += 1
            if slice_key == "first":
                fam_of = {c.id: c.src.family for c in clients}
                sims = mat @ mat.T
                within = [sims[i, j] for i in range(8) for j in range(i+1, 8)
                          if fam_of[ids[i]] == fam_of[ids[j]]]
                cross = [sims[i, j] for i in range(8) for j in range(i+1, 8)
                         if fam_of[ids[i]] != fam_of[ids[j]]]
                sims_report.append((np.mean(within), np.mean(cross)))
    print(f"warm epochs {epochs}: optimum==family out of 3 seeds -> {hits}", flush=True)
    print("   first-slice cosines (within, cross):",
          [(round(a, 2), round(b, 2)) for a, b in sims_report], flush=True)
