import itertools
import time

import numpy as np

from fedmt.clustering import compute_gradient_feature
from fedmt.config import config_from_dict
from fedmt.runner import build_method_model, prepare_data, warmup_backbone

WARM = {"sentences_per_pair": 256, "epochs": 8}


def partitions_k(items, k):
    """All ways to split items into exactly k non-empty unlabeled groups."""
    items = tuple(items)
    if k == 1:
        yield [items]
        return
    if len(items) == k:
        yield [(i,) for i in items]
        return
    if len(items) < k:
        return
    first, rest = items[0], items[1:]
    for part in partitions_k(rest, k):
        for i in range(len(part)):
            yield part[:i] + [part[i] + (first,)] + part[i + 1 :]
    for part in partitions_k(rest, k - 1):
        yield part + [(first,)]


def cost(points_by_id, partition):
    total = 0.0
    for group in partition:
        vecs = np.stack([points_by_id[i] for i in group])
        centroid = vecs.mean(axis=0)
        norm = np.linalg.norm(centroid)
        if norm < 1e-12:
            total += len(group)
            continue
        total += float((1.0 - vecs @ (centroid / norm)).sum())
    return total


for seed in (1, 2, 3):
    cfg = config_from_dict({
        "mode": "m2en", "method": "adapter-gradients", "seeds": [seed],
        "warmup": WARM,
        "data": {"intra_family_overlap": 1.0, "cross_family_overlap": 0.0},
    })
    _, clients, vocab = prepare_data(cfg, seed)
    backbone = warmup_backbone(cfg, seed)
    probe = build_method_model(cfg, seed, vocab, backbone)
    feats = [compute_gradient_feature(c, probe, vocab) for c in sorted(clients, key=lambda c: c.id)]
    ids = [f.client_id for f in feats]
    fam_of = {c.id: c.src.family for c in clients}
    truth = {}
    for cid in ids:
        truth.setdefault(fam_of[cid], []).append(cid)
    truth_part = [tuple(sorted(v)) for v in truth.values()]

    raw = {f.client_id: f.vector for f in feats}
    mat = np.stack([raw[i] for i in ids])
    centered = mat - mat.mean(axis=0)
    centered /= np.linalg.norm(centered, axis=1, keepdims=True)
    cen = {cid: centered[j] for j, cid in enumerate(ids)}

    for label, pts in (("raw", raw), ("centered", cen)):
        best_cost, best_part = None, None
        for part in partitions_k(tuple(ids), 4):
            c = cost(pts, part)
            if best_cost is None or c < best_cost:
                best_cost, best_part = c, part
        is_family = set(map(tuple, (sorted(g) for g in best_part))) == set(map(tuple, truth_part))
        print(f"seed {seed} {label:9s} optimum {'== family' if is_family else '!= family'}  "
              f"cost(opt)={best_cost:.4f} cost(family)={cost(pts, truth_part):.4f}", flush=True)
