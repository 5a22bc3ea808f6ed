"""Retrieval ranking, the Rank-1/mAP/mINP metrics, and the view protocols.

Matching uses cosine similarity. Same-view and unfiltered protocols draw
their query and gallery sides from a seeded per-(id, view) partition so a
query never ranks against itself; cross-view protocols use the partition the
same way with opposite view filters. Bidirectional protocols run both
directions and average the aggregates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ProtocolError
from .model import VIEW_AERIAL, VIEW_GROUND

PROTOCOL_ALL = "ALL"
PROTOCOL_AA = "A<->A"
PROTOCOL_GG = "G<->G"
PROTOCOL_AG = "A<->G"
PROTOCOL_A2G = "A->G"
PROTOCOL_G2A = "G->A"
PROTOCOLS = (PROTOCOL_ALL, PROTOCOL_AA, PROTOCOL_GG, PROTOCOL_AG,
             PROTOCOL_A2G, PROTOCOL_G2A)


@dataclass
class RetrievalReport:
    protocol: str
    rank1: float
    mean_ap: float
    mean_inp: float
    num_queries: int
    num_excluded: int
    per_query_ap: list = field(default_factory=list)
    per_query_inp: list = field(default_factory=list)


def rank_gallery(query, query_id, gallery, gallery_ids):
    """Boolean match flags of the gallery sorted by descending cosine
    similarity to the query (ties broken toward the lower gallery index)."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.shape[1] != query.shape[0]:
        raise DimensionError(
            f"embedding widths disagree: query {query.shape[0]}, gallery {gallery.shape[1]}")
    qn = query / max(np.linalg.norm(query), 1e-12)
    gn = gallery / np.maximum(np.linalg.norm(gallery, axis=1, keepdims=True), 1e-12)
    sims = gn @ qn
    order = np.argsort(-sims, kind="stable")
    return (np.asarray(gallery_ids)[order] == query_id)


def average_precision(flags) -> float:
    """AP = (1/|G|) * sum over match ranks r of (matches up to r) / r."""
    flags = np.asarray(flags, dtype=bool)
    total = int(flags.sum())
    if total == 0:
        raise ProtocolError("average_precision needs at least one true match")
    ranks = np.nonzero(flags)[0] + 1
    cum = np.arange(1, total + 1)
    return float((cum / ranks).sum() / total)


def inverse_negative_penalty(flags) -> float:
    """INP = (number of true matches) / (rank of the hardest true match)."""
    flags = np.asarray(flags, dtype=bool)
    total = int(flags.sum())
    if total == 0:
        raise ProtocolError("inverse_negative_penalty needs at least one true match")
    hardest = int(np.nonzero(flags)[0][-1]) + 1
    return total / hardest


def _score_direction(q_emb, q_ids, g_emb, g_ids, label):
    if len(g_ids) == 0:
        raise ProtocolError(f"protocol {label}: empty gallery after view filter")
    if len(q_ids) == 0:
        raise ProtocolError(f"protocol {label}: empty query set after view filter")
    aps, inps, hits = [], [], []
    excluded = 0
    for q, qid in zip(q_emb, q_ids):
        flags = rank_gallery(q, qid, g_emb, g_ids)
        if not flags.any():
            excluded += 1
            continue
        aps.append(average_precision(flags))
        inps.append(inverse_negative_penalty(flags))
        hits.append(bool(flags[0]))
    return aps, inps, hits, excluded


def query_gallery_split(ids, views, seed: int):
    """Seeded partition into (query mask, gallery mask), balanced per
    (id, view) group so each side keeps roughly half of every group."""
    ids = np.asarray(ids)
    views = np.asarray(views)
    rng = np.random.default_rng(seed)
    is_query = np.zeros(len(ids), dtype=bool)
    for y in np.unique(ids):
        for v in np.unique(views):
            members = np.nonzero((ids == y) & (views == v))[0]
            if len(members) == 0:
                continue
            perm = rng.permutation(members)
            is_query[perm[:len(perm) // 2]] = True
    return is_query, ~is_query


_VIEW_FILTERS = {
    PROTOCOL_ALL: [(None, None)],
    PROTOCOL_AA: [(VIEW_AERIAL, VIEW_AERIAL)],
    PROTOCOL_GG: [(VIEW_GROUND, VIEW_GROUND)],
    PROTOCOL_AG: [(VIEW_AERIAL, VIEW_GROUND), (VIEW_GROUND, VIEW_AERIAL)],
    PROTOCOL_A2G: [(VIEW_AERIAL, VIEW_GROUND)],
    PROTOCOL_G2A: [(VIEW_GROUND, VIEW_AERIAL)],
}


def evaluate_protocol(embeddings, ids, views, protocol: str,
                      split_seed: int = 0) -> RetrievalReport:
    if protocol not in PROTOCOLS:
        raise ProtocolError(f"unknown protocol {protocol!r}")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(ids)
    views = np.asarray(views)
    q_mask, g_mask = query_gallery_split(ids, views, split_seed)
    rank1s, map_vals, minp_vals = [], [], []
    all_ap, all_inp = [], []
    num_queries = 0
    excluded = 0
    for q_view, g_view in _VIEW_FILTERS[protocol]:
        qm = q_mask if q_view is None else q_mask & (views == q_view)
        gm = g_mask if g_view is None else g_mask & (views == g_view)
        aps, inps, hits, skipped = _score_direction(
            embeddings[qm], ids[qm], embeddings[gm], ids[gm], protocol)
        if not aps:
            raise ProtocolError(f"protocol {protocol}: no scoreable queries")
        rank1s.append(float(np.mean(hits)))
        map_vals.append(float(np.mean(aps)))
        minp_vals.append(float(np.mean(inps)))
        all_ap.extend(aps)
        all_inp.extend(inps)
        num_queries += len(aps)
        excluded += skipped
    return RetrievalReport(
        protocol=protocol,
        rank1=float(np.mean(rank1s)),
        mean_ap=float(np.mean(map_vals)),
        mean_inp=float(np.mean(minp_vals)),
        num_queries=num_queries,
        num_excluded=excluded,
        per_query_ap=all_ap,
        per_query_inp=all_inp,
    )


def embed_samples(cfg, params, samples, batch_size: int = 64):
    """Inference-mode embeddings for a list of data.Sample.

    Returns (meta [N, d], view [N, d], ids [N], views [N]); the meta features
    are the retrieval embeddings.
    """
    from . import model as model_mod
    from .data import batch_arrays

    metas, view_feats, ids, views = [], [], [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x, y, v = batch_arrays(chunk)
        out = model_mod.model_forward(cfg, params, x, v, training=False)
        metas.append(out.meta_feature.data)
        view_feats.append(out.view_feature.data)
        ids.append(y)
        views.append(v)
    return (np.concatenate(metas), np.concatenate(view_feats),
            np.concatenate(ids), np.concatenate(views))


def write_reports(path, reports) -> None:
    """JSON-lines, one record per protocol (per-query lists omitted)."""
    with open(path, "w") as f:
        for r in reports:
            f.write(json.dumps({
                "protocol": r.protocol,
                "rank1": r.rank1,
                "mAP": r.mean_ap,
                "mINP": r.mean_inp,
                "num_queries": r.num_queries,
                "num_excluded": r.num_excluded,
            }) + "\n")


def read_reports(path):
    reports = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            reports.append(RetrievalReport(
                protocol=rec["protocol"], rank1=rec["rank1"],
                mean_ap=rec["mAP"], mean_inp=rec["mINP"],
                num_queries=rec["num_queries"], num_excluded=rec["num_excluded"]))
    return reports
