"""Cosine-distance snippet retrieval, R@k / median-rank metrics, piece voting."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

UNIT_NORM_TOL = 1e-6


@dataclass
class EmbeddingIndex:
    """Unit-norm candidate embeddings with per-row piece/note metadata."""

    vectors: np.ndarray       # (N, D), unit rows
    piece_ids: np.ndarray     # (N,)
    note_indices: np.ndarray  # (N,)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or len(self.vectors) < 1:
            raise ValueError("index needs at least one embedding row")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-4):
            raise ValueError("index rows must be unit norm")
        self.piece_ids = np.asarray(self.piece_ids)
        self.note_indices = np.asarray(self.note_indices)
        if len(self.piece_ids) != len(self.vectors) or len(self.note_indices) != len(self.vectors):
            raise ValueError("metadata length does not match embedding count")

    def __len__(self):
        return len(self.vectors)


@dataclass
class RetrievalResult:
    row_ids: np.ndarray    # ranked candidate rows, best first
    distances: np.ndarray  # cosine distances, non-decreasing
    query_id: int = -1


def cosine_distances(index, y):
    y = np.asarray(y)
    if abs(float(np.linalg.norm(y)) - 1.0) > 1e-4:
        raise ValueError("query must be unit norm")
    return 1.0 - index.vectors @ y


def query_knn(index, y, k, query_id=-1):
    """Exhaustive k-nearest-neighbour search by cosine distance.

    Ties are broken by ascending row id (stable sort over distances).
    """
    if not 1 <= k <= len(index):
        raise ValueError(f"k={k} outside [1, {len(index)}]")
    d = cosine_distances(index, y)
    order = np.argsort(d, kind="stable")[:k]
    return RetrievalResult(row_ids=order, distances=d[order], query_id=query_id)


def true_rank(index, y, true_row):
    """1-based rank of ``true_row`` in the full distance-ordered list."""
    d = cosine_distances(index, y)
    order = np.argsort(d, kind="stable")
    return int(np.nonzero(order == true_row)[0][0]) + 1


def recall_at_k(results, k):
    """Percentage of queries whose true candidate appears in the top k.

    ``results`` is a list of (RetrievalResult, true row id); each result
    must be at least k deep.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = sum(1 for res, true_id in results if true_id in res.row_ids[:k])
    return 100.0 * hits / len(results)


def _ranks_from_results(results):
    ranks = []
    for res, true_id in results:
        pos = np.nonzero(res.row_ids == true_id)[0]
        if len(pos) == 0:
            raise ValueError("true candidate not present in result; retrieve with k = index size")
        ranks.append(int(pos[0]) + 1)
    return ranks


def median_rank(results):
    """Median 1-based rank of the true candidate (lower middle for even counts)."""
    if results and isinstance(results[0], tuple):
        ranks = _ranks_from_results(results)
    else:
        ranks = [int(r) for r in results]
    ranks = sorted(ranks)
    return ranks[(len(ranks) - 1) // 2]


def recall_from_ranks(ranks, k):
    ranks = np.asarray(ranks)
    return 100.0 * float(np.count_nonzero(ranks <= k)) / len(ranks)


@dataclass
class PieceVoteResult:
    ranking: list        # (piece_id, votes), descending votes, ties by piece id
    true_rank: int       # 1-based rank of the true piece, -1 if unknown
    total_votes: int


def identify_piece(query_embeddings, index, votes_per_query=25, true_piece=None):
    """Vote-based piece identification for one recording's query excerpts.

    Every query contributes one vote per candidate among its top
    ``votes_per_query`` retrievals, credited to the candidate's piece.
    """
    query_embeddings = np.atleast_2d(np.asarray(query_embeddings))
    k = min(votes_per_query, len(index))
    votes = {}
    for q in query_embeddings:
        res = query_knn(index, q, k)
        for row in res.row_ids:
            pid = int(index.piece_ids[row])
            votes[pid] = votes.get(pid, 0) + 1
    for pid in np.unique(index.piece_ids):
        votes.setdefault(int(pid), 0)
    ranking = sorted(votes.items(), key=lambda kv: (-kv[1], kv[0]))
    rank = -1
    if true_piece is not None:
        rank = next(i + 1 for i, (pid, _) in enumerate(ranking) if pid == true_piece)
    return PieceVoteResult(ranking=ranking, true_rank=rank,
                           total_votes=k * len(query_embeddings))


def save_index(index, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(outdir / "embeddings.f32", "wb") as fh:
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    with open(outdir / "index.json", "w", encoding="utf-8") as fh:
        json.dump({
            "n": len(index),
            "dim": int(index.vectors.shape[1]),
            "piece_ids": [int(p) for p in index.piece_ids],
            "note_indices": [int(i) for i in index.note_indices],
        }, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_index(outdir):
    outdir = Path(outdir)
    with open(outdir / "index.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    vecs = np.fromfile(outdir / "embeddings.f32", dtype="<f4").reshape(meta["n"], meta["dim"])
    return EmbeddingIndex(vectors=vecs,
                          piece_ids=np.array(meta["piece_ids"], dtype=np.int32),
                          note_indices=np.array(meta["note_indices"], dtype=np.int32))


def write_rank_csv(path, ranks, summary):
    """Per-query true ranks plus a final summary row."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("query_id,true_rank\n")
        for i, r in enumerate(ranks):
            fh.write(f"{i},{r}\n")
        parts = ";".join(f"{k}={v:.6g}" for k, v in summary.items())
        fh.write(f"summary,{parts}\n")
