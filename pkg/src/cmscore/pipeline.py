"""Glue between model, data and evaluation: the flows the CLI drives."""

import numpy as np

from .alignment import alignment_error, build_sequences, cost_matrix, dtw, linear_baseline
from .layers import l2_normalize
from .retrieval import EmbeddingIndex, identify_piece, median_rank, recall_from_ranks


def embed_in_batches(embed_fn, arrays, batch=64):
    """Eval-mode embedding in fixed-size chunks to bound peak memory."""
    out = [embed_fn(arrays[i : i + batch]) for i in range(0, len(arrays), batch)]
    return np.vstack(out)


def random_unit_embeddings(rng, n, dim=32):
    return l2_normalize(rng.standard_normal((n, dim))).astype(np.float32)


def build_snippet_index(model, split, batch=64):
    vectors = embed_in_batches(model.embed_image, split.snippets, batch)
    return EmbeddingIndex(vectors=vectors, piece_ids=split.piece_ids,
                          note_indices=split.note_indices)


def retrieval_ranks(index, queries):
    """1-based rank of the row-aligned true candidate for every query."""
    d = 1.0 - queries @ index.vectors.T          # (Q, N) cosine distances
    ranks = []
    for q in range(len(queries)):
        order = np.argsort(d[q], kind="stable")
        ranks.append(int(np.nonzero(order == q)[0][0]) + 1)
    return ranks


def summarize_ranks(ranks):
    return {
        "R@1": recall_from_ranks(ranks, 1),
        "R@10": recall_from_ranks(ranks, 10),
        "R@25": recall_from_ranks(ranks, 25),
        "MR": median_rank(ranks),
    }


def evaluate_retrieval(split, model=None, mode="model", seed=0, batch=64):
    """Audio-query snippet retrieval over one split.

    Modes: ``model`` embeds snippets and excerpts with the trained
    pathways; ``random`` replaces both sides with seeded random unit
    vectors (the chance baseline); ``oracle`` reuses the snippet
    embeddings as queries (a perfect-retrieval sanity check).
    """
    if mode == "random":
        rng = np.random.default_rng(seed)
        index_vecs = random_unit_embeddings(rng, len(split.snippets))
        queries = random_unit_embeddings(rng, len(split.excerpts))
    elif mode in ("model", "oracle"):
        if model is None:
            raise ValueError(f"mode {mode!r} needs a model")
        index_vecs = embed_in_batches(model.embed_image, split.snippets, batch)
        queries = index_vecs if mode == "oracle" else embed_in_batches(model.embed_audio, split.excerpts, batch)
    else:
        raise ValueError(f"unknown eval mode {mode!r}")
    index = EmbeddingIndex(vectors=index_vecs, piece_ids=split.piece_ids,
                           note_indices=split.note_indices)
    ranks = retrieval_ranks(index, queries)
    return ranks, summarize_ranks(ranks)


def identify_recordings(model, dataset, votes_per_query=25, batch=64):
    """Piece identification for every test recording (one per test piece).

    The queries of a recording are its excerpts from the test split; the
    index holds every test snippet.
    """
    split = dataset.splits["test"]
    index = build_snippet_index(model, split, batch)
    results = {}
    for pid in sorted(set(int(p) for p in split.piece_ids)):
        mask = split.piece_ids == pid
        queries = embed_in_batches(model.embed_audio, split.excerpts[mask], batch)
        results[pid] = identify_piece(queries, index, votes_per_query, true_piece=pid)
    return results


def align_piece(model, art, hop_img=50, hop_aud=10, ref_width=835.0, batch=64):
    """DTW and linear-baseline alignment of one test piece.

    Returns the two AlignmentErrors plus the cost matrix and path.
    """
    seq = build_sequences(art.staff, art.spectrogram, hop_img, hop_aud,
                          note_x=art.note_x, onset_frames=art.onset_frames)
    X = embed_in_batches(model.embed_image, seq.image_windows, batch)
    Y = embed_in_batches(model.embed_audio, seq.audio_windows, batch)
    cost = cost_matrix(X, Y)
    path, total = dtw(cost)
    base = linear_baseline(cost.shape[0], cost.shape[1])
    dtw_err = alignment_error(path, seq.true_x, seq.image_centers, ref_width)
    lin_err = alignment_error(base, seq.true_x, seq.image_centers, ref_width)
    return {
        "dtw": dtw_err,
        "linear": lin_err,
        "cost": cost,
        "path": path,
        "total_cost": total,
        "sequences": seq,
    }
