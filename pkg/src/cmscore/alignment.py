"""Audio-to-sheet alignment: sliding windows, cost matrix, DTW, baseline, error."""

import json
from dataclasses import dataclass

import numpy as np

from .synthdata import EXCERPT_SHAPE, SNIPPET_SHAPE, cut_spectrogram_excerpt

REF_WIDTH = 835.0  # page-equivalent width used to normalize pixel errors


@dataclass
class SequenceSet:
    """Sliding windows over one piece plus the audio-side ground truth."""

    image_windows: np.ndarray    # (M, 180, 200)
    audio_windows: np.ndarray    # (K, 92, 42)
    image_centers: np.ndarray    # (M,) window-center x pixel on the staff
    audio_end_frames: np.ndarray # (K,) final frame of each audio window
    true_x: np.ndarray           # (K,) true sheet x per audio window, or None


def build_sequences(staff_img, spectrogram, hop_img=50, hop_aud=10,
                    note_x=None, onset_frames=None):
    """Cut full sliding-window sequences from a piece's staff and spectrogram.

    Image windows are 180x200 with horizontal hop ``hop_img``; audio
    windows are 92x42 with frame hop ``hop_aud``. Only full windows are
    produced. The ground-truth x for an audio window interpolates the
    note x positions linearly in time at the window's final frame.
    """
    if hop_img < 1 or hop_aud < 1:
        raise ValueError("hops must be >= 1")
    h, w = SNIPPET_SHAPE
    bins, frames = EXCERPT_SHAPE
    H, W = staff_img.shape
    T = spectrogram.shape[1]
    if H != h or W < w or spectrogram.shape[0] != bins or T < frames:
        raise ValueError(
            f"piece too short for one window: staff {staff_img.shape}, spectrogram {spectrogram.shape}"
        )
    img_starts = np.arange(0, W - w + 1, hop_img)
    image_windows = np.stack([staff_img[:, s : s + w] for s in img_starts])
    aud_starts = np.arange(0, T - frames + 1, hop_aud)
    audio_windows = np.stack([cut_spectrogram_excerpt(spectrogram, s + frames - 1) for s in aud_starts])
    end_frames = aud_starts + frames - 1
    truth = None
    if note_x is not None and onset_frames is not None:
        truth = np.interp(end_frames, np.asarray(onset_frames, dtype=float),
                          np.asarray(note_x, dtype=float))
    return SequenceSet(
        image_windows=image_windows.astype(np.float32),
        audio_windows=audio_windows.astype(np.float32),
        image_centers=(img_starts + w // 2).astype(float),
        audio_end_frames=end_frames,
        true_x=truth,
    )


def cost_matrix(img_embeds, aud_embeds):
    """Pairwise cosine distance: entry (r, c) = 1 - x_r . y_c."""
    X = np.asarray(img_embeds)
    Y = np.asarray(aud_embeds)
    if X.ndim != 2 or Y.ndim != 2 or len(X) == 0 or len(Y) == 0:
        raise ValueError("both embedding sequences must be non-empty matrices")
    return 1.0 - X @ Y.T


def dtw(cost):
    """Optimal monotone path through a cost matrix.

    Dynamic program over steps {(1,0), (0,1), (1,1)} with unit weights;
    backtrace breaks ties preferring the diagonal, then the row step,
    then the column step. Returns (path, total_cost) where path is an
    (L, 2) array from (0,0) to (R-1,C-1).
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost matrix must be non-empty and 2-D")
    R, C = cost.shape
    D = np.full((R + 1, C + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, R + 1):
        for j in range(1, C + 1):
            D[i, j] = cost[i - 1, j - 1] + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    path = [(R - 1, C - 1)]
    i, j = R, C
    while (i, j) != (1, 1):
        diag = D[i - 1, j - 1]
        up = D[i - 1, j]
        left = D[i, j - 1]
        if diag <= up and diag <= left:
            i, j = i - 1, j - 1
        elif up <= left:
            i = i - 1
        else:
            j = j - 1
        path.append((i - 1, j - 1))
    path.reverse()
    return np.array(path, dtype=int), float(D[R, C])


def linear_baseline(R, C):
    """Straight-diagonal alignment: column c maps to row round(c*(R-1)/(C-1)).

    Expressed as a valid monotone path (intermediate row steps inserted
    where the rounded row jumps by more than one).
    """
    if R < 1 or C < 1:
        raise ValueError("R and C must be >= 1")
    if C == 1:
        return np.array([(r, 0) for r in range(R)], dtype=int)
    # round half away from zero, matching the documented mapping
    targets = [int(np.floor(c * (R - 1) / (C - 1) + 0.5)) for c in range(C)]
    path = [(0, 0)]
    r = 0
    for c in range(1, C):
        t = targets[c]
        nr = min(r + 1, t)
        path.append((nr, c))
        r = nr
        while r < t:
            r += 1
            path.append((r, c))
    return np.array(path, dtype=int)


def path_cost(path, cost):
    return float(sum(cost[r, c] for r, c in path))


def rows_for_columns(path, n_cols):
    """Row matched to each column: the (lower) median when several rows match."""
    rows = [[] for _ in range(n_cols)]
    for r, c in path:
        rows[c].append(r)
    out = np.empty(n_cols, dtype=int)
    for c, rr in enumerate(rows):
        rr.sort()
        out[c] = rr[(len(rr) - 1) // 2]
    return out


@dataclass
class AlignmentErrors:
    errors: np.ndarray      # per audio window, |est - true| / ref_width
    est_x: np.ndarray
    true_x: np.ndarray
    summary: dict           # median, q1, q3, max


def alignment_error(path, true_x, image_centers, ref_width=REF_WIDTH):
    """Normalized alignment error per audio window plus summary stats.

    The estimated sheet position of audio window c is the center of the
    image window its path rows map it to. Errors are normalized by the
    configurable reference width and may exceed 1.0 on a long unrolled
    staff.
    """
    true_x = np.asarray(true_x, dtype=float)
    rows = rows_for_columns(np.asarray(path), len(true_x))
    est = np.asarray(image_centers, dtype=float)[rows]
    errors = np.abs(est - true_x) / ref_width
    summary = {
        "median": float(np.median(errors)),
        "q1": float(np.percentile(errors, 25)),
        "q3": float(np.percentile(errors, 75)),
        "max": float(np.max(errors)),
    }
    return AlignmentErrors(errors=errors, est_x=est, true_x=true_x, summary=summary)


def write_error_csv(path, result):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("audio_window,true_x,est_x,norm_error\n")
        for c in range(len(result.errors)):
            fh.write(f"{c},{result.true_x[c]:.6g},{result.est_x[c]:.6g},{result.errors[c]:.8g}\n")


def write_summary_json(path, summaries):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summaries, fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_boxplot_data(path, labelled_errors):
    """Gnuplot-friendly five-number summaries, one row per label."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# label min q1 median q3 max\n")
        for label, errors in labelled_errors:
            e = np.asarray(errors)
            fh.write(f"{label} {e.min():.8g} {np.percentile(e, 25):.8g} "
                     f"{np.median(e):.8g} {np.percentile(e, 75):.8g} {e.max():.8g}\n")
