"""Synthetic sheet/audio correspondence generator.

Produces toy pieces as note-event sequences, renders each piece to a
single unrolled staff image and to a harmonic-model log-frequency
spectrogram, and cuts aligned (snippet, excerpt) correspondence pairs
with per-note ground truth (x pixel on the staff, onset frame in the
spectrogram). Image augmentation (scaling, vertical system shift,
horizontal note shift) and audio augmentation (sound fonts, tempo
grid) follow fixed ranges; the test split always uses a held-out
sound font at 120 bpm and no image augmentation.

Rendering conventions (arbitrary but fixed):
  * staff strip is 180 px tall, white background 1.0, ink 0.0,
    5 staff lines spaced 16 px about the center row;
  * pitch index p sits at row 174 - 8*p (one half line spacing per step);
  * note heads are filled ellipses (rx=7, ry=5) spaced evenly in x;
  * pitch p has fundamental spectrogram bin 6 + 4*p, harmonics at
    integer multiples of that bin, dropped above bin 91;
  * a spectrogram excerpt's final frame is the note's onset frame
    (the excerpt looks back ~2.1 s at 20 fps).
"""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SNIPPET_SHAPE = (180, 200)
EXCERPT_SHAPE = (92, 42)
FPS = 20

STAFF_HEIGHT = 180
CENTER_ROW = 90
MARGIN_X = 120
LINE_SPACING = 16
HEAD_RX = 7
HEAD_RY = 5
PITCH_COUNT_MAX = 22

FUND_BIN_BASE = 6
FUND_BIN_STEP = 4
NOTE_DECAY = 0.96
SPEC_TAIL_FRAMES = 5

SCALE_RANGE = (0.95, 1.05)
SHIFT_RANGE = 5

DURATION_CHOICES = (0.5, 1.0, 2.0, 3.0)
DURATION_WEIGHTS = (0.30, 0.35, 0.25, 0.10)


@dataclass
class SoundFontProfile:
    """Timbre profile: harmonic rolloff, harmonic count, broadband noise floor."""

    font_id: int
    rolloff: float
    harmonics: int
    noise_floor: float

    def __post_init__(self):
        if self.rolloff < 0 or self.noise_floor < 0:
            raise ValueError("font amplitudes must be nonnegative")


DEFAULT_FONTS = {
    0: SoundFontProfile(0, rolloff=0.80, harmonics=5, noise_floor=0.010),
    1: SoundFontProfile(1, rolloff=0.50, harmonics=8, noise_floor=0.020),
    2: SoundFontProfile(2, rolloff=0.90, harmonics=3, noise_floor=0.005),
    3: SoundFontProfile(3, rolloff=0.65, harmonics=6, noise_floor=0.015),
}
TRAIN_FONT_IDS = (0, 1, 2)
TEST_FONT_ID = 3


@dataclass
class SymbolicPiece:
    piece_id: int
    pitches: np.ndarray      # int, 0 .. pitch_range-1
    durations: np.ndarray    # beats
    tempo: float             # bpm
    note_spacing: int        # px between note centers
    line_spacing: int = LINE_SPACING

    def __post_init__(self):
        if len(self.pitches) < 1:
            raise ValueError("a piece needs at least one note")

    @property
    def n_notes(self):
        return len(self.pitches)

    def onset_beats(self):
        return np.concatenate(([0.0], np.cumsum(self.durations)[:-1]))

    def onset_seconds(self):
        return self.onset_beats() * (60.0 / self.tempo)

    def onset_frames(self):
        return np.round(self.onset_seconds() * FPS).astype(int)

    def offset_frames(self):
        ends = (self.onset_beats() + self.durations) * (60.0 / self.tempo)
        off = np.round(ends * FPS).astype(int)
        return np.maximum(off, self.onset_frames() + 1)


def gen_piece(seed, note_count=40, pitch_range=PITCH_COUNT_MAX):
    """Deterministically draw a toy piece from a seed."""
    if note_count < 1:
        raise ValueError("note_count must be >= 1")
    if not 1 <= pitch_range <= PITCH_COUNT_MAX:
        raise ValueError(f"pitch_range must be in [1, {PITCH_COUNT_MAX}]")
    rng = np.random.default_rng(seed)
    pitches = rng.integers(0, pitch_range, size=note_count)
    durations = rng.choice(DURATION_CHOICES, size=note_count, p=DURATION_WEIGHTS)
    note_spacing = int(rng.integers(40, 51))
    return SymbolicPiece(piece_id=0, pitches=pitches, durations=durations,
                         tempo=120.0, note_spacing=note_spacing)


def note_y(pitch, line_spacing=LINE_SPACING):
    """Vertical center of a note head; one pitch step is half a line spacing."""
    return int(round(CENTER_ROW + (10.5 - pitch) * line_spacing / 2.0))


def staff_line_rows(line_spacing=LINE_SPACING):
    return [CENTER_ROW + k * line_spacing for k in range(-2, 3)]


def render_unrolled_staff(piece):
    """Render a piece to one concatenated staff strip.

    Returns (image, x_pixels): a (180, W) float image (white 1.0, ink
    0.0) and the strictly increasing per-note head-center x positions.
    """
    n = piece.n_notes
    width = 2 * MARGIN_X + (n - 1) * piece.note_spacing
    img = np.ones((STAFF_HEIGHT, width), dtype=np.float32)
    for row in staff_line_rows(piece.line_spacing):
        img[row, :] = 0.0
    xs = MARGIN_X + np.arange(n) * piece.note_spacing
    for x, p in zip(xs, piece.pitches):
        y = note_y(int(p), piece.line_spacing)
        for dy in range(-HEAD_RY, HEAD_RY + 1):
            half_w = int(np.floor(HEAD_RX * np.sqrt(max(0.0, 1.0 - (dy / HEAD_RY) ** 2))))
            img[y + dy, x - half_w : x + half_w + 1] = 0.0
    return img, xs.astype(int)


@dataclass
class AugmentParams:
    scale: float = 1.0
    dy: int = 0
    dx: int = 0

    def validate(self):
        if not SCALE_RANGE[0] <= self.scale <= SCALE_RANGE[1]:
            raise ValueError(f"scale {self.scale} outside {SCALE_RANGE}")
        if abs(self.dy) > SHIFT_RANGE or abs(self.dx) > SHIFT_RANGE:
            raise ValueError(f"shift ({self.dy}, {self.dx}) outside +-{SHIFT_RANGE}")
        return self


IDENTITY_AUG = AugmentParams()


def _sample_window(img, pivot_src, aug, out_shape=SNIPPET_SHAPE, fill=1.0):
    """Bilinear window resample of ``img`` around a pivot.

    Output pixel (r, c) reads source position
    pivot_src + (dy, dx) + ((r, c) - pivot_out) / scale, where pivot_out
    is (90, 100). Identity parameters with an integer pivot reproduce
    the source pixels exactly; positions outside the image read the
    white fill value.
    """
    h, w = out_shape
    src_r = pivot_src[0] + aug.dy + (np.arange(h) - CENTER_ROW) / aug.scale
    src_c = pivot_src[1] + aug.dx + (np.arange(w) - 100) / aug.scale
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr = (src_r - r0)[:, None]
    fc = (src_c - c0)[None, :]

    def gather(ri, ci):
        rr, cc = np.meshgrid(ri, ci, indexing="ij")
        valid = (rr >= 0) & (rr < img.shape[0]) & (cc >= 0) & (cc < img.shape[1])
        out = np.full((h, w), fill, dtype=np.float64)
        out[valid] = img[rr[valid], cc[valid]]
        return out

    v00 = gather(r0, c0)
    v01 = gather(r0, c0 + 1)
    v10 = gather(r0 + 1, c0)
    v11 = gather(r0 + 1, c0 + 1)
    out = (1 - fr) * ((1 - fc) * v00 + fc * v01) + fr * ((1 - fc) * v10 + fc * v11)
    return out.astype(np.float32)


def cut_sheet_snippet(staff_img, x_pixel, aug=None):
    """Cut a 180x200 window centered on a note head, with augmentation.

    The window is shifted by (dx, dy) over the staff and the content is
    scaled about the window center; anything outside the staff strip is
    padded with the white background value.
    """
    aug = (aug or IDENTITY_AUG).validate()
    return _sample_window(staff_img, (CENTER_ROW, int(x_pixel)), aug)


def augment_image(snippet, aug):
    """Apply scale / shift augmentation to an already-cut snippet."""
    snippet = np.asarray(snippet)
    if snippet.shape != SNIPPET_SHAPE:
        raise ValueError(f"expected a {SNIPPET_SHAPE} snippet, got {snippet.shape}")
    aug = aug.validate()
    return _sample_window(snippet, (CENTER_ROW, 100), aug)


def render_piece_spectrogram(piece, font):
    """Log-frequency magnitude lattice (92 bins x T frames) for a piece.

    Each sounding note contributes its harmonic stack plus a broadband
    noise floor, decaying exponentially from the onset; the lattice is
    log(1 + magnitude), hence nonnegative with silence exactly zero.
    """
    onsets = piece.onset_frames()
    offsets = piece.offset_frames()
    total = int(offsets.max()) + SPEC_TAIL_FRAMES
    mag = np.zeros((EXCERPT_SHAPE[0], total), dtype=np.float64)
    for p, on, off in zip(piece.pitches, onsets, offsets):
        env = NOTE_DECAY ** np.arange(off - on)
        fund = FUND_BIN_BASE + FUND_BIN_STEP * int(p)
        for h in range(1, font.harmonics + 1):
            b = h * fund
            if b >= EXCERPT_SHAPE[0]:
                break
            mag[b, on:off] += (font.rolloff ** (h - 1)) * env
        mag[:, on:off] += font.noise_floor * env
    return np.log1p(mag).astype(np.float32)


def cut_spectrogram_excerpt(full_spec, end_frame):
    """42-frame excerpt whose final frame is ``end_frame``; zero-padded."""
    bins, frames = EXCERPT_SHAPE
    out = np.zeros((bins, frames), dtype=np.float32)
    start = end_frame - frames + 1
    lo = max(start, 0)
    hi = min(end_frame + 1, full_spec.shape[1])
    if hi > lo:
        out[:, lo - start : hi - start] = full_spec[:, lo:hi]
    return out


def render_spectrogram_excerpt(piece, note_index, font):
    """Excerpt anchored so its final frame is the note's onset frame."""
    full = render_piece_spectrogram(piece, font)
    return cut_spectrogram_excerpt(full, int(piece.onset_frames()[note_index]))


@dataclass
class DatasetConfig:
    n_train_pieces: int = 5
    n_val_pieces: int = 1
    n_test_pieces: int = 3
    notes_per_piece: int = 40
    pitch_range: int = PITCH_COUNT_MAX
    train_fonts: tuple = TRAIN_FONT_IDS
    test_font: int = TEST_FONT_ID
    train_tempos: tuple = (100.0, 110.0, 120.0, 130.0)
    test_tempo: float = 120.0
    image_scaling: bool = True
    dy_system: bool = True
    dx_note: bool = True
    multi_font: bool = True
    tempo_var: bool = True
    seed: int = 0

    def __post_init__(self):
        self.train_fonts = tuple(self.train_fonts)
        self.train_tempos = tuple(float(t) for t in self.train_tempos)
        if self.test_font in self.train_fonts:
            raise ValueError("the test sound font must be unseen during training")
        if self.n_train_pieces < 1:
            raise ValueError("need at least one training piece")

    def effective_fonts(self):
        return self.train_fonts if self.multi_font else self.train_fonts[:1]

    def effective_tempos(self):
        return self.train_tempos if self.tempo_var else (self.test_tempo,)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["train_fonts"] = list(self.train_fonts)
        d["train_tempos"] = list(self.train_tempos)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["train_fonts"] = tuple(d["train_fonts"])
        d["train_tempos"] = tuple(d["train_tempos"])
        return cls(**d)


@dataclass
class SplitData:
    snippets: np.ndarray      # (N, 180, 200) float32
    excerpts: np.ndarray      # (N, 92, 42) float32
    piece_ids: np.ndarray
    note_indices: np.ndarray
    x_pixels: np.ndarray
    onset_frames: np.ndarray
    fonts: np.ndarray
    tempos: np.ndarray
    aug_scale: np.ndarray
    aug_dy: np.ndarray
    aug_dx: np.ndarray

    def __len__(self):
        return len(self.snippets)


@dataclass
class PieceArtifacts:
    """Per-piece rendered assets kept for alignment and identification."""

    piece_id: int
    tempo: float
    font: int
    staff: np.ndarray         # (180, W)
    spectrogram: np.ndarray   # (92, T)
    note_x: np.ndarray
    onset_frames: np.ndarray
    onset_seconds: np.ndarray


@dataclass
class Dataset:
    config: DatasetConfig
    splits: dict
    test_pieces: list
    pieces: dict = None  # piece id -> SymbolicPiece (symbolic source of truth)


def _pairs_for_piece(piece, staff, xs, font, tempo, aug_rng, cfg):
    """Correspondence pairs for one (piece, font, tempo) rendition.

    All three augmentation values are drawn for every pair so the RNG
    stream does not depend on which toggles are enabled.
    """
    p_t = dataclasses.replace(piece, tempo=tempo)
    full = render_piece_spectrogram(p_t, DEFAULT_FONTS[font])
    onsets = p_t.onset_frames()
    rows = []
    for i in range(piece.n_notes):
        scale = float(aug_rng.uniform(*SCALE_RANGE))
        dy = int(aug_rng.integers(-SHIFT_RANGE, SHIFT_RANGE + 1))
        dx = int(aug_rng.integers(-SHIFT_RANGE, SHIFT_RANGE + 1))
        aug = AugmentParams(
            scale=scale if cfg.image_scaling else 1.0,
            dy=dy if cfg.dy_system else 0,
            dx=dx if cfg.dx_note else 0,
        )
        snippet = cut_sheet_snippet(staff, xs[i], aug)
        excerpt = cut_spectrogram_excerpt(full, int(onsets[i]))
        rows.append((snippet, excerpt, piece.piece_id, i, float(xs[i]), int(onsets[i]),
                     font, tempo, aug.scale, aug.dy, aug.dx))
    return rows


def _rows_to_split(rows):
    cols = list(zip(*rows))
    return SplitData(
        snippets=np.stack(cols[0]).astype(np.float32),
        excerpts=np.stack(cols[1]).astype(np.float32),
        piece_ids=np.array(cols[2], dtype=np.int32),
        note_indices=np.array(cols[3], dtype=np.int32),
        x_pixels=np.array(cols[4], dtype=np.float32),
        onset_frames=np.array(cols[5], dtype=np.int32),
        fonts=np.array(cols[6], dtype=np.int32),
        tempos=np.array(cols[7], dtype=np.float32),
        aug_scale=np.array(cols[8], dtype=np.float32),
        aug_dy=np.array(cols[9], dtype=np.int32),
        aug_dx=np.array(cols[10], dtype=np.int32),
    )


def build_dataset(cfg):
    """Build {train, val, test} correspondence splits, split by piece.

    Train and val renditions use the training fonts and tempo grid (as
    reduced by the augmentation toggles); the test split uses the
    held-out font at the fixed test tempo with no image augmentation.
    """
    n_total = cfg.n_train_pieces + cfg.n_val_pieces + cfg.n_test_pieces
    root = np.random.SeedSequence(cfg.seed)
    children = root.spawn(n_total + 1)
    aug_rng = np.random.default_rng(children[-1])

    train_ids = list(range(cfg.n_train_pieces))
    val_ids = list(range(cfg.n_train_pieces, cfg.n_train_pieces + cfg.n_val_pieces))
    test_ids = list(range(cfg.n_train_pieces + cfg.n_val_pieces, n_total))
    if set(train_ids) & set(val_ids) or set(train_ids) & set(test_ids) or set(val_ids) & set(test_ids):
        raise ValueError("piece ids overlap between splits")

    pieces = {}
    for pid in train_ids + val_ids + test_ids:
        piece = gen_piece(children[pid], cfg.notes_per_piece, cfg.pitch_range)
        pieces[pid] = dataclasses.replace(piece, piece_id=pid)

    splits = {}
    for name, ids in (("train", train_ids), ("val", val_ids)):
        rows = []
        for pid in ids:
            staff, xs = render_unrolled_staff(pieces[pid])
            for font in cfg.effective_fonts():
                for tempo in cfg.effective_tempos():
                    rows.extend(_pairs_for_piece(pieces[pid], staff, xs, font, tempo, aug_rng, cfg))
        splits[name] = _rows_to_split(rows)

    test_rows = []
    test_pieces = []
    no_aug_cfg = dataclasses.replace(cfg, image_scaling=False, dy_system=False, dx_note=False)
    for pid in test_ids:
        piece = dataclasses.replace(pieces[pid], tempo=cfg.test_tempo)
        staff, xs = render_unrolled_staff(piece)
        test_rows.extend(_pairs_for_piece(piece, staff, xs, cfg.test_font, cfg.test_tempo,
                                          aug_rng, no_aug_cfg))
        test_pieces.append(PieceArtifacts(
            piece_id=pid,
            tempo=cfg.test_tempo,
            font=cfg.test_font,
            staff=staff,
            spectrogram=render_piece_spectrogram(piece, DEFAULT_FONTS[cfg.test_font]),
            note_x=xs.astype(np.float32),
            onset_frames=piece.onset_frames().astype(np.int32),
            onset_seconds=piece.onset_seconds().astype(np.float32),
        ))
    splits["test"] = _rows_to_split(test_rows)
    return Dataset(config=cfg, splits=splits, test_pieces=test_pieces, pieces=pieces)


def _write_f32(path, arr):
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_f32(path, shape):
    data = np.fromfile(path, dtype="<f4")
    expect = int(np.prod(shape))
    if data.size != expect:
        raise ValueError(f"{path}: expected {expect} float32 values, found {data.size}")
    return data.reshape(shape)


def _dump_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def save_dataset(ds, outdir):
    """Persist a dataset: per-split manifest + raw little-endian float32 tensors."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pieces_meta = {}
    for pid, piece in (ds.pieces or {}).items():
        pieces_meta[str(pid)] = {
            "pitches": [int(p) for p in piece.pitches],
            "durations": [float(d) for d in piece.durations],
            "note_spacing": piece.note_spacing,
            "line_spacing": piece.line_spacing,
        }
    _dump_json(outdir / "dataset.json", {
        "config": ds.config.to_dict(),
        "splits": sorted(ds.splits.keys()),
        "pieces": pieces_meta,
    })
    for name, split in ds.splits.items():
        sdir = outdir / name
        sdir.mkdir(exist_ok=True)
        _write_f32(sdir / "snippets.f32", split.snippets)
        _write_f32(sdir / "excerpts.f32", split.excerpts)
        pairs = [
            {
                "piece": int(split.piece_ids[i]),
                "note": int(split.note_indices[i]),
                "x_pixel": float(split.x_pixels[i]),
                "onset_frame": int(split.onset_frames[i]),
                "font": int(split.fonts[i]),
                "tempo": float(split.tempos[i]),
                "aug_scale": float(split.aug_scale[i]),
                "aug_dy": int(split.aug_dy[i]),
                "aug_dx": int(split.aug_dx[i]),
            }
            for i in range(len(split))
        ]
        manifest = {
            "split": name,
            "n_pairs": len(split),
            "snippet_shape": list(SNIPPET_SHAPE),
            "excerpt_shape": list(EXCERPT_SHAPE),
            "files": {"snippets": "snippets.f32", "excerpts": "excerpts.f32"},
            "pairs": pairs,
        }
        if name == "test":
            piece_entries = []
            for art in ds.test_pieces:
                stem = f"piece_{art.piece_id:03d}"
                _write_f32(sdir / f"{stem}_staff.f32", art.staff)
                _write_f32(sdir / f"{stem}_spec.f32", art.spectrogram)
                piece_entries.append({
                    "piece": art.piece_id,
                    "tempo": art.tempo,
                    "font": art.font,
                    "staff_file": f"{stem}_staff.f32",
                    "staff_shape": list(art.staff.shape),
                    "spec_file": f"{stem}_spec.f32",
                    "spec_shape": list(art.spectrogram.shape),
                    "note_x": [float(v) for v in art.note_x],
                    "onset_frames": [int(v) for v in art.onset_frames],
                    "onset_seconds": [float(v) for v in art.onset_seconds],
                })
            manifest["pieces"] = piece_entries
        _dump_json(sdir / "manifest.json", manifest)


def load_dataset(path):
    path = Path(path)
    meta_path = path / "dataset.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"{path} does not contain a dataset (missing dataset.json)")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    cfg = DatasetConfig.from_dict(meta["config"])
    pieces = {}
    for pid, entry in meta.get("pieces", {}).items():
        pieces[int(pid)] = SymbolicPiece(
            piece_id=int(pid),
            pitches=np.array(entry["pitches"], dtype=int),
            durations=np.array(entry["durations"], dtype=float),
            tempo=cfg.test_tempo,
            note_spacing=entry["note_spacing"],
            line_spacing=entry["line_spacing"],
        )
    splits = {}
    test_pieces = []
    for name in meta["splits"]:
        sdir = path / name
        with open(sdir / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        n = manifest["n_pairs"]
        snippets = _read_f32(sdir / manifest["files"]["snippets"], (n, *manifest["snippet_shape"]))
        excerpts = _read_f32(sdir / manifest["files"]["excerpts"], (n, *manifest["excerpt_shape"]))
        pairs = manifest["pairs"]
        splits[name] = SplitData(
            snippets=snippets,
            excerpts=excerpts,
            piece_ids=np.array([p["piece"] for p in pairs], dtype=np.int32),
            note_indices=np.array([p["note"] for p in pairs], dtype=np.int32),
            x_pixels=np.array([p["x_pixel"] for p in pairs], dtype=np.float32),
            onset_frames=np.array([p["onset_frame"] for p in pairs], dtype=np.int32),
            fonts=np.array([p["font"] for p in pairs], dtype=np.int32),
            tempos=np.array([p["tempo"] for p in pairs], dtype=np.float32),
            aug_scale=np.array([p["aug_scale"] for p in pairs], dtype=np.float32),
            aug_dy=np.array([p["aug_dy"] for p in pairs], dtype=np.int32),
            aug_dx=np.array([p["aug_dx"] for p in pairs], dtype=np.int32),
        )
        for entry in manifest.get("pieces", []):
            test_pieces.append(PieceArtifacts(
                piece_id=entry["piece"],
                tempo=entry["tempo"],
                font=entry["font"],
                staff=_read_f32(sdir / entry["staff_file"], tuple(entry["staff_shape"])),
                spectrogram=_read_f32(sdir / entry["spec_file"], tuple(entry["spec_shape"])),
                note_x=np.array(entry["note_x"], dtype=np.float32),
                onset_frames=np.array(entry["onset_frames"], dtype=np.int32),
                onset_seconds=np.array(entry["onset_seconds"], dtype=np.float32),
            ))
    return Dataset(config=cfg, splits=splits, test_pieces=test_pieces, pieces=pieces)
