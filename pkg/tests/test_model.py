import numpy as np
import pytest

from cmscore.layers import BatchNorm2d, Conv2d, ELU, GlobalAvgPool, L2Normalize, MaxPool2x2, ShapeError
from cmscore.model import (
    CheckpointError,
    EmbeddingModel,
    Pathway,
    PathwaySpec,
    build_pathways,
    load_checkpoint,
    save_checkpoint,
)


def walk_shapes(pathway, x):
    """Forward while recording (layer class, output shape) pairs."""
    trace = []
    for layer in pathway.layers:
        x = layer.forward(x, train=False)
        trace.append((type(layer), x.shape))
    return trace


BLOCK = [Conv2d, BatchNorm2d, ELU, Conv2d, BatchNorm2d, ELU, MaxPool2x2]
EXPECTED_LAYER_SEQUENCE = BLOCK * 4 + [Conv2d, BatchNorm2d, GlobalAvgPool, L2Normalize]


class TestArchitecture:
    def test_image_pathway_shape_chain_kappa_1(self, rng):
        image_spec, _ = build_pathways(1.0)
        f = Pathway(image_spec, rng=rng)
        trace = walk_shapes(f, rng.random((1, 1, 180, 200), dtype=np.float32))
        assert [t for t, _ in trace] == EXPECTED_LAYER_SEQUENCE
        shapes = [s for _, s in trace]
        # spatial chain 180x200 -> 90x100 -> 45x50 -> 22x25 -> 11x12
        assert shapes[6] == (1, 12, 90, 100)
        assert shapes[13] == (1, 24, 45, 50)
        assert shapes[20] == (1, 48, 22, 25)
        assert shapes[27] == (1, 48, 11, 12)
        # linear 1x1 projection head: pre-GAP map is 32 x 11 x 12
        assert shapes[29] == (1, 32, 11, 12)
        assert shapes[-1] == (1, 32)

    def test_audio_pathway_shape_chain_kappa_1(self, rng):
        _, audio_spec = build_pathways(1.0)
        g = Pathway(audio_spec, rng=rng)
        trace = walk_shapes(g, rng.random((1, 1, 92, 42), dtype=np.float32))
        assert [t for t, _ in trace] == EXPECTED_LAYER_SEQUENCE
        shapes = [s for _, s in trace]
        assert shapes[6] == (1, 12, 46, 21)
        assert shapes[13] == (1, 24, 23, 10)
        assert shapes[20] == (1, 48, 11, 5)
        assert shapes[27] == (1, 48, 5, 2)
        assert shapes[29] == (1, 32, 5, 2)
        assert shapes[-1] == (1, 32)

    def test_kappa_quarter_scales_blocks_only(self):
        image_spec, audio_spec = build_pathways(0.25)
        assert image_spec.block_channels == (3, 6, 12, 12)
        assert audio_spec.block_channels == (3, 6, 12, 12)
        assert image_spec.embed_dim == 32 and audio_spec.embed_dim == 32

    def test_kappa_too_small_rejected(self):
        with pytest.raises(ValueError, match="kappa"):
            build_pathways(0.01)

    def test_pathways_share_no_parameters(self, rng):
        m = EmbeddingModel.build(0.25, rng=rng)
        f_arrays = {id(a) for _, a in m.f.parameters()}
        g_arrays = {id(a) for _, a in m.g.parameters()}
        assert not f_arrays & g_arrays


class TestEmbedding:
    @pytest.fixture
    def model(self, rng):
        return EmbeddingModel.build(0.25, rng=rng)

    def test_unit_norm_output(self, model, rng):
        X = model.embed_image(rng.random((4, 180, 200), dtype=np.float32))
        assert np.all(np.abs(np.linalg.norm(X, axis=1) - 1.0) < 1e-6)
        Y = model.embed_audio(rng.random((4, 92, 42), dtype=np.float32))
        assert np.all(np.abs(np.linalg.norm(Y, axis=1) - 1.0) < 1e-6)

    def test_wrong_input_dims_rejected(self, model):
        with pytest.raises(ShapeError):
            model.embed_image(np.zeros((1, 100, 200), dtype=np.float32))
        with pytest.raises(ShapeError):
            model.embed_audio(np.zeros((1, 92, 41), dtype=np.float32))

    def test_eval_mode_deterministic(self, model, rng):
        x = rng.random((2, 180, 200), dtype=np.float32)
        assert np.array_equal(model.embed_image(x), model.embed_image(x))

    def test_distinct_inputs_distinct_embeddings(self, model, rng):
        x = rng.random((2, 180, 200), dtype=np.float32)
        X = model.embed_image(x)
        assert not np.allclose(X[0], X[1])
        a = rng.random((2, 92, 42), dtype=np.float32)
        Y = model.embed_audio(a)
        assert not np.allclose(Y[0], Y[1])

    def test_batch_composition_invariance_in_eval(self, model, rng):
        batch = rng.random((5, 180, 200), dtype=np.float32)
        full = model.embed_image(batch)
        alone = model.embed_image(batch[2:3])
        assert np.array_equal(full[2], alone[0])


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        m = EmbeddingModel.build(0.25, rng=rng)
        m.epoch = 17
        path = tmp_path / "model.ckpt"
        save_checkpoint(m, path)
        m2 = load_checkpoint(path)
        assert m2.epoch == 17
        assert m2.image_spec == m.image_spec and m2.audio_spec == m.audio_spec
        for (n1, a1), (n2, a2) in zip(m.variables(), m2.variables()):
            assert n1 == n2
            assert np.array_equal(a1, a2), n1

    def test_save_load_save_identical_bytes(self, tmp_path, rng):
        m = EmbeddingModel.build(0.25, rng=rng)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(m, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_checkpoint(EmbeddingModel.build(0.25, rng=rng), path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_checkpoint(EmbeddingModel.build(0.25, rng=rng), path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path, rng):
        path = tmp_path / "model.ckpt"
        save_checkpoint(EmbeddingModel.build(0.25, rng=rng), path)
        blob = bytearray(path.read_bytes())
        blob[8] = 99  # format version field follows the 8-byte magic
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")


def test_custom_spec_pathway_for_small_geometries(rng):
    # the builder generalizes below Table-1 geometry for cheap gradient checks
    spec = PathwaySpec(input_shape=(1, 10, 12), block_channels=(2,), embed_dim=4)
    p = Pathway(spec, dtype=np.float64, rng=rng)
    out = p.forward(rng.standard_normal((3, 1, 10, 12)))
    assert out.shape == (3, 4)
    assert np.allclose(np.linalg.norm(out, axis=1), 1.0)
