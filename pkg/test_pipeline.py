"""Tests for sliding-window inference, the interpolation baseline, training and the pair registry"""

import json
from dataclasses import replace

import numpy as np
import pytest

from errors import ShapeError, TrainingDivergedError, ValidationError
from network.checkpoint import load_training_checkpoint
from network.tvsrn import TVSRNv2
from services.inference import (
    InferenceSpec,
    assemble,
    baseline_interpolate,
    extract_windows,
    infer,
    window_starts,
)
from services.pair_manager import PairManager, VolumePair
from services.trainer import (
    TrainConfig,
    _sample_batch,
    build_training_data,
    read_loss_trace,
    run_ablation,
    train,
    write_loss_trace,
)
from volumes.augment import PatchSpec
from volumes.phantom import generate_phantom
from volumes.volume import Volume, write_volume


class ConstantStub:
    """Predicts the same value for every output voxel"""

    def __init__(self, value, r=4):
        self.value = value
        self.r = r

    def predict(self, window):
        depth, height, width = window.shape
        return np.full((self.r * depth, height, width), self.value, dtype=np.float32)


class RepeatStub:
    """Nearest-neighbour depth upsampler"""

    def __init__(self, r=4):
        self.r = r

    def predict(self, window):
        return np.repeat(window, self.r, axis=0)


def _volume(rng, depth, height=4, width=4, spacing=(4.0, 1.0, 1.0)):
    return Volume(rng.uniform(size=(depth, height, width)).astype(np.float32), spacing, "normalized", "v")


def test_window_starts_examples():
    """D=4 -> {0}; D=7 and D=6 -> {0, 3}"""
    spec = InferenceSpec()
    assert window_starts(4, spec) == [0]
    assert window_starts(7, spec) == [0, 3]
    assert window_starts(6, spec) == [0, 3]
    assert window_starts(1, spec) == [0]


def test_last_window_repeats_final_slice(rng):
    v = _volume(rng, 6)
    windows = extract_windows(v, InferenceSpec())
    assert [start for _, start in windows] == [0, 3]
    np.testing.assert_array_equal(windows[1][0], v.voxels[[3, 4, 5, 5]])


def test_windows_cover_every_slice():
    spec = InferenceSpec()
    for depth in range(1, 41):
        covered = set()
        for start in window_starts(depth, spec):
            covered.update(range(start, start + spec.window_depth))
        assert set(range(depth)) <= covered


def test_constant_stub_assembles_to_constant(rng):
    """Every depth from 4 to 40 gives exactly the constant and r*D slices"""
    for depth in range(4, 41):
        v = _volume(rng, depth)
        out = infer(ConstantStub(0.3), v, InferenceSpec())
        assert out.depth == 4 * depth
        assert (out.voxels == np.float32(0.3)).all()


def test_predictions_are_clamped_to_unit_range(rng):
    """Stub outputs above 1 and below 0 land on the range ends"""
    v = _volume(rng, 5)
    high = infer(ConstantStub(1.5), v, InferenceSpec())
    low = infer(ConstantStub(-0.25), v, InferenceSpec())
    assert high.unit == "normalized"
    assert (high.voxels == 1.0).all()
    assert (low.voxels == 0.0).all()


def test_flip_can_be_turned_off(small_phantom):
    """With flips off every sampled patch keeps its orientation"""
    data, config = _training_setup(small_phantom, flip=False)
    rng = np.random.default_rng(0)
    batches = [_sample_batch(data, config, step, rng, 4) for step in range(20)]
    assert not any(pair.provenance.flipped for batch in batches for pair in batch)
    flipping = replace(config, flip=True)
    batches = [_sample_batch(data, flipping, step, rng, 4) for step in range(20)]
    assert any(pair.provenance.flipped for batch in batches for pair in batch)


def test_overlap_is_averaged(rng):
    """Two windows writing a and b on their shared slice give (a+b)/2"""
    v = _volume(rng, 7)
    spec = InferenceSpec()
    a = np.full((16, 4, 4), 0.25, dtype=np.float32)
    b = np.full((16, 4, 4), 0.75, dtype=np.float32)
    out = assemble([a, b], [0, 3], v, spec).voxels
    assert (out[:12] == 0.25).all()
    assert (out[12:16] == 0.5).all()
    assert (out[16:] == 0.75).all()
    assert out.shape == (28, 4, 4)


def test_assembly_ignores_window_order(rng):
    v = _volume(rng, 10)
    spec = InferenceSpec()
    windows = extract_windows(v, spec)
    stub = RepeatStub()
    outputs = [stub.predict(w) + 0.1 * i for i, (w, _) in enumerate(windows)]
    starts = [s for _, s in windows]
    forward = assemble(outputs, starts, v, spec).voxels
    backward = assemble(outputs[::-1], starts[::-1], v, spec).voxels
    assert forward.tobytes() == backward.tobytes()


def test_assembly_rejects_bad_windows(rng):
    v = _volume(rng, 7)
    spec = InferenceSpec()
    with pytest.raises(ShapeError):
        assemble([np.zeros((12, 4, 4)), np.zeros((16, 4, 4))], [0, 3], v, spec)
    with pytest.raises(ShapeError):
        assemble([np.zeros((16, 4, 4))], [0, 3], v, spec)


def test_repeat_stub_reproduces_slice_repetition(rng):
    v = _volume(rng, 6)
    out = infer(RepeatStub(), v, InferenceSpec())
    np.testing.assert_array_equal(out.voxels, np.repeat(v.voxels, 4, axis=0))
    assert out.spacing_mm == (1.0, 1.0, 1.0)


def test_identity_model_at_r1_returns_input(rng):
    v = _volume(rng, 9)
    out = infer(RepeatStub(r=1), v, InferenceSpec(upsample=1))
    np.testing.assert_array_equal(out.voxels, v.voxels)


def test_raw_input_is_normalized(rng):
    raw = Volume(np.full((4, 4, 4), 512.0, dtype=np.float32), (4.0, 1.0, 1.0), "raw_hu")
    out = infer(RepeatStub(), raw, InferenceSpec())
    assert out.unit == "normalized"
    assert (out.voxels == 0.5).all()


def test_four_slices_become_sixteen(tiny_config, rng):
    model = TVSRNv2(tiny_config, seed=1)
    out = infer(model, _volume(rng, 4, 8, 8), InferenceSpec())
    assert out.dims == (16, 8, 8)


def test_concurrent_inference_is_bit_exact(tiny_config, rng):
    model = TVSRNv2(tiny_config, seed=1)
    v = _volume(rng, 11, 8, 8)
    sequential = infer(model, v, InferenceSpec(workers=1))
    concurrent = infer(model, v, InferenceSpec(workers=3))
    assert sequential.voxels.tobytes() == concurrent.voxels.tobytes()


def test_inference_spec_validation():
    with pytest.raises(ValidationError):
        InferenceSpec(window_depth=4, overlap=4).validate()
    with pytest.raises(ValidationError):
        InferenceSpec(workers=0).validate()
    assert InferenceSpec(window_depth=4, overlap=0).stride == 4


def test_baseline_constant_and_ramp():
    constant = Volume(np.full((5, 3, 3), 0.4, dtype=np.float32), (4.0, 1.0, 1.0), "normalized")
    np.testing.assert_allclose(baseline_interpolate(constant, 4).voxels, 0.4, atol=1e-6)
    ramp = 0.1 + 0.05 * np.arange(8, dtype=np.float64)
    v = Volume(np.broadcast_to(ramp[:, None, None], (8, 2, 2)).astype(np.float32), (4.0, 1.0, 1.0), "normalized")
    out = baseline_interpolate(v, 4)
    u = (np.arange(32) + 0.5) / 4 - 0.5
    np.testing.assert_allclose(out.voxels[:, 0, 0], 0.1 + 0.05 * u, atol=1e-6)
    assert out.spacing_mm == (1.0, 1.0, 1.0)


def _hermite_column(column, r):
    """Catmull-Rom through the tangent form, linearly extended past both ends"""
    depth = len(column)

    def sample(i):
        if i < 0:
            return column[0] + i * (column[1] - column[0])
        if i >= depth:
            return column[-1] + (i - depth + 1) * (column[-1] - column[-2])
        return column[i]

    out = []
    for t in range(r * depth):
        u = (t + 0.5) / r - 0.5
        i = int(np.floor(u))
        s = u - i
        p1, p2 = sample(i), sample(i + 1)
        m1 = 0.5 * (sample(i + 1) - sample(i - 1))
        m2 = 0.5 * (sample(i + 2) - sample(i))
        h00 = 2 * s ** 3 - 3 * s ** 2 + 1
        h10 = s ** 3 - 2 * s ** 2 + s
        h01 = -2 * s ** 3 + 3 * s ** 2
        h11 = s ** 3 - s ** 2
        out.append(h00 * p1 + h10 * m1 + h01 * p2 + h11 * m2)
    return np.clip(np.array(out), 0.0, 1.0)


def test_baseline_matches_brute_force(rng):
    v = _volume(rng, 6, 3, 2)
    out = baseline_interpolate(v, 4).voxels
    src = v.voxels.astype(np.float64)
    for y in range(3):
        for x in range(2):
            np.testing.assert_allclose(out[:, y, x], _hermite_column(src[:, y, x], 4), atol=1e-6)


def test_baseline_single_slice_falls_back(rng, caplog):
    v = _volume(rng, 1)
    out = baseline_interpolate(v, 3)
    assert out.depth == 3
    np.testing.assert_array_equal(out.voxels[2], v.voxels[0])
    assert "repetition" in caplog.text


def _training_setup(small_phantom, **overrides):
    thin, thick = generate_phantom(small_phantom)
    config = TrainConfig(steps=3, lr=1e-3, seed=11, patch=PatchSpec(4, 8, 8), log_interval=1)
    config = replace(config, **overrides)
    return build_training_data([(thick, thin)], config, r=4), config


def test_train_with_zero_lr_keeps_parameters(tiny_config, small_phantom):
    data, config = _training_setup(small_phantom, steps=1, lr=0.0)
    model = TVSRNv2(tiny_config, seed=0)
    before = model.params.arrays()
    result = train(model, data, config)
    assert len(result.loss_trace) == 1
    assert np.isfinite(result.loss_trace[0])
    for name, array in model.params.arrays().items():
        np.testing.assert_array_equal(array, before[name])


def test_same_seed_gives_same_trace(tiny_config, small_phantom):
    data, config = _training_setup(small_phantom)
    first = train(TVSRNv2(tiny_config, seed=0), data, config).loss_trace
    second = train(TVSRNv2(tiny_config, seed=0), data, config).loss_trace
    assert first == second
    assert len(first) == 3


def test_fixed_seed_checkpoints_are_identical(tiny_config, small_phantom, tmp_path):
    data, config = _training_setup(small_phantom, steps=2)
    train(TVSRNv2(tiny_config, seed=0), data, config, checkpoint_path=tmp_path / "a.ckpt")
    train(TVSRNv2(tiny_config, seed=0), data, config, checkpoint_path=tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_matches_uninterrupted_run(tiny_config, small_phantom, tmp_path):
    """Resuming from the step-2 checkpoint reproduces the 4-step run bit for bit"""
    data, config = _training_setup(small_phantom, steps=4, checkpoint_interval=2)
    path = tmp_path / "run.ckpt"
    model = TVSRNv2(tiny_config, seed=0)
    full = train(model, data, config, checkpoint_path=str(path))
    assert full.checkpoints == [f"{path}.step2", f"{path}.step4", str(path)]

    params, model_config, state = load_training_checkpoint(f"{path}.step2")
    assert state.step == 2 and len(state.loss_trace) == 2
    resumed_model = TVSRNv2(model_config, params)
    resumed = train(resumed_model, data, config, resume=state)
    assert resumed.loss_trace == full.loss_trace
    for name, array in model.params.arrays().items():
        np.testing.assert_array_equal(resumed_model.params[name].data, array)


def test_non_finite_loss_reports_step_and_patch(tiny_config, small_phantom):
    data, config = _training_setup(small_phantom, steps=2)
    model = TVSRNv2(tiny_config, seed=0)
    model.params["head.out.bias"].data[...] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(model, data, config)
    assert info.value.step == 0
    assert "corner=" in info.value.provenance


def test_validation_runs_on_schedule(tiny_config, small_phantom):
    data, config = _training_setup(small_phantom, steps=2, validation_interval=1)
    result = train(TVSRNv2(tiny_config, seed=0), data, config)
    assert [step for step, _ in result.validation] == [1, 2]
    assert all(np.isfinite(score) for _, score in result.validation)


def test_pseudo_pairs_join_after_real_only_phase(small_phantom):
    data, _ = _training_setup(small_phantom, use_pseudo=True, pseudo_min_slices=8, real_only_steps=1)
    assert len(data.pseudo) == 1
    lr, hr = data.pseudo[0]
    assert hr.name.endswith("@x2") and hr.depth == 16
    assert lr.depth == 4 and lr.unit == "normalized"


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(steps=0).validate()
    with pytest.raises(ValidationError):
        TrainConfig(lr=-1e-4).validate()
    with pytest.raises(ValidationError):
        TrainConfig(variant="gan").validate()


def test_too_shallow_pair_is_rejected(small_phantom):
    thin, thick = generate_phantom(small_phantom)
    with pytest.raises(ShapeError):
        build_training_data([(thick, thin)], TrainConfig(patch=PatchSpec(9, 8, 8)), r=4)


def test_loss_trace_file(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_trace([0.5, 0.25, 0.125], path)
    assert path.read_text().splitlines() == ["step,loss", "0,0.5", "1,0.25", "2,0.125"]
    assert read_loss_trace(path) == [0.5, 0.25, 0.125]


def test_ablation_reports_every_variant(tiny_config, small_phantom):
    data, config = _training_setup(small_phantom, steps=1)
    reports = run_ablation(data, data.real, tiny_config, config)
    assert [r.label for r in reports] == ["full", "no_tab", "encoder_subpixel", "vit_encoder"]
    assert all(len(r.pairs) == 1 for r in reports)


def _write_pair(directory, stem, rng):
    thin = Volume(rng.uniform(size=(8, 4, 4)).astype(np.float32), (1, 1, 1), "normalized")
    write_volume(thin, directory / f"{stem}.thin.vsrv")
    write_volume(thin.replace(voxels=thin.voxels[::4]), directory / f"{stem}.thick.vsrv")


def test_pair_discovery(tmp_path, rng):
    _write_pair(tmp_path, "b", rng)
    _write_pair(tmp_path, "a", rng)
    write_volume(_volume(rng, 2), tmp_path / "lonely.thin.vsrv")
    manager = PairManager.from_path(str(tmp_path))
    assert [p.stem for p in manager.get_all_pairs()] == ["a", "b"]
    assert manager.unpaired == [str(tmp_path / "lonely.thin.vsrv")]
    thick, thin = manager.get_all_pairs()[0].load()
    assert thick.name == "a.thick" and thin.depth == 8


def test_pair_manifest_round_trip(tmp_path, rng):
    _write_pair(tmp_path, "case", rng)
    manager = PairManager.from_path(str(tmp_path))
    manifest = tmp_path / "pairs.json"
    manager.save_manifest(manifest)
    assert json.loads(manifest.read_text())[0]["stem"] == "case"
    again = PairManager.from_path(str(tmp_path))
    assert again.get_all_pairs() == manager.get_all_pairs()
    again.remove_pair("case")
    assert again.get_all_pairs() == []


def test_pair_registry_errors(tmp_path):
    manager = PairManager()
    manager.add_pair(VolumePair("x", "x.thin.vsrv", "x.thick.vsrv"))
    with pytest.raises(ValidationError):
        manager.add_pair(VolumePair("x", "y.thin.vsrv", "y.thick.vsrv"))
    with pytest.raises(ValidationError):
        PairManager.from_path(str(tmp_path))
