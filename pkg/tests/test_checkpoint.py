import json
import zipfile

import numpy as np
import pytest
import torch

from fairgan.errors import CheckpointError, ConfigError
from fairgan.nn import (
    FORMAT_VERSION,
    Discriminator,
    Generator,
    arrays_to_state_dict,
    encode_spec,
    load_archive,
    rng_state_from_array,
    rng_state_to_array,
    save_archive,
    state_dict_to_arrays,
)
from fairgan.training import TrainConfig, TrainState, init_train_state, train, train_step

from conftest import build_pair, random_attributed


def test_archive_round_trip_bit_exact(tmp_path):
    path = tmp_path / "a.npz"
    arrays = {
        "w": np.arange(6, dtype=np.float32).reshape(2, 3) / 7,
        "raw": np.array([0, 255, 17], dtype=np.uint8),
    }
    save_archive(path, arrays, {"note": "hello", "depth": 3})
    loaded, header = load_archive(path)
    assert header["note"] == "hello"
    assert header["depth"] == 3
    assert header["format_version"] == FORMAT_VERSION
    np.testing.assert_array_equal(loaded["w"], arrays["w"])
    assert loaded["w"].dtype == np.dtype("<f4")
    np.testing.assert_array_equal(loaded["raw"], arrays["raw"])
    assert loaded["raw"].dtype == np.uint8


def test_archive_coerces_float64_to_float32(tmp_path):
    path = tmp_path / "a.npz"
    save_archive(path, {"w": np.array([1.0, 2.0], dtype=np.float64)}, {})
    loaded, _ = load_archive(path)
    assert loaded["w"].dtype == np.dtype("<f4")


def test_archive_rejects_other_dtypes(tmp_path):
    with pytest.raises(CheckpointError, match="dtype"):
        save_archive(tmp_path / "a.npz", {"w": np.array([1, 2], dtype=np.int64)}, {})


def test_archive_reserves_header_name(tmp_path):
    with pytest.raises(CheckpointError, match="reserved"):
        save_archive(
            tmp_path / "a.npz", {"__header__": np.zeros(1, dtype=np.uint8)}, {}
        )


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "a.npz"
    doc = json.dumps({"format_version": 999}).encode()
    hdr = np.frombuffer(doc, dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, __header__=hdr)
    with pytest.raises(CheckpointError, match="999"):
        load_archive(path)


def test_load_rejects_missing_header(tmp_path):
    path = tmp_path / "a.npz"
    with open(path, "wb") as fh:
        np.savez_compressed(fh, w=np.zeros(2, dtype=np.float32))
    with pytest.raises(CheckpointError, match="header"):
        load_archive(path)


def test_load_rejects_garbage_file(tmp_path):
    path = tmp_path / "a.npz"
    path.write_bytes(b"not an archive at all")
    with pytest.raises(CheckpointError):
        load_archive(path)


def test_load_rejects_corrupted_header_json(tmp_path):
    path = tmp_path / "a.npz"
    hdr = np.frombuffer(b"{broken json", dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez_compressed(fh, __header__=hdr)
    with pytest.raises(CheckpointError, match="JSON"):
        load_archive(path)


def test_load_rejects_truncated_archive(tmp_path):
    path = tmp_path / "a.npz"
    save_archive(path, {"w": np.zeros((64, 64), dtype=np.float32)}, {})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) // 2])
    with pytest.raises(CheckpointError):
        _, _ = load_archive(path)
        # some truncations survive the directory read and fail on access;
        # loading eagerly above forces the failure either way


def test_encode_spec_flattens_enums_and_tuples(tiny_specs):
    gen_spec, _ = tiny_specs
    doc = encode_spec(gen_spec)
    assert doc["image_shape"] == [1, 8, 8]
    assert doc["outcome_conditioning"] == "class_embed"
    json.dumps(doc)  # must already be JSON-safe


def test_state_dict_round_trip(tiny_specs, tmp_path):
    gen_spec, disc_spec = tiny_specs
    g, d, _ = build_pair((gen_spec, disc_spec), seed=5)
    path = tmp_path / "pair.npz"
    arrays = {}
    arrays.update(state_dict_to_arrays("g", g))
    arrays.update(state_dict_to_arrays("d", d))
    save_archive(path, arrays, {})
    loaded, _ = load_archive(path)
    g2, d2 = Generator(gen_spec), Discriminator(disc_spec)
    g2.load_state_dict(arrays_to_state_dict("g", loaded), strict=True)
    d2.load_state_dict(arrays_to_state_dict("d", loaded), strict=True)
    for (n1, t1), (n2, t2) in zip(g.state_dict().items(), g2.state_dict().items()):
        assert n1 == n2
        torch.testing.assert_close(t1, t2, rtol=0, atol=0)
    for (n1, t1), (n2, t2) in zip(d.state_dict().items(), d2.state_dict().items()):
        assert n1 == n2
        torch.testing.assert_close(t1, t2, rtol=0, atol=0)


def test_arrays_to_state_dict_missing_prefix():
    with pytest.raises(CheckpointError, match="no arrays"):
        arrays_to_state_dict("generator", {"other/w": np.zeros(1, dtype=np.float32)})


def test_rng_state_round_trip():
    g = torch.Generator().manual_seed(123)
    _ = torch.randn(5, generator=g)  # advance past the seeded origin
    arr = rng_state_to_array(g)
    assert arr.dtype == np.uint8
    g2 = rng_state_from_array(arr)
    torch.testing.assert_close(
        torch.randn(100, generator=g), torch.randn(100, generator=g2), rtol=0, atol=0
    )


def flat_params(module):
    return torch.cat([p.detach().reshape(-1) for p in module.parameters()])


def moments(opt):
    out = []
    for idx in sorted(opt.state_dict()["state"]):
        st = opt.state_dict()["state"][idx]
        out.append((float(st["step"]), st["exp_avg"].clone(), st["exp_avg_sq"].clone()))
    return out


def run_steps(state, n, side=8):
    g = torch.Generator().manual_seed(99)
    for _ in range(n):
        x = torch.rand(4, 1, side, side, generator=g) * 2 - 1
        c = torch.tensor([0, 1, 0, 1])
        y = torch.tensor([0.8, -0.8, 0.8, -0.8])
        train_step(state, (x, c, y))


def test_train_state_save_load_bit_exact(tiny_specs, tmp_path):
    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=6, batch_size=4, seed=0)
    state = init_train_state(cfg, gen_spec, disc_spec)
    run_steps(state, 2)
    path = tmp_path / "state.npz"
    state.save(path)
    loaded = TrainState.load(path)

    assert loaded.step == state.step == 2
    assert loaded.skipped_steps == state.skipped_steps
    assert loaded.config == cfg
    assert loaded.generator.spec == gen_spec
    assert loaded.discriminator.spec == disc_spec
    for a, b in (
        (state.generator, loaded.generator),
        (state.discriminator, loaded.discriminator),
    ):
        for (n1, t1), (n2, t2) in zip(a.state_dict().items(), b.state_dict().items()):
            assert n1 == n2
            torch.testing.assert_close(t1, t2, rtol=0, atol=0)
    # optimizer moments and bias-correction counters restored exactly
    for opt_a, opt_b in ((state.opt_g, loaded.opt_g), (state.opt_d, loaded.opt_d)):
        for (sa, ma, va), (sb, mb, vb) in zip(moments(opt_a), moments(opt_b)):
            assert sa == sb
            torch.testing.assert_close(ma, mb, rtol=0, atol=0)
            torch.testing.assert_close(va, vb, rtol=0, atol=0)
    # RNG continues identically
    torch.testing.assert_close(
        torch.randn(32, generator=state.rng),
        torch.randn(32, generator=loaded.rng),
        rtol=0,
        atol=0,
    )


def test_interrupted_training_resumes_bit_exact(tiny_specs, tmp_path):
    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=4, batch_size=4, checkpoint_every=2, seed=0)
    ds = random_attributed(12)

    straight = train(
        ds, cfg, generator_spec=gen_spec, discriminator_spec=disc_spec,
        run_dir=tmp_path / "straight",
    )
    resumed = train(
        ds, cfg, resume_from=tmp_path / "straight" / "checkpoints" / "step_0000002.npz"
    )
    assert resumed.step == 4
    torch.testing.assert_close(
        flat_params(straight.generator), flat_params(resumed.generator), rtol=0, atol=0
    )
    torch.testing.assert_close(
        flat_params(straight.discriminator),
        flat_params(resumed.discriminator),
        rtol=0,
        atol=0,
    )
    for opt_a, opt_b in (
        (straight.opt_g, resumed.opt_g),
        (straight.opt_d, resumed.opt_d),
    ):
        for (sa, ma, va), (sb, mb, vb) in zip(moments(opt_a), moments(opt_b)):
            assert sa == sb
            torch.testing.assert_close(ma, mb, rtol=0, atol=0)
            torch.testing.assert_close(va, vb, rtol=0, atol=0)


def test_resume_rejects_config_drift(tiny_specs, tmp_path):
    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=2, batch_size=4, checkpoint_every=1, seed=0)
    ds = random_attributed(12)
    train(
        ds, cfg, generator_spec=gen_spec, discriminator_spec=disc_spec,
        run_dir=tmp_path / "run",
    )
    drifted = TrainConfig(total_steps=2, batch_size=4, checkpoint_every=1, seed=1)
    with pytest.raises(ConfigError, match="config"):
        train(
            ds,
            drifted,
            resume_from=tmp_path / "run" / "checkpoints" / "step_0000001.npz",
        )


def test_load_rejects_wrong_kind(tmp_path):
    path = tmp_path / "other.npz"
    save_archive(path, {"w": np.zeros(1, dtype=np.float32)}, {"kind": "something-else"})
    with pytest.raises(CheckpointError, match="something-else"):
        TrainState.load(path)


def test_load_rejects_missing_moments(tiny_specs, tmp_path):
    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=4, batch_size=4, seed=0)
    state = init_train_state(cfg, gen_spec, disc_spec)
    run_steps(state, 1)
    path = tmp_path / "state.npz"
    state.save(path)
    arrays, header = load_archive(path)
    victim = next(k for k in arrays if k.endswith("/exp_avg"))
    del arrays[victim]
    header.pop("format_version")
    mangled = tmp_path / "mangled.npz"
    save_archive(mangled, arrays, header)
    with pytest.raises(CheckpointError, match="moment"):
        TrainState.load(mangled)


def test_generate_from_reloaded_state_matches(tiny_specs, tmp_path):
    from fairgan.training import generate_debiased_dataset

    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=3, batch_size=4, seed=0)
    ds = random_attributed(12)
    state = train(ds, cfg, generator_spec=gen_spec, discriminator_spec=disc_spec)
    path = tmp_path / "final.npz"
    state.save(path)
    loaded = TrainState.load(path)
    a = generate_debiased_dataset(state, 20, seed=7)
    b = generate_debiased_dataset(loaded, 20, seed=7)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.cs, b.cs)
    np.testing.assert_array_equal(a.ys_soft, b.ys_soft)


def test_checkpoint_is_plain_zip_of_npy(tiny_specs, tmp_path):
    # on-disk format stays inspectable with stock tooling
    gen_spec, disc_spec = tiny_specs
    cfg = TrainConfig(total_steps=1, batch_size=4, seed=0)
    state = init_train_state(cfg, gen_spec, disc_spec)
    path = tmp_path / "state.npz"
    state.save(path)
    with zipfile.ZipFile(path) as z:
        names = z.namelist()
    assert "__header__.npy" in names
    assert any(n.startswith("generator/") for n in names)
    assert any(n.startswith("discriminator/") for n in names)
    assert "rng/torch.npy" in names
