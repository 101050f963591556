import dataclasses
import json

import numpy as np
import pytest

from nnmrom import pipeline
from nnmrom.autoencoder import AeArchitecture, AeTrainConfig, AutoencoderModel, Normalizer
from nnmrom.dynamics import ChainParams, ForcingSpec, State, build_chain, generate_forcing, simulate
from nnmrom.errors import ConfigInconsistent, CorruptFile, SeriesTooShort, VersionMismatch
from nnmrom.pipeline import (
    PipelineConfig, RomArtifact, artifact_digest, dumps_artifact, evaluate, fit_rom, load_artifact,
    loads_artifact, rom_predict, save_artifact,
)
from nnmrom.regressor import FreeRunResult, RegressorConfig, RegressorTrainConfig, free_run_predict

SMALL = PipelineConfig(
    AeArchitecture(4, ((8, "linear"), (8, "tanh")), 2, ((8, "tanh"), (8, "linear"))),
    AeTrainConfig(epochs=100), 0.5,
    RegressorConfig(lag=20, hidden=16, n_forcing=2, n_latent=2, horizon=300),
    RegressorTrainConfig(epochs=30, window=50, streams=8, lr=1e-2),
)


def linear_dataset(duration=100.0, seed=0):
    system = build_chain(ChainParams(n_dof=4, k_nl=0.0, c_lin=1.0))
    forcing = generate_forcing(ForcingSpec(drive_dofs=(0, 3), cutoff_hz=2.5, duration=duration, seed=seed), 4)
    response, velocity = simulate(system, forcing, return_velocity=True)
    return system, forcing, response, velocity


@pytest.fixture(scope="module")
def fitted():
    system, forcing, response, velocity = linear_dataset()
    return fit_rom(forcing, response, SMALL), forcing, response


def test_linear_chain_end_to_end(fitted):
    artifact, forcing, response = fitted
    report = evaluate(artifact, forcing, response)
    assert not report.in_sample and report.start == 6000 and report.warmup == 40
    assert report.nmse.max() < 0.05
    assert report.bounded and report.failed_step is None


def test_full_dimensions():
    forcing = generate_forcing(ForcingSpec(duration=25.0, noise_std=19.0), 20)
    response = simulate(build_chain(ChainParams()), forcing)
    cfg = PipelineConfig(ae_train=AeTrainConfig(epochs=1),
                         regressor_train=RegressorTrainConfig(epochs=1, window=100, streams=2))
    artifact = fit_rom(forcing, response, cfg)
    assert artifact.autoencoder.architecture.bottleneck == 10
    assert artifact.regressor.lstm.n_input == 1202 and artifact.regressor.lstm.n_hidden == 64
    assert artifact.provenance["config_digest"] and artifact.provenance["data_digest"]


def test_latent_mismatch_rejected(fitted):
    artifact, forcing, response = fitted
    bad = dataclasses.replace(SMALL, regressor=dataclasses.replace(SMALL.regressor, n_latent=3))
    with pytest.raises(ConfigInconsistent):
        fit_rom(forcing, response, bad)
    with pytest.raises(ConfigInconsistent):
        fit_rom(forcing, response, bad, autoencoder=artifact.autoencoder)
    with pytest.raises(ConfigInconsistent):
        fit_rom(forcing.select([0]), response, SMALL)


def test_zero_horizon(fitted):
    artifact, forcing, response = fitted
    pred = rom_predict(artifact, forcing.values[:0], forcing.values[:40], response.values[:40], 0)
    assert pred.values.shape == (0, 4) and pred.series().n_steps == 0


def test_prediction_is_composition_of_components(fitted):
    artifact, forcing, response = fitted
    f, x = forcing.values, response.values
    pred = rom_predict(artifact, f[7000:7100], f[6960:7000], x[6960:7000], 100)
    latent_warm = artifact.autoencoder.encode_array(x[6960:7000])
    run = free_run_predict(artifact.regressor, f[7000:7100], f[6960:7000], latent_warm, 100)
    np.testing.assert_array_equal(pred.latent, run.values)
    np.testing.assert_array_equal(pred.values, artifact.autoencoder.decode_array(run.values))


def test_in_sample_flag_and_spans(fitted):
    artifact, forcing, response = fitted
    spans = artifact.provenance["training_spans"]
    assert tuple(spans["autoencoder"]) == (0, 5000) and tuple(spans["regressor"]) == (0, 6000)
    assert evaluate(artifact, forcing, response, horizon=100, start=5500).in_sample
    assert not evaluate(artifact, forcing, response, horizon=100, start=6000).in_sample
    with pytest.raises(SeriesTooShort):
        evaluate(artifact, forcing, response, horizon=5000)
    with pytest.raises(SeriesTooShort):
        evaluate(artifact, forcing, response, horizon=10, start=5)


def test_evaluation_files(fitted, tmp_path):
    artifact, forcing, response = fitted
    report = evaluate(artifact, forcing, response, horizon=50, out_dir=tmp_path)
    lines = (tmp_path / "latent_prediction.csv").read_text().splitlines()
    assert lines[0] == "t,y1_pred,y2_pred,y1_true,y2_true" and len(lines) == 51
    assert (tmp_path / "physical_prediction.csv").read_text().startswith("t,x1_pred,x2_pred,x3_pred,x4_pred,x1_true")
    assert (tmp_path / "overlay_x1.csv").read_text().splitlines()[0] == "t,x1_pred,x1_true"
    saved = json.loads((tmp_path / "report.json").read_text())
    assert len(saved["mse"]) == 4 and saved["in_sample"] is False
    assert set(report.files) >= {"latent", "physical", "overlay_x1", "report"}


def test_exact_latent_simulator_gives_near_zero_error():
    system, forcing, response, velocity = linear_dataset(40.0, seed=3)
    norm = Normalizer.fit(response.values[:2000])
    ae = AutoencoderModel.init(AeArchitecture(4, (), 4, ()), norm, 0)
    for layer in ae.layers:
        layer.weights[:] = np.eye(4)
        layer.bias[:] = 0.0
    cfg = dataclasses.replace(SMALL, architecture=ae.architecture,
                              regressor=dataclasses.replace(SMALL.regressor, n_latent=4))
    artifact = RomArtifact(ae, None, cfg, {"training_spans": {"autoencoder": [0, 2000], "regressor": [0, 2400]},
                                           "dt": forcing.dt})
    start = 2400

    def exact(art, ff, wf, wy, horizon):
        x0 = State(response.values[start - 1], velocity.values[start - 1])
        window = forcing.window(start - 1, start + horizon)
        sim = simulate(system, window, x0)
        return FreeRunResult(art.autoencoder.encode_array(sim.values[1:]))

    report = evaluate(artifact, forcing, response, horizon=1000, predictor=exact)
    assert report.start == start and not report.in_sample
    assert report.nmse.max() < 1e-3 and report.latent_nmse.max() < 1e-3


# ---------------------------------------------------------------- persistence and determinism

def test_round_trip_bit_identical(fitted, tmp_path):
    artifact, forcing, response = fitted
    path = save_artifact(artifact, tmp_path / "rom.bin")
    loaded = load_artifact(path)
    f, x = forcing.values, response.values
    a = rom_predict(artifact, f[7000:7300], f[6960:7000], x[6960:7000], 300)
    b = rom_predict(loaded, f[7000:7300], f[6960:7000], x[6960:7000], 300)
    np.testing.assert_array_equal(a.values, b.values)
    assert artifact_digest(loaded) == artifact_digest(artifact)
    assert loaded.provenance == json.loads(json.dumps(artifact.provenance))


def test_refit_reproduces_digest(fitted):
    artifact, forcing, response = fitted
    assert artifact_digest(fit_rom(forcing, response, SMALL)) == artifact_digest(artifact)


def test_corrupt_and_truncated(fitted):
    blob = dumps_artifact(fitted[0])
    with pytest.raises(CorruptFile):
        loads_artifact(blob[:-10])
    flipped = bytearray(blob)
    flipped[len(blob) // 2] ^= 0xFF
    with pytest.raises(CorruptFile):
        loads_artifact(bytes(flipped))
    with pytest.raises(CorruptFile):
        loads_artifact(b"garbage")


def test_newer_schema_rejected(fitted, monkeypatch):
    monkeypatch.setattr(pipeline, "SCHEMA_VERSION", 7)
    blob = dumps_artifact(fitted[0])
    monkeypatch.setattr(pipeline, "SCHEMA_VERSION", 1)
    with pytest.raises(VersionMismatch):
        loads_artifact(blob)


def test_older_schema_migrates(fitted, monkeypatch):
    artifact, forcing, response = fitted
    blob = dumps_artifact(artifact)
    monkeypatch.setattr(pipeline, "SCHEMA_VERSION", 2)
    monkeypatch.setitem(pipeline.MIGRATIONS, 1, lambda h: {**h, "schema": 2})
    loaded = loads_artifact(blob)
    assert "migrated from schema 1 to 2" in loaded.provenance["notes"]
    np.testing.assert_array_equal(loaded.regressor.lstm.weights, artifact.regressor.lstm.weights)
    monkeypatch.delitem(pipeline.MIGRATIONS, 1)
    with pytest.raises(VersionMismatch):
        loads_artifact(blob)


def test_config_dict_round_trip():
    cfg = PipelineConfig()
    assert PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
