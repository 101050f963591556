"""The ten acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line (printed in the terminal summary) before asserting.
The full-scale dataset and model are built once per module.
"""

import hashlib
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from nnmrom import cli
from nnmrom.autoencoder import (
    AeArchitecture, AeTrainConfig, AutoencoderModel, Normalizer, ae_loss_and_grads, ae_train,
    reconstruction_report,
)
from nnmrom.dynamics import (
    ChainParams, ForcingSpec, State, build_chain, calibrate_forcing, generate_forcing, hamiltonian,
    restoring_force_ratio, rk4_step, simulate,
)
from nnmrom.nn import DenseLayer, LstmCellParams, dense_backward, dense_forward, grad_check, lstm_bptt, lstm_step
from nnmrom.nn import lstm_step_backward
from nnmrom.nn.optim import flatten
from nnmrom.pipeline import PipelineConfig, evaluate, fit_rom, load_artifact, rom_predict, save_artifact
from nnmrom.regressor import free_run_predict, predict_teacher_forced
from nnmrom.series import MultiChannelSeries
from nnmrom.spectral import multicoherence

SEEDS = range(20)
# Fourth-order central differences: h large enough that roundoff cannot swamp small gradient entries.
FD = {"h": 1e-3, "order": 4}
BAND = (0.5, 8.0)


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_RESULTS.append((number, bool(ok), detail))
    assert ok, line


# ---------------------------------------------------------------- shared full-scale data

@pytest.fixture(scope="module")
def full_data():
    system = build_chain(ChainParams())
    spec = ForcingSpec()
    std = calibrate_forcing(system, spec, target_ratio=1.0, dof=9)
    forcing = generate_forcing(ForcingSpec(noise_std=std), 20)
    response = simulate(system, forcing)
    return {"system": system, "std": std, "forcing": forcing, "response": response}


@pytest.fixture(scope="module")
def full_rom(full_data):
    t = time.perf_counter()
    artifact = fit_rom(full_data["forcing"], full_data["response"], PipelineConfig())
    return artifact, time.perf_counter() - t


# ---------------------------------------------------------------- 1. integrator order

def _sdof_endpoint(dt, x0=0.1, t_end=1.0):
    system = build_chain(ChainParams(n_dof=1, grounded=(True, False)))
    state = State([x0], [0.0])
    zero = lambda _t: np.zeros(1)  # noqa: E731
    for _ in range(int(round(t_end / dt))):
        state = rk4_step(system, state, zero, dt)
    return state.displacement[0]


def test_criterion_1_integrator_order():
    t = time.perf_counter()
    dts = np.array([4e-3, 2e-3, 1e-3, 5e-4])
    reference = _sdof_endpoint(dts[-1] / 16)
    errors = np.abs([_sdof_endpoint(dt) - reference for dt in dts])
    slope = np.polyfit(np.log(dts), np.log(errors), 1)[0]
    elapsed = time.perf_counter() - t
    record(1, 3.8 <= slope <= 4.2 and elapsed < 5, f"convergence slope {slope:.3f} in {elapsed:.2f}s")


# ---------------------------------------------------------------- 2. energy

def test_criterion_2_energy_conservation():
    t = time.perf_counter()
    system = build_chain(ChainParams(c_lin=0.0))
    x0 = 0.1 * np.sin(np.pi * np.arange(1, 21) / 21)
    forcing = MultiChannelSeries(1e-3, np.zeros((10_001, 20)), tuple(f"f{k + 1}" for k in range(20)))
    x, v = simulate(system, forcing, State(x0, np.zeros(20)), return_velocity=True)
    energy = hamiltonian(system, x.values, v.values)
    drift = float(np.max(np.abs(energy - energy[0])) / energy[0])
    elapsed = time.perf_counter() - t
    record(2, drift < 1e-6 and elapsed < 10, f"max relative Hamiltonian drift {drift:.2e} in {elapsed:.2f}s")


# ---------------------------------------------------------------- 3. gradients

def _dense_check(seed):
    rng = np.random.default_rng(seed)
    layer = DenseLayer.init(4, 3, "tanh", rng)
    layer.bias[:] = rng.normal(0, 0.5, 3)
    x, target = rng.normal(size=(6, 4)), rng.normal(size=(6, 3))

    def loss():
        return float(np.mean((layer(x) - target) ** 2))

    out, cache = dense_forward(layer, x)
    grads, _ = dense_backward(layer, cache, 2 * (out - target) / out.size)
    return grad_check(layer.params(), loss, grads, **FD)


def _lstm_check(seed):
    rng = np.random.default_rng(seed)
    params = LstmCellParams.init(3, 4, rng)
    params.bias[:] += rng.normal(0, 0.3, params.bias.shape)
    x, h, c = rng.normal(size=(2, 3)), rng.normal(size=(2, 4)) * 0.5, rng.normal(size=(2, 4))
    wh, wc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def loss():
        h2, c2, _ = lstm_step(params, x, h, c)
        return float(np.sum(wh * h2) + np.sum(wc * c2))

    _, _, cache = lstm_step(params, x, h, c)
    grads, dx, dh, dc = lstm_step_backward(params, cache, wh, wc)
    return grad_check({**params.params(), "x": x, "h": h, "c": c}, loss, {**grads, "x": dx, "h": dh, "c": dc}, **FD)


def _ae_check(seed):
    rng = np.random.default_rng(seed)
    arch = AeArchitecture(5, ((4, "linear"), (4, "tanh")), 2, ((4, "tanh"), (4, "linear")))
    model = AutoencoderModel.init(arch, Normalizer(np.zeros(5), np.ones(5)), rng)
    for layer in model.layers:
        layer.bias[:] = rng.normal(0, 0.3, layer.bias.shape)
    z = rng.normal(size=(7, 5))
    _, grads = ae_loss_and_grads(model, z)
    return grad_check(model.params(), lambda: ae_loss_and_grads(model, z)[0], grads, **FD)


def _bptt_check(seed):
    rng = np.random.default_rng(seed)
    params = LstmCellParams.init(3, 4, rng)
    params.bias[:] += rng.normal(0, 0.3, params.bias.shape)
    readout = DenseLayer.init(4, 2, "linear", rng)
    xs, ys = rng.normal(size=(5, 2, 3)), rng.normal(size=(5, 2, 2))
    h0, c0 = rng.normal(size=(2, 2, 4)) * 0.5
    res = lstm_bptt(params, xs, h0, c0, ys, readout)
    live = flatten({"lstm": params.params(), "readout": readout.params()})
    return grad_check(live, lambda: lstm_bptt(params, xs, h0, c0, ys, readout).loss, flatten(res.grads), **FD)


def test_criterion_3_gradient_correctness():
    t = time.perf_counter()
    worst = {}
    for name, check in (("dense", _dense_check), ("lstm", _lstm_check), ("ae", _ae_check), ("bptt", _bptt_check)):
        worst[name] = max(check(seed).max_rel_error for seed in SEEDS)
    elapsed = time.perf_counter() - t
    ok = all(v < 1e-5 for v in worst.values()) and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    record(3, ok, f"max relative error over {len(SEEDS)} seeds (5-point stencil, h=1e-3): {detail}; {elapsed:.1f}s")


# ---------------------------------------------------------------- 4. linear subspace

def test_criterion_4_linear_subspace_autoencoder():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    basis = rng.normal(size=(20, 10))
    data = MultiChannelSeries(0.01, rng.normal(size=(20_000, 10)) @ basis.T)
    model = ae_train(data, cfg=AeTrainConfig(epochs=200))
    worst = reconstruction_report(model, data).nmse.max()
    elapsed = time.perf_counter() - t
    record(4, worst < 1e-3 and elapsed < 300, f"max reconstruction NMSE {worst:.2e} in {elapsed:.1f}s")


# ---------------------------------------------------------------- 5. full-scale autoencoder

def test_criterion_5_full_scale_autoencoder(full_data):
    response = full_data["response"]
    t = time.perf_counter()
    model = ae_train(response, AeArchitecture.standard(), 0.5, AeTrainConfig())
    elapsed = time.perf_counter() - t
    ratio = model.test_loss / model.train_loss
    test_half = response.window(response.n_steps // 2, response.n_steps)
    rep = reconstruction_report(model, test_half)
    corr = rep.latent_correlation
    offdiag = np.max(np.abs(corr - np.eye(len(corr))))
    ok = ratio < 1.5 and rep.nmse.max() < 0.05 and elapsed < 1800
    record(5, ok, f"test/train loss {ratio:.3f}, max test-half NMSE {rep.nmse.max():.4f} "
                  f"(DOF 1 {rep.nmse[0]:.4f}), latent max |corr| off-diagonal {offdiag:.2f}; {elapsed:.0f}s")


# ---------------------------------------------------------------- 6. coherence contrast

def test_criterion_6_coherence_contrast(full_data):
    forcing, response, system = full_data["forcing"], full_data["response"], full_data["system"]
    linear = simulate(system.linearized(), forcing)
    nl_means, lin_means, in_range = [], [], True
    for k in range(20):
        for target, sink in ((response, nl_means), (linear, lin_means)):
            est = multicoherence(forcing.values, target.values[:, k], forcing.fs)
            in_range &= bool(np.all((est.values >= 0) & (est.values <= 1)))
            sink.append(est.band_mean(*BAND))
    diff = float(np.mean(lin_means) - np.mean(nl_means))
    record(6, diff >= 0.05 and in_range,
           f"mean multicoherence {BAND[0]}-{BAND[1]} Hz: linear {np.mean(lin_means):.3f}, "
           f"nonlinear {np.mean(nl_means):.3f}, difference {diff:.3f}; values in [0,1]: {in_range}")


# ---------------------------------------------------------------- 7. nonlinearity strength

def test_criterion_7_nonlinearity_strength(full_data):
    ratio = restoring_force_ratio(full_data["system"], full_data["response"], 9)
    record(7, ratio >= 0.5, f"calibrated std {full_data['std']:.3f} N, RMS cubic/linear at DOF 10 = {ratio:.3f}")


# ---------------------------------------------------------------- 8. free-run quality

def test_criterion_8_free_run_quality(full_data, full_rom):
    artifact, fit_time = full_rom
    report = evaluate(artifact, full_data["forcing"], full_data["response"], horizon=1000)
    ok = report.bounded and report.early_wins >= 18 and not report.in_sample
    record(8, ok, f"window start {report.start}, bounded at 5x RMS: {report.bounded} "
                  f"(max |pred|/RMS {np.max(report.max_abs_ratio):.2f}), early-window wins {report.early_wins}/20; "
                  f"1000-step MSE DOF 1 {report.mse[0]:.4f}, DOF 10 {report.mse[9]:.4f} "
                  f"(reference 0.025 / 0.048, units and normalisation of the reference unstated); fit {fit_time:.0f}s")


def test_full_model_teacher_forcing_is_easier(full_data, full_rom):
    artifact, _ = full_rom
    f = full_data["forcing"].values
    y = artifact.autoencoder.encode_array(full_data["response"].values)
    start = 60_000
    one_step = predict_teacher_forced(artifact.regressor, f, y, start, start + 1000, warm=100)
    free = free_run_predict(artifact.regressor, f[start:start + 1000], f[start - 200:start], y[start - 200:start], 1000)
    truth = y[start:start + 1000]
    assert np.mean((one_step - truth) ** 2) < np.mean((free.values - truth) ** 2)


def test_full_model_long_free_run_finite(full_data, full_rom):
    artifact, _ = full_rom
    f = full_data["forcing"].values
    y = artifact.autoencoder.encode_array(full_data["response"].values)
    start = 60_000
    run = free_run_predict(artifact.regressor, f[start:start + 10_000], f[start - 200:start], y[start - 200:start],
                           10_000)
    assert run.finite


# ---------------------------------------------------------------- 9. determinism and persistence

def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_9_determinism_and_persistence(tmp_path, full_data, full_rom, monkeypatch):
    monkeypatch.delenv("NNMROM_SEED", raising=False)
    codes = [cli.main(["full-run", "--preset", "smoke", "--seed", "11", "--out-dir", str(tmp_path / run)])
             for run in ("a", "b")]
    same = codes == [0, 0] and _digest(tmp_path / "a" / "rom.bin") == _digest(tmp_path / "b" / "rom.bin")

    artifact, _ = full_rom
    path = save_artifact(artifact, tmp_path / "full.bin")
    loaded = load_artifact(path)
    f, x = full_data["forcing"].values, full_data["response"].values
    a = rom_predict(artifact, f[60_000:61_000], f[59_800:60_000], x[59_800:60_000], 1000)
    b = rom_predict(loaded, f[60_000:61_000], f[59_800:60_000], x[59_800:60_000], 1000)
    identical = a.values.tobytes() == b.values.tobytes()
    record(9, same and identical, f"repeat full-run artifact digests equal: {same}; "
                                  f"save/load predictions bit-identical: {identical}")


# ---------------------------------------------------------------- 10. smoke scale

def test_criterion_10_smoke_full_run(tmp_path, monkeypatch):
    monkeypatch.delenv("NNMROM_SEED", raising=False)
    t = time.perf_counter()
    code = cli.main(["full-run", "--preset", "smoke", "--out-dir", str(tmp_path / "smoke"), "--analyze"])
    elapsed = time.perf_counter() - t
    done = code == 0 and (tmp_path / "smoke" / "evaluation" / "report.json").exists() \
        and not (tmp_path / "smoke" / ".partial").exists()
    record(10, done and elapsed < 600, f"smoke full-run (100 s data) exit {code} in {elapsed:.1f}s")
