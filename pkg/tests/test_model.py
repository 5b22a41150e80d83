import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from modelkit import TINY, numeric_grads, random_cond, random_example, random_model, relative_error
from oracles import numeric_jacobian
from vani import text
from vani.model import (
    PARAM_BUDGET,
    ConditioningSet,
    ModelConfig,
    ModelError,
    TrainingDiverged,
    TrainingExample,
    VaniModel,
    count_params,
    load_checkpoint,
    mean_nll,
    regulate_durations,
    save_checkpoint,
    train,
    uniform_durations,
)
from vani.model import layers as L
from vani.model.data import build_examples, inventories
from vani.toy import toy_model_config

# -- configuration and bookkeeping -------------------------------------------------------


def test_default_param_count_is_within_budget():
    n = VaniModel(ModelConfig()).count_params()
    assert n == 4_007_259
    assert n < PARAM_BUDGET


def test_count_params_examples():
    assert count_params({}) == 0
    assert count_params({"a": np.zeros((3, 4)), "b": np.zeros(5)}) == 17


@pytest.mark.parametrize("kw", [{"dtype": "float16"}, {"enc_kernel": 4}, {"n_mels": 0}, {"temperature": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ModelError):
        ModelConfig(**kw)


def test_config_json_round_trip():
    import json

    cfg = replace(TINY, lr=3e-4)
    assert ModelConfig.from_dict(json.loads(cfg.to_json())) == cfg


# -- text side ----------------------------------------------------------------------------------


def test_encode_text_shape_and_determinism():
    model = VaniModel(TINY)
    phi = model.encode_text([0, 3, 1, 4])
    assert phi.shape == (TINY.d_txt, 4)
    np.testing.assert_array_equal(phi, VaniModel(TINY).encode_text([0, 3, 1, 4]))


@pytest.mark.parametrize("tokens", [[], [5], [-1]])
def test_encode_text_rejects_bad_tokens(tokens):
    with pytest.raises(ModelError):
        VaniModel(TINY).encode_text(tokens)


def test_regulate_durations_examples():
    phi = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(regulate_durations(phi, [2, 1, 3]), [[1, 1, 2, 3, 3, 3]])
    with pytest.raises(ModelError):
        regulate_durations(phi, [1, 0, 1])
    with pytest.raises(ModelError):
        regulate_durations(phi, [1, 1])
    with pytest.raises(ModelError):
        regulate_durations(phi, [1, 1, 1], n_frames=4)


@given(st.integers(1, 40), st.integers(1, 40))
def test_uniform_durations(n_tokens, extra):
    n_frames = n_tokens + extra
    d = uniform_durations(n_frames, n_tokens)
    assert d.sum() == n_frames and d.min() >= 1 and d.max() - d.min() <= 1


def test_uniform_durations_too_few_frames():
    with pytest.raises(ModelError):
        uniform_durations(2, 3)


def test_conditioning_set_validation():
    model = VaniModel(TINY)
    phi = model.encode_text([1, 2])
    a, s = model.embed(0, 0)
    with pytest.raises(ModelError):
        ConditioningSet(phi, a, s, [2, 2], np.zeros(3), np.zeros(4))
    with pytest.raises(ModelError):
        ConditioningSet(phi, a, s, [4], np.zeros(4), np.zeros(4))


def test_unknown_speaker_and_accent():
    model = VaniModel(TINY, speakers=("x", "y"), accents=("p", "q"))
    assert model.embed("q", "y")[1] is not None
    with pytest.raises(ModelError):
        model.embed("p", "z")
    with pytest.raises(ModelError):
        model.embed(2, 0)


# -- layers --------------------------------------------------------------------------------------


def test_softplus_and_sigmoid_are_stable():
    x = np.array([-800.0, 0.0, 800.0])
    np.testing.assert_allclose(L.softplus(x), [0.0, math.log(2.0), 800.0])
    np.testing.assert_allclose(L.sigmoid(x), [0.0, 0.5, 1.0])


def test_lstm_step_matches_sequence_forward(rng):
    layers = [(rng.standard_normal((12, 4)), rng.standard_normal((12, 3)), rng.standard_normal(12)),
              (rng.standard_normal((12, 3)), rng.standard_normal((12, 3)), rng.standard_normal(12))]
    x = rng.standard_normal((6, 4))
    seq, _ = L.lstm_stack_forward(x, layers)
    state = [(np.zeros(3), np.zeros(3)), (np.zeros(3), np.zeros(3))]
    for t in range(6):
        top, state = L.lstm_stack_step(x[t], layers, state)
        np.testing.assert_allclose(top, seq[t], atol=1e-12)


# -- flow ------------------------------------------------------------------------------------------


def test_fresh_model_flow_is_identity():
    model = VaniModel(replace(TINY, n_mels=3))
    cond = random_cond(model, 5)
    x = np.random.default_rng(0).standard_normal((3, 5))
    z, log_det = model.flow_forward(x, cond)
    np.testing.assert_array_equal(z, x)
    assert log_det == 0.0


def test_nll_of_zero_under_identity_flow():
    model = VaniModel(TINY)
    cond = random_cond(model, 4)
    assert model.nll(np.zeros((2, 4)), cond) == pytest.approx(0.5 * math.log(2 * math.pi), abs=1e-12)


@pytest.mark.parametrize("dtype, tol", [("float64", 1e-8), ("float32", 1e-4)])
def test_inverse_round_trip(dtype, tol):
    model = random_model(4, dtype=dtype, seed=3)
    cond = random_cond(model, 7, seed=3)
    x = np.random.default_rng(3).normal(-3.0, 2.0, (4, 7)).astype(dtype)
    z, _ = model.flow_forward(x, cond)
    assert np.max(np.abs(model.flow_inverse(z, cond) - x)) < tol


def test_flow_stats_reconstruct_latent():
    model = random_model(2, seed=5)
    cond = random_cond(model, 4, seed=5)
    x = np.random.default_rng(5).standard_normal((2, 4))
    z, log_det, stats = model.flow_forward(x, cond, return_stats=True)
    assert len(stats) == model.cfg.n_flow_steps
    assert log_det == pytest.approx(-sum(s.sum() for _, s in stats))


def test_log_det_matches_numeric_jacobian():
    model = random_model(2, seed=9)
    cond = random_cond(model, 4, seed=9)
    x = np.random.default_rng(9).standard_normal(8)
    jac = numeric_jacobian(lambda v: model.flow_forward(v.reshape(2, 4), cond)[0], x)
    _, expected = np.linalg.slogdet(jac)
    assert model.flow_forward(x.reshape(2, 4), cond)[1] == pytest.approx(expected, rel=1e-5)


def test_steps_alternate_direction():
    """Step 0 is causal in time; step 1 runs backwards and is anti-causal."""
    fwd = random_model(2, seed=1, n_flow_steps=1)
    rev = random_model(2, seed=1, n_flow_steps=2)
    for name in list(rev.params):
        if name.startswith("flow.0.head"):
            rev.params[name] = np.zeros_like(rev.params[name])
    cond = random_cond(fwd, 6, seed=1)
    x = np.random.default_rng(1).standard_normal((2, 6))
    bumped = x.copy()
    bumped[:, 3] += 0.5
    dz_fwd = np.abs(fwd.flow_forward(bumped, cond)[0] - fwd.flow_forward(x, cond)[0]).sum(axis=0)
    dz_rev = np.abs(rev.flow_forward(bumped, cond)[0] - rev.flow_forward(x, cond)[0]).sum(axis=0)
    assert np.all(dz_fwd[:3] == 0) and np.all(dz_fwd[3:] > 0)
    assert np.all(dz_rev[4:] == 0) and np.all(dz_rev[:4] > 0)


def test_flow_rejects_shape_mismatch():
    model = VaniModel(TINY)
    cond = random_cond(model, 4)
    with pytest.raises(ModelError):
        model.flow_forward(np.zeros((2, 5)), cond)
    with pytest.raises(ModelError):
        model.flow_forward(np.zeros((3, 4)), cond)


def test_non_finite_parameters_are_reported():
    model = VaniModel(TINY)
    model.params["flow.0.go"][0] = np.nan
    with pytest.raises(ModelError, match="flow.0.go"):
        model.flow_forward(np.zeros((2, 4)), random_cond(model, 4))


def test_gradients_match_finite_differences():
    model = random_model(2, seed=4)
    ex = random_example(model, 3, seed=4)
    _, grads = model.loss_and_grads(ex)
    num = numeric_grads(model, ex)
    for name in model.params:
        assert relative_error(grads[name], num[name]) < 1e-4, name


# -- synthesis -------------------------------------------------------------------------------------


def test_synthesis_at_zero_temperature_is_deterministic():
    model = random_model(3, seed=2)
    a = model.synthesize([1, 2, 3], 0, 1, temperature=0.0, seed=0)
    b = model.synthesize([1, 2, 3], 0, 1, temperature=0.0, seed=99)
    np.testing.assert_array_equal(a, b)
    assert a.shape[0] == 3 and a.shape[1] == model.conditioning([1, 2, 3], 0, 1).n_frames


def test_synthesis_seed_controls_sampling():
    model = random_model(3, seed=2)
    a = model.synthesize([1, 2], 0, 1, temperature=0.7, seed=0)
    assert not np.array_equal(a, model.synthesize([1, 2], 0, 1, temperature=0.7, seed=1))
    np.testing.assert_array_equal(a, model.synthesize([1, 2], 0, 1, temperature=0.7, seed=0))


def test_speaker_changes_output_after_training_step():
    model = VaniModel(replace(TINY, n_mels=3))
    ex = random_example(model, 6)
    train(model, [ex, replace_speaker(ex, 0)], steps=1, log_every=0)
    a = model.synthesize([1, 2], 0, 0, temperature=0.0)
    b = model.synthesize([1, 2], 0, 1, temperature=0.0)
    assert a.shape != b.shape or not np.allclose(a, b)


def replace_speaker(ex, speaker):
    return TrainingExample(ex.clip_id + "b", ex.tokens, speaker, ex.accent, ex.mel, ex.f0, ex.energy)


# -- checkpoints ---------------------------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    model = random_model(2, dtype="float32", seed=6)
    model.symbols, model.speakers, model.accents = ("<pad>", "a"), ("s1", "s2"), ("x", "y")
    save_checkpoint(tmp_path / "m.ckpt", model)
    back, opt = load_checkpoint(tmp_path / "m.ckpt")
    assert opt is None and back.cfg == model.cfg
    assert (back.symbols, back.speakers, back.accents) == (model.symbols, model.speakers, model.accents)
    for k, v in model.params.items():
        np.testing.assert_array_equal(back.params[k], v)


def test_checkpoint_errors(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", VaniModel(TINY))
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXXXX" + raw[7:])
    with pytest.raises(ModelError, match="not a model checkpoint"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(ModelError, match="trailing"):
        load_checkpoint(tmp_path / "long")


# -- training --------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def toy_setup(toy_features):
    m, feat_dir = toy_features
    table = text.build_symbol_table(m)
    speakers, accents = inventories(m)
    examples = build_examples(m, feat_dir, table, speakers, accents)
    return toy_model_config(table, speakers, accents), examples


def test_training_is_deterministic(toy_setup):
    cfg, examples = toy_setup
    a, b = VaniModel(cfg), VaniModel(cfg)
    ra = train(a, examples, steps=8, log_every=0)
    rb = train(b, examples, steps=8, log_every=0)
    assert ra.curve == rb.curve
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_resume_is_bit_identical(toy_setup, tmp_path):
    cfg, examples = toy_setup
    full = VaniModel(cfg)
    train(full, examples, steps=12, checkpoint_path=tmp_path / "full.ckpt", log_every=0)
    half = VaniModel(cfg)
    train(half, examples, steps=6, checkpoint_path=tmp_path / "half.ckpt", log_every=0)
    resumed, opt = load_checkpoint(tmp_path / "half.ckpt")
    assert opt["step"] == 6
    train(resumed, examples, steps=6, optimizer=opt, checkpoint_path=tmp_path / "resumed.ckpt", log_every=0)
    assert (tmp_path / "full.ckpt").read_bytes() == (tmp_path / "resumed.ckpt").read_bytes()


def test_training_reduces_nll(toy_setup, tmp_path):
    cfg, examples = toy_setup
    model = VaniModel(cfg)
    before = mean_nll(model, examples)
    res = train(model, examples, steps=40, curve_path=tmp_path / "curve.csv", log_every=0)
    assert mean_nll(model, examples) < before
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert lines[0] == "step,nll,dur_loss,f0_loss,energy_loss" and len(lines) == 41
    assert [r["step"] for r in res.curve] == list(range(40))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_checkpoints_and_raises(tmp_path):
    model = VaniModel(TINY)
    ex = random_example(model, 4)
    ex.mel[0, 0] = np.inf
    with pytest.raises(TrainingDiverged):
        train(model, [ex], steps=3, checkpoint_path=tmp_path / "last.ckpt", log_every=0)
    assert (tmp_path / "last.ckpt").exists()


def test_train_requires_examples():
    with pytest.raises(ValueError):
        train(VaniModel(TINY), [], steps=1)


def test_duration_predictor_learns_constant_durations():
    model = VaniModel(replace(TINY, lr=1e-2))
    rng = np.random.default_rng(0)
    examples = []
    for i in range(6):
        n_tok = int(rng.integers(2, 5))
        ex = random_example(model, 2 * n_tok, seed=i, n_tokens=n_tok)
        ex.durations = np.full(n_tok, 2)
        examples.append(ex)
    train(model, examples, steps=150, log_every=0)
    preds = [model.predict_raw_durations(model.encode_text(ex.tokens), *model.embed(ex.accent, ex.speaker))
             for ex in examples]
    assert 1.6 <= float(np.mean(np.concatenate(preds))) <= 2.4
