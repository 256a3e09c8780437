import math

import numpy as np
import pytest

from minipali.model import init_params, load_checkpoint, toy_config
from minipali.tasks import (TASKS, CorpusConfig, MixtureSpec, build_corpus, default_tokenizer, expand,
                            random_scene, sample_mixture)
from minipali.training import (FINETUNE_PRESETS, AdafactorState, ExampleSampler, MetricsLog, PhaseConfig,
                               ResolutionMismatch, Schedule, SoupError, adafactor_init, adafactor_update,
                               finetune, get_preset, lr_at_step, make_batch, run_pretraining, soup,
                               soup_checkpoints, train_step)
from minipali.training.loop import CorpusSampler, loss_and_grads

TOK = default_tokenizer()


@pytest.fixture(scope="module")
def cfg():
    return toy_config(vocab_size=TOK.vocab_size, d_model=32, layers=1)


@pytest.fixture(scope="module")
def examples():
    out = []
    for s in range(40):
        out += expand(random_scene(s), TASKS, 56)
    return out


# -- schedules ------------------------------------------------------------------------

def test_schedule_examples():
    s = Schedule("warmup_inv_sqrt", 1000, 0.01)
    assert lr_at_step(s, 0) == 0
    assert lr_at_step(s, 1000) == pytest.approx(0.01, abs=0)
    assert lr_at_step(s, 4000) == pytest.approx(0.005, rel=1e-15)
    assert lr_at_step(s, 500) == pytest.approx(0.005, rel=1e-15)


def test_schedule_continuity_and_nonnegativity():
    for w in (1000, 2000, 5000):
        s = Schedule("warmup_inv_sqrt", w, 0.3)
        assert abs(lr_at_step(s, w) - lr_at_step(s, w + 1)) < 0.3 * 1e-3
    lin = Schedule("linear_to_zero", 100, 1.0, 1000)
    lrs = [lr_at_step(lin, k) for k in range(0, 1200)]
    assert min(lrs) >= 0 and lrs[100] == 1.0 and lrs[1000] == 0 and lrs[1150] == 0
    assert abs(lrs[100] - lrs[101]) < 1e-2


def test_linear_without_warmup_matches_closed_form():
    s = Schedule("linear_to_zero", 0, 3e-5, 200)
    for k in (0, 1, 50, 199, 200, 250):
        assert lr_at_step(s, k) == pytest.approx(3e-5 * max(0.0, 1 - k / 200), abs=1e-20)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule("cosine")
    with pytest.raises(ValueError):
        Schedule("linear_to_zero", 10, 1.0, None)
    with pytest.raises(ValueError):
        lr_at_step(Schedule(), -1)


# -- adafactor -------------------------------------------------------------------------

def test_zero_gradient_leaves_params_and_decays_accumulators():
    rng = np.random.default_rng(0)
    params = {"w": rng.normal(size=(3, 4)), "b": rng.normal(size=4)}
    grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
    p1, s1 = adafactor_update(adafactor_init(params), params, grads, 0.1)
    p2, s2 = adafactor_update(s1, p1, {k: np.zeros_like(v) for k, v in params.items()}, 0.1)
    for k in params:
        assert np.array_equal(p2[k], p1[k])
        for slot in s1.slots[k]:
            assert np.array_equal(s2.slots[k][slot], 0.8 * s1.slots[k][slot])


def scalar_oracle(grads, lr, decay=0.8, eps=1e-30):
    x, v, xs = 0.0, 0.0, []
    for g in grads:
        v = decay * v + (1 - decay) * g * g
        u = g / math.sqrt(v + eps)
        x -= lr * u / max(1.0, abs(u))
        xs.append(x)
    return xs


def test_scalar_matches_hand_written_oracle_for_1000_steps():
    rng = np.random.default_rng(1)
    grads = rng.normal(size=1000) * np.exp(rng.normal(size=1000))
    expected = scalar_oracle(grads, 0.01)
    params, state = {"s": np.array(0.0)}, AdafactorState()
    for g, want in zip(grads, expected):
        params, state = adafactor_update(state, params, {"s": np.array(g)}, 0.01)
        assert abs(float(params["s"]) - want) <= 1e-12


def test_first_step_with_constant_gradient_is_clipped_sign():
    params = {"v": np.zeros(5)}
    g = np.array([0.5, -2.0, 3.0, -1e-3, 7.0])
    p, _ = adafactor_update(adafactor_init(params), params, {"v": g}, 0.1)
    np.testing.assert_allclose(p["v"], -0.1 * np.sign(g), rtol=1e-12)
    assert np.sqrt(np.mean((p["v"] / 0.1) ** 2)) <= 1 + 1e-12


def test_factored_second_moment_oracle():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(4, 6))
    g = rng.normal(size=(4, 6))
    p, s = adafactor_update(adafactor_init({"w": w}), {"w": w}, {"w": g}, 1e-3)
    r, c = 0.2 * (g * g).mean(1), 0.2 * (g * g).mean(0)
    v = np.outer(r, c) / r.mean()
    u = g / np.sqrt(v + 1e-30)
    u /= max(1.0, np.sqrt((u * u).mean()))
    np.testing.assert_allclose(p["w"], w - 1e-3 * u, rtol=1e-13)
    assert s.slots["w"]["r"].shape == (4,) and s.slots["w"]["c"].shape == (6,)
    assert (s.slots["w"]["r"] >= 0).all() and (s.slots["w"]["c"] >= 0).all()


def test_adafactor_untouched_params_and_shape_errors():
    params = {"a": np.ones(3), "frozen": np.ones(2)}
    p, _ = adafactor_update(AdafactorState(), params, {"a": np.ones(3)}, 0.1)
    assert p["frozen"] is params["frozen"]
    with pytest.raises(ValueError):
        adafactor_update(AdafactorState(), params, {"a": np.ones(4)}, 0.1)


def test_adafactor_state_flat_round_trip():
    params = {"w": np.ones((2, 3)), "b": np.ones(3)}
    _, s = adafactor_update(adafactor_init(params), params, {"w": np.ones((2, 3)), "b": np.ones(3)}, 0.1)
    back = AdafactorState.from_flat(s.flat())
    assert back.step == 1
    for k in s.slots:
        for slot in s.slots[k]:
            assert np.array_equal(back.slots[k][slot], s.slots[k][slot])


# -- train_step ---------------------------------------------------------------------------

def phase(res=56, frozen=(), steps=10, lr=1e-2, warmup=5, batch=4):
    return PhaseConfig(res, frozen, MixtureSpec({"cap": 1}), steps, batch, Schedule("warmup_inv_sqrt", warmup, lr))


def test_frozen_vit_is_bit_identical(cfg, examples):
    params = init_params(cfg, 0)
    before = {k: v.tobytes() for k, v in params.items()}
    ph = phase(frozen=("vit.",))
    state = AdafactorState()
    sampler = ExampleSampler(examples, 56, 0)
    for _ in range(20):
        params, state, loss = train_step(cfg, params, sampler(4), ph, state)
    assert all(params[k].tobytes() == before[k] for k in params if k.startswith("vit."))
    assert any(params[k].tobytes() != before[k] for k in params if k.startswith("encdec."))
    assert params["projector.w"].tobytes() != before["projector.w"]


def test_unfrozen_vit_changes_in_one_step(cfg, examples):
    params = init_params(cfg, 0)
    new, _, _ = train_step(cfg, params, make_batch(examples[:4]), phase(), AdafactorState())
    assert any(not np.array_equal(new[k], params[k]) for k in params if k.startswith("vit."))


def test_resolution_mismatch_raises(cfg, examples):
    batch = make_batch([ex.with_resolution(112) for ex in examples[:2]])
    with pytest.raises(ResolutionMismatch):
        train_step(cfg, init_params(cfg, 0), batch, phase(), AdafactorState())


def test_loss_is_mean_over_non_pad_tokens(cfg, examples):
    from minipali.model import bind, forward_logits
    params = init_params(cfg, 0)
    batch = make_batch(examples[:3])
    loss, _, _ = loss_and_grads(cfg, params, batch)
    logits = forward_logits(cfg, bind(params), batch.images, batch.prompts, batch.targets).data
    m = logits.max(-1, keepdims=True)
    lp = logits - m - np.log(np.exp(logits - m).sum(-1, keepdims=True))
    keep = batch.targets != 0
    nll = -np.take_along_axis(lp, batch.targets[..., None], -1)[..., 0]
    assert loss == pytest.approx(nll[keep].mean(), rel=1e-12)


def test_overfit_fixed_batch(cfg, examples):
    params = init_params(cfg, 1)
    batch = make_batch(examples[:32:4])  # 8 examples
    ph = phase(steps=200, lr=1e-2, warmup=10, batch=8)
    state, losses = AdafactorState(), []
    for _ in range(200):
        params, state, loss = train_step(cfg, params, batch, ph, state)
        losses.append(loss)
    assert losses[-1] < 0.1 * losses[0]
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_metrics_log_records(tmp_path, cfg, examples):
    from minipali.training import run_phase
    log = MetricsLog(tmp_path / "m.jsonl")
    run_phase(cfg, init_params(cfg, 0), phase(steps=3), ExampleSampler(examples, 56, 0), log=log)
    lines = (tmp_path / "m.jsonl").read_text().splitlines()
    assert len(lines) == 3
    import json
    rec = json.loads(lines[-1])
    assert set(rec) == {"step", "lr", "loss", "tokens_seen", "phase"} and rec["step"] == 3


# -- pre-training ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    return build_corpus(CorpusConfig(n_scenes=120, seed=3, keep_fraction=0.25))


def test_two_phase_pretraining(tmp_path, cfg, corpus):
    p1 = PhaseConfig(56, ("vit.",), steps=6, batch_size=4, schedule=Schedule("warmup_inv_sqrt", 2, 1e-2))
    p2 = PhaseConfig(112, (), MixtureSpec({"ocr": 1, "cap": 1, "vqa": 1}), 3, 4,
                     Schedule("warmup_inv_sqrt", 1, 1e-2), "phase2")
    init = init_params(cfg, 0)
    c1, c2 = run_pretraining(cfg, init, p1, p2, corpus, seed=0, out_dir=tmp_path)
    l1, l2 = load_checkpoint(tmp_path / "phase1.ckpt"), load_checkpoint(tmp_path / "phase2.ckpt")
    assert all(np.array_equal(l1.params[k], init[k]) for k in init if k.startswith("vit."))
    assert l1.params["vit.pos"].shape == (4, 4, 64) and l2.params["vit.pos"].shape == (8, 8, 64)
    assert l2.config.vit.image_resolution == 112
    changed = [k for k in init if k.startswith("vit.") and k != "vit.pos"
               and not np.array_equal(l1.params[k], l2.params[k])]
    assert changed
    with pytest.raises(ValueError):
        run_pretraining(cfg, init, p2, p1, corpus)


def test_pretraining_is_deterministic(tmp_path, cfg, corpus):
    p1 = PhaseConfig(56, ("vit.",), steps=3, batch_size=3, schedule=Schedule("warmup_inv_sqrt", 2, 1e-2))
    p2 = PhaseConfig(112, (), MixtureSpec({"ocr": 1, "cap": 1, "vqa": 1}), 2, 3,
                     Schedule("warmup_inv_sqrt", 1, 1e-2), "phase2")
    run_pretraining(cfg, init_params(cfg, 0), p1, p2, corpus, 5, tmp_path / "a")
    run_pretraining(cfg, init_params(cfg, 0), p1, p2, corpus, 5, tmp_path / "b")
    for name in ("phase1.ckpt", "phase2.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_phase2_mixture_is_uniform(corpus):
    sampler = CorpusSampler(corpus, MixtureSpec({"ocr": 1, "cap": 1, "vqa": 1}), 56, 0)
    draws = sample_mixture(sampler.mixture, np.random.default_rng(0), size=10_000)
    for t in ("ocr", "cap", "vqa"):
        assert abs((draws == t).mean() - 1 / 3) < 0.02


def test_phase_config_round_trip():
    p = PhaseConfig(112, ("vit.",), MixtureSpec({"ocr": 1}), 5, 2, Schedule("linear_to_zero", 1, 0.1, 5), "x")
    assert PhaseConfig.from_dict(p.to_dict()) == p


# -- souping --------------------------------------------------------------------------------

def test_soup_algebra():
    rng = np.random.default_rng(0)
    x = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    y = {"a": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    assert all(np.array_equal(soup([x, x])[k], x[k]) for k in x)
    assert all(np.array_equal(soup([x, y])[k], soup([y, x])[k]) for k in x)
    z = soup([{k: np.zeros_like(v) for k, v in x.items()}, {k: np.full_like(v, 2.0) for k, v in x.items()}])
    assert all((v == 1.0).all() for v in z.values())


def test_soup_mismatch_names_entry():
    x = {"a": np.zeros(2), "b": np.zeros(3)}
    with pytest.raises(SoupError, match="'b'"):
        soup([x, {"a": np.zeros(2), "b": np.zeros(4)}])
    with pytest.raises(SoupError, match="'c'"):
        soup([x, {"a": np.zeros(2), "c": np.zeros(3)}])
    with pytest.raises(SoupError):
        soup([x])


def test_soup_checkpoints_fresh_optimizer(cfg):
    from minipali.model import Checkpoint
    a = Checkpoint(cfg, init_params(cfg, 0), 3, {"x/v": np.ones(2)})
    b = Checkpoint(cfg, init_params(cfg, 1), 5, {"x/v": np.ones(2)})
    s = soup_checkpoints([a, b])
    assert s.opt_state == {} and s.step == 5


# -- fine-tuning ------------------------------------------------------------------------------

def test_presets():
    p = get_preset("coco-like")
    assert (p.peak_lr, p.dropout, p.schedule_kind, p.steps) == (3e-5, 0.1, "linear_to_zero", 20_000)
    assert p.resolve(steps_divisor=100).steps == 200
    assert FINETUNE_PRESETS["vqa-like"].peak_lr == 1e-4
    with pytest.raises(KeyError, match="coco-like"):
        get_preset("imagenet")


def test_finetune_runs_with_dropout_and_eval_is_deterministic(cfg, examples):
    from minipali.model import Checkpoint, bind, forward_logits
    ck = Checkpoint(cfg, init_params(cfg, 0))
    out = finetune(ck, examples[:16], "coco-like", steps_divisor=5000, batch_size=4, peak_lr=1e-3)
    assert out.config.dropout == 0.1 and out.step == 4
    assert any(not np.array_equal(out.params[k], ck.params[k]) for k in ck.params)
    batch = make_batch(examples[:2])
    runs = [forward_logits(out.config, bind(out.params), batch.images, batch.prompts, batch.targets).data
            for _ in range(2)]
    assert np.array_equal(runs[0], runs[1])
