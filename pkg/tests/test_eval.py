import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from minipali.eval import (CLASSIFY_CLASSES, ZS_TEMPLATE, CiderConfig, DegenerateCorpus, EvalRecord, MixedTasks,
                           TextModel, cider_per_candidate, cider_score, evaluate, exact_match_accuracy,
                           load_eval_set, make_eval_set, normalize_answer, write_eval_set, zero_shot_classify)
from minipali.model import EOS_ID, init_params, toy_config
from minipali.model.generate import encode_inputs, next_token_logprobs
from minipali.tasks import default_tokenizer

TOK = default_tokenizer()


@pytest.fixture(scope="module")
def model():
    cfg = toy_config(vocab_size=TOK.vocab_size, d_model=32, layers=1)
    return TextModel(cfg, init_params(cfg, 3))


@pytest.fixture(scope="module")
def image(model):
    return np.asarray(make_eval_set("classify", 1, seed=5)[0].image(model.resolution).data)


# -- answer normalization / exact match --------------------------------------------------

def test_normalize_examples():
    assert normalize_answer("  Two ") == "two"
    assert normalize_answer("cube.") == "cube"
    assert normalize_answer("A   red\tCube. ") == "a red cube"


@given(st.text())
@settings(max_examples=300, deadline=None)
def test_normalize_idempotent(s):
    assert normalize_answer(normalize_answer(s)) == normalize_answer(s)


def test_exact_match():
    gold = [["two"], ["red"], ["cube"], ["3"]]
    assert exact_match_accuracy(["two", "red", "cube", "3"], gold) == 1.0
    assert exact_match_accuracy(["x", "y", "z", "w"], gold) == 0.0
    assert exact_match_accuracy(["two", "red", "cube", "4"], gold) == 0.75
    assert exact_match_accuracy([" TWO.", "Red ", "cube", "3"], gold) == 1.0
    with pytest.raises(ValueError):
        exact_match_accuracy(["two"], gold)


# -- CIDEr-D -----------------------------------------------------------------------------

def oracle_cider(cands, refs, n_max=4, sigma=6.0):
    """Dense-vector CIDEr-D written from the metric's definition."""
    grams = lambda s, n: Counter(tuple(s.split()[i:i + n]) for i in range(len(s.split()) - n + 1))
    N = len(refs)
    total = 0.0
    for c, rs in zip(cands, refs):
        per_ref = []
        for r in rs:
            acc = 0.0
            for n in range(1, n_max + 1):
                df = Counter(g for rr in refs for g in set().union(*(grams(x, n) for x in rr)))
                vocab = sorted(set(grams(c, n)) | set(grams(r, n)))
                idf = np.array([math.log(N) - math.log(max(1, df[g])) for g in vocab])
                vc = np.array([grams(c, n)[g] for g in vocab]) * idf
                vr = np.array([grams(r, n)[g] for g in vocab]) * idf
                nc, nr = np.linalg.norm(vc), np.linalg.norm(vr)
                num = float(np.minimum(vc, vr) @ vr)
                acc += num / (nc * nr) if nc and nr else num
            delta = len(c.split()) - len(r.split())
            per_ref.append(acc / n_max * math.exp(-delta ** 2 / (2 * sigma ** 2)))
        total += 10 * np.mean(per_ref)
    return total / len(cands)


def test_cider_disjoint_two_documents_is_exactly_ten():
    refs = [["a red cube near the ring"], ["blue ball with yellow sign"]]
    cands = ["a red cube near the ring", "blue ball with yellow sign"]
    assert cider_score(cands, refs) == 10.0
    assert list(cider_per_candidate(cands, refs)) == [10.0, 10.0]


def test_cider_zero_overlap():
    refs = [["a red cube"], ["blue ball"]]
    assert cider_per_candidate(["green kite", "blue ball"], refs)[0] == 0.0


def test_cider_matches_dense_oracle():
    rng = np.random.default_rng(0)
    words = "a red blue cube ball ring near and with sign of photo".split()
    refs = [[" ".join(rng.choice(words, rng.integers(3, 9))) for _ in range(rng.integers(1, 4))] for _ in range(12)]
    cands = [" ".join(rng.choice(words, rng.integers(2, 10))) for _ in range(12)]
    assert cider_score(cands, refs) == pytest.approx(oracle_cider(cands, refs), rel=1e-12)


def test_cider_permutation_invariance():
    refs = [["a red cube", "the red cube"], ["blue ball and ring"], ["photo of kite"]]
    cands = ["a red cube", "blue ball", "photo of a kite"]
    s = cider_score(cands, refs)
    assert cider_score(cands, [r[::-1] for r in refs]) == pytest.approx(s, rel=1e-12)
    order = [2, 0, 1]
    assert cider_score([cands[i] for i in order], [refs[i] for i in order]) == pytest.approx(s, rel=1e-12)


def test_cider_references_beat_corrupted_candidates():
    refs = [[r.gold[0]] for r in make_eval_set("caption", 60, seed=1)]
    clean = cider_score([r[0] for r in refs], refs)
    rng = np.random.default_rng(1)
    for _ in range(5):
        corrupted = [" ".join(rng.permutation(r[0].split())) for r in refs]
        assert clean >= cider_score(corrupted, refs)
    assert clean >= cider_score([refs[(i + 1) % len(refs)][0] for i in range(len(refs))], refs)


def test_cider_degenerate_corpus():
    with pytest.raises(DegenerateCorpus, match="IDF"):
        cider_score(["a cube", "a cube"], [["a cube"], ["a cube"]])


def test_cider_config_validation():
    with pytest.raises(ValueError):
        CiderConfig(max_n=0)
    with pytest.raises(ValueError):
        CiderConfig(sigma=0)


# -- zero-shot classification ------------------------------------------------------------

def test_zero_shot_single_class(model, image):
    assert zero_shot_classify(model, image, ["cube"])[0][0] == "cube"


def test_zero_shot_uniform_logits_tie_break(model, image):
    names = ["ring", "ball", "cube", "cone"]
    assert all(len(TOK.tokenize(n)) == 1 for n in names)
    ranking = zero_shot_classify(model, image, names, transform=np.zeros_like)
    assert [n for n, _ in ranking] == sorted(names)
    assert len({s for _, s in ranking}) == 1


def test_zero_shot_shift_invariance(model, image):
    names = list(CLASSIFY_CLASSES)
    base = zero_shot_classify(model, image, names)
    shift = np.random.default_rng(0).normal(size=(len(names), 2, 1)) * 50
    shifted = zero_shot_classify(model, image, names, transform=lambda lg: lg + shift)
    assert [n for n, _ in shifted] == [n for n, _ in base]
    np.testing.assert_allclose([s for _, s in shifted], [s for _, s in base], rtol=0, atol=1e-9)


def test_zero_shot_matches_brute_force(model, image):
    names = list(CLASSIFY_CLASSES)
    states, valid = encode_inputs(model.cfg, model._p, image, [TOK.tokenize(ZS_TEMPLATE)])
    first = next_token_logprobs(model.cfg, model._p, states, valid, np.zeros((1, 0), dtype=np.int64))[0]
    brute = {}
    for n in names:
        (tid,) = TOK.tokenize(n)
        second = next_token_logprobs(model.cfg, model._p, states, valid, np.array([[tid]]))[0]
        brute[n] = first[tid] + second[EOS_ID]
    ranking = zero_shot_classify(model, image, names)
    assert ranking[0][0] == max(names, key=lambda n: (brute[n], [-ord(c) for c in n]))
    for n, s in ranking:
        assert s == pytest.approx(brute[n], abs=1e-9)


def test_zero_shot_duplicates(model, image):
    with pytest.raises(ValueError, match="duplicate"):
        zero_shot_classify(model, image, ["cube", "ball", "cube"])
    with pytest.raises(ValueError):
        zero_shot_classify(model, image, [])


# -- datasets and evaluate ---------------------------------------------------------------

class Oracle:
    """Answers every record with its first gold string, keyed by image bytes."""

    resolution = 56

    def __init__(self, records):
        self.by_image = {np.asarray(r.image(56).data).tobytes(): r.gold[0] for r in records}

    def generate_text(self, image, prompt, mode="greedy", k=1, max_len=None):
        return self.by_image[np.asarray(image).tobytes()]

    def score_texts(self, image, prompt, candidates, transform=None):
        gold = self.by_image[np.asarray(image).tobytes()]
        return np.array([0.0 if c == gold else -1.0 for c in candidates])


def test_eval_records_validate():
    with pytest.raises(ValueError):
        EvalRecord("x", "scene:1", "q", (), "vqa")
    with pytest.raises(ValueError):
        EvalRecord("x", "scene:1", "q", ("",), "vqa")
    with pytest.raises(ValueError):
        EvalRecord("x", "scene:1", "q", ("a",), "detection")


def test_eval_set_round_trip_and_determinism(tmp_path):
    recs = make_eval_set("vqa", 10, seed=2)
    assert recs == make_eval_set("vqa", 10, seed=2)
    assert load_eval_set(write_eval_set(recs, tmp_path / "vqa.jsonl")) == recs
    cls = make_eval_set("classify", 16)
    assert Counter(r.gold[0] for r in cls) == {c: 2 for c in CLASSIFY_CLASSES}
    assert all(len(r.scene.objects) == 1 and r.scene.objects[0].cls == r.gold[0] for r in cls)


@pytest.mark.parametrize("task", ["vqa", "caption", "classify"])
def test_evaluate_oracle(task):
    recs = make_eval_set(task, 16, seed=3)
    res = evaluate(Oracle(recs), recs, task)
    assert res.metrics["value"] == (cider_score([r.gold[0] for r in recs], [r.gold for r in recs]) * 100
                                    if task == "caption" else 1.0)
    assert all(p["correct"] for p in res.predictions)
    assert {"task", "metric_name", "value", "n_records", "decode_mode", "seed"} <= set(res.metrics)
    assert set(res.predictions[0]) >= {"id", "prediction", "gold", "correct"}


def test_evaluate_classify_schema(model):
    recs = make_eval_set("classify", 8)
    m = evaluate(model, recs).metrics
    assert m["n_classes"] == 8 and 0 <= m["top1"] <= m["top5"] <= 1
    assert m["value"] == m["top1"]


def test_evaluate_mixed_tasks():
    recs = make_eval_set("vqa", 2) + make_eval_set("caption", 2)
    with pytest.raises(MixedTasks):
        evaluate(Oracle(recs), recs)


def test_evaluate_deterministic(model, tmp_path):
    recs = make_eval_set("vqa", 4, seed=4)
    a = evaluate(model, recs, max_len=6).write(tmp_path / "a")
    b = evaluate(model, recs, max_len=6).write(tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_evaluate_beam_one_is_greedy(model):
    recs = make_eval_set("caption", 3, seed=4)
    g = evaluate(model, recs, max_len=6)
    b = evaluate(model, recs, mode="beam", beam=1, max_len=6)
    assert g.predictions == b.predictions and g.metrics == b.metrics


def test_text_model_accepts_tensor_images():
    cfg = toy_config(vocab_size=TOK.vocab_size, dtype="float32")
    model = TextModel(cfg, init_params(cfg, 0))
    rec = make_eval_set("classify", 1)[0]
    img = rec.image(cfg.vit.image_resolution)
    assert model.generate_text(img, "caption", max_len=3) == model.generate_text(np.asarray(img.data), "caption", max_len=3)
    assert np.array_equal(model.score_texts(img, "x", ["cube"]), model.score_texts(np.asarray(img.data), "x", ["cube"]))
