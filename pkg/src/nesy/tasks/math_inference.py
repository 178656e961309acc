"""Composite reasoning over two lists of six reals.

    label = prop_a(L1) and rel(L1, L2) and prop_b(L2)

prop1: sum(x) > 0          prop2: sum(|x|) > 0.5
rel1:  first elements share a sign
rel2:  last elements have opposite signs
"""

import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from nesy import constraints as C
from nesy import errors, neural
from nesy.lang import load
from nesy.provenance import SemiringSpec, TOPK_GRAD
from nesy.reasoner import Reasoner, query
from nesy.tasks import common

LENGTH = 6

DEFAULTS = dict(epochs=6, batch_size=16, lr=3e-3, train_size=3000, test_size=1000,
                semiring=SemiringSpec(TOPK_GRAD, None))

# Generic product composition: the answer holds iff all three concepts hold.
PROGRAM = """
rel pa().
rel pb().
rel r().
rel g().
nn(pa, 1)::pa().
nn(pb, 1)::pb().
nn(r, 1)::r().
g() :- pa(), r(), pb().
query g().
"""

PA, PB, R = C.Binary("pa", "pa"), C.Binary("pb", "pb"), C.Binary("r", "r")
COMPOSITE = C.andL(C.is_(PA), C.is_(R), C.is_(PB))


def prop1(xs):
    return bool(np.sum(xs) > 0)


def prop2(xs):
    return bool(np.sum(np.abs(xs)) > 0.5)


def rel1(a, b):
    return bool(np.sign(a[0]) == np.sign(b[0]))


def rel2(a, b):
    return bool(np.sign(a[-1]) == -np.sign(b[-1]))


PROPERTIES = {1: prop1, 2: prop2}
RELATIONS = {1: rel1, 2: rel2}


@dataclass
class MathSample:
    l1: np.ndarray
    l2: np.ndarray
    prop_a: int
    prop_b: int
    relation: int
    label: bool


def label_of(l1, l2, a, b, r):
    return PROPERTIES[a](l1) and RELATIONS[r](l1, l2) and PROPERTIES[b](l2)


def generate(seed, count):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        l1, l2 = rng.uniform(-1.0, 1.0, size=(2, LENGTH))
        a, b, r = (int(x) for x in rng.integers(1, 3, size=3))
        out.append(MathSample(l1, l2, a, b, r, label_of(l1, l2, a, b, r)))
    return out


_PROGRAM = None


def program():
    global _PROGRAM
    if _PROGRAM is None:
        _PROGRAM = load(PROGRAM)
    return _PROGRAM


def to_example(sample):
    pa_net, pb_net, r_net = f"prop{sample.prop_a}", f"prop{sample.prop_b}", f"rel{sample.relation}"
    inputs = {r_net: np.concatenate([sample.l1, sample.l2])[None, :]}
    if pa_net == pb_net:
        inputs[pa_net] = np.stack([sample.l1, sample.l2])
        slots = {"pa": (pa_net, 0), "pb": (pb_net, 1)}
    else:
        inputs[pa_net] = sample.l1[None, :]
        inputs[pb_net] = sample.l2[None, :]
        slots = {"pa": (pa_net, 0), "pb": (pb_net, 0)}
    slots["r"] = (r_net, 0)
    target = COMPOSITE if sample.label else C.notL(COMPOSITE)
    return common.Example(inputs, slots, program(), [common.Target("g", sample.label)],
                          [("global", target)], truth={"sample": sample, "label": sample.label})


def networks(seed):
    return {
        "prop1": neural.mlp("prop1", [LENGTH, 32, 2], seed=seed),
        "prop2": neural.mlp("prop2", [LENGTH, 32, 2], seed=seed + 1),
        "rel1": neural.mlp("rel1", [2 * LENGTH, 32, 2], seed=seed + 2),
        "rel2": neural.mlp("rel2", [2 * LENGTH, 32, 2], seed=seed + 3),
    }


def global_probability(nets, example, semiring):
    _, probs = common.forward(nets, example, train=False)
    ctx = Reasoner(example.program, semiring).run(probs)
    rows = query(ctx, "g")
    return rows[0].probability if rows else 0.0


def concept_accuracies(nets, samples):
    """Head accuracy against recomputed ground truth, on every list / list pair."""
    lists = np.concatenate([np.stack([s.l1 for s in samples]), np.stack([s.l2 for s in samples])])
    pairs = np.stack([np.concatenate([s.l1, s.l2]) for s in samples])
    prop_hits = 0
    for k, fn in PROPERTIES.items():
        pred = nets[f"prop{k}"].predict(lists).argmax(axis=1) == 1
        prop_hits += int(np.sum(pred == np.array([fn(x) for x in lists])))
    rel_hits = 0
    for k, fn in RELATIONS.items():
        pred = nets[f"rel{k}"].predict(pairs).argmax(axis=1) == 1
        rel_hits += int(np.sum(pred == np.array([fn(s.l1, s.l2) for s in samples])))
    return prop_hits / (2 * len(lists)), rel_hits / (2 * len(samples))


def load_or_generate(config):
    path = os.path.join(config.data_dir, "samples.jsonl") if config.data_dir else None
    if path and os.path.exists(path):
        data = read_samples(path)
    else:
        data = generate(config.seed, config.train_size + config.test_size)
    return data[:config.train_size], data[config.train_size:config.train_size + config.test_size]


def datasets(config):
    train_data, test_data = load_or_generate(config)
    return [to_example(s) for s in train_data], [to_example(s) for s in test_data]


def evaluate(nets, test, config):
    outputs, test_ms = common.timed_eval(lambda ex: global_probability(nets, ex, config.semiring), test)
    hits = sum((p > 0.5) == ex.truth["label"] for ex, p in zip(test, outputs))
    prop_acc, rel_acc = concept_accuracies(nets, [ex.truth["sample"] for ex in test])
    return {"global_acc": hits / len(test), "property_acc": prop_acc, "relation_acc": rel_acc}, test_ms


def sample_record(s: MathSample):
    return {"l1": s.l1.tolist(), "l2": s.l2.tolist(), "prop_a": s.prop_a, "prop_b": s.prop_b,
            "relation": s.relation, "label": s.label}


def read_samples(path):
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                r = json.loads(line)
                out.append(MathSample(np.array(r["l1"]), np.array(r["l2"]), r["prop_a"], r["prop_b"],
                                      r["relation"], r["label"]))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise errors.DataError(f"cannot read {path}: {exc}") from exc
    return out


def run(config) -> common.TaskResult:
    return common.run_task(sys.modules[__name__], config)
