"""Toy entity/relation task: two sentence-level constraints over six embeddings.

Each sample holds three person-slot and three location-slot embeddings.
Hidden booleans say whether person i is real and whether they work in
location i; the observed labels are

    constraint1 = P1 & W1 & P2 & W2
    constraint2 = (P2 & W2) | (P3 & W3)
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

DIM = 16
SIGMA = 1.0
SLOTS = 3
CONCEPT_RATE = 0.7

DEFAULTS = dict(epochs=4, batch_size=16, lr=3e-3, train_size=1000, test_size=500,
                semiring=SemiringSpec(TOPK_GRAD, None))

PROGRAM = "\n".join(
    ["rel person(int).", "rel works(int).", "rel c1().", "rel c2()."]
    + [f"nn(person_{i}, 1)::person({i})." for i in range(SLOTS)]
    + [f"nn(works_{i}, 1)::works({i})." for i in range(SLOTS)]
    + ["c1() :- person(0), works(0), person(1), works(1).",
       "c2() :- person(1), works(1).",
       "c2() :- person(2), works(2).",
       "query c1().",
       "query c2()."]
) + "\n"

PERSON = [C.Binary(f"person_{i}", f"person_{i}") for i in range(SLOTS)]
WORKS = [C.Binary(f"works_{i}", f"works_{i}") for i in range(SLOTS)]


def _pw(i):
    return C.andL(C.is_(PERSON[i]), C.is_(WORKS[i]))


CONSTRAINT1 = C.andL(C.is_(PERSON[0]), C.is_(WORKS[0]), C.is_(PERSON[1]), C.is_(WORKS[1]))
CONSTRAINT2 = C.orL(_pw(1), _pw(2))
CONSTRAINTS = {"c1": CONSTRAINT1, "c2": CONSTRAINT2}


@dataclass
class NerSample:
    persons: np.ndarray  # (3, DIM)
    locations: np.ndarray  # (3, DIM)
    is_real_person: tuple
    works_in: tuple
    constraint1: bool
    constraint2: bool


def labels_from(person, works):
    c1 = person[0] and works[0] and person[1] and works[1]
    c2 = (person[1] and works[1]) or (person[2] and works[2])
    return bool(c1), bool(c2)


def class_means(seed):
    """Per-concept sign patterns; the two classes sit at +/- SIGMA per coordinate."""
    rng = np.random.default_rng(seed)
    return rng.choice([-1.0, 1.0], size=DIM) * SIGMA, rng.choice([-1.0, 1.0], size=DIM) * SIGMA


def generate(seed, count):
    person_mean, loc_mean = class_means(seed)
    rng = np.random.default_rng(seed + 1)
    out = []
    for _ in range(count):
        person = tuple(bool(b) for b in rng.random(SLOTS) < CONCEPT_RATE)
        works = tuple(bool(b) for b in rng.random(SLOTS) < CONCEPT_RATE)
        sign_p = np.where(person, 1.0, -1.0)[:, None]
        sign_w = np.where(works, 1.0, -1.0)[:, None]
        persons = sign_p * person_mean + rng.normal(0.0, SIGMA, size=(SLOTS, DIM))
        locations = sign_w * loc_mean + rng.normal(0.0, SIGMA, size=(SLOTS, DIM))
        out.append(NerSample(persons, locations, person, works, *labels_from(person, works)))
    return out


_PROGRAM = None


def program():
    global _PROGRAM
    if _PROGRAM is None:
        _PROGRAM = load(PROGRAM)
    return _PROGRAM


def label_constraint(cid, value):
    return CONSTRAINTS[cid] if value else C.notL(CONSTRAINTS[cid])


def to_example(sample, supervision="both", constrain=None):
    """``supervision`` picks the reasoner targets: both queries, or only the
    conjunction.  ``constrain`` lists the label constraints attached for the
    constraint-based modes (defaults to the supervised ones)."""
    labels = {"c1": sample.constraint1, "c2": sample.constraint2}
    supervised = ["c1", "c2"] if supervision == "both" else ["c1"]
    constrain = supervised if constrain is None else constrain
    return common.Example(
        inputs={"person": sample.persons,
                "works": np.concatenate([sample.persons, sample.locations], axis=1)},
        slots={**{f"person_{i}": ("person", i) for i in range(SLOTS)},
               **{f"works_{i}": ("works", i) for i in range(SLOTS)}},
        program=program(),
        targets=[common.Target(cid, labels[cid]) for cid in supervised],
        constraints=[(cid, label_constraint(cid, labels[cid])) for cid in constrain],
        truth={"person": sample.is_real_person, "works": sample.works_in, **labels},
    )


def networks(seed):
    return {"person": neural.mlp("person", [DIM, 16, 2], seed=seed),
            "works": neural.mlp("works", [2 * DIM, 16, 2], seed=seed + 1)}


def reasoner_probs(probs, semiring=SemiringSpec(TOPK_GRAD, None)):
    ctx = Reasoner(program(), semiring).run(probs)
    out = {}
    for cid in ("c1", "c2"):
        rows = query(ctx, cid)
        out[cid] = rows[0].probability if rows else 0.0
    return out


def constraint_probs(probs):
    return {cid: C.soft_eval(expr, probs) for cid, expr in CONSTRAINTS.items()}


def decode(probs):
    return {name: int(np.argmax(p)) for name, p in probs.items()}


def evaluate(nets, examples, config=None):
    def one(ex):
        _, probs = common.forward(nets, ex, train=False)
        return decode(probs)

    preds, ms = common.timed_eval(one, examples)
    c_hits = {"c1": 0, "c2": 0}
    concept_hits = 0
    for ex, pred in zip(examples, preds):
        for cid, expr in CONSTRAINTS.items():
            c_hits[cid] += bool(C.hard_eval(expr, pred)) == ex.truth[cid]
        for i in range(SLOTS):
            concept_hits += (pred[f"person_{i}"] == 1) == ex.truth["person"][i]
            concept_hits += (pred[f"works_{i}"] == 1) == ex.truth["works"][i]
    n = len(examples)
    acc1, acc2 = c_hits["c1"] / n, c_hits["c2"] / n
    return {
        "constraint1_acc": acc1,
        "constraint2_acc": acc2,
        "concept_acc": concept_hits / (2 * SLOTS * n),
        "violation_rate": 1.0 - (acc1 + acc2) / 2.0,
    }, ms


def load_or_generate(config):
    path = os.path.join(config.data_dir, "samples.jsonl") if config.data_dir else None
    if path and os.path.exists(path):
        data = read_samples(path)
    else:
        data = generate(config.seed, config.train_size + config.test_size)
    return data[:config.train_size], data[config.train_size:config.train_size + config.test_size]


def datasets(config):
    train_data, test_data = load_or_generate(config)
    # primal-dual always attaches both label constraints as dual terms
    constrain = ["c1", "c2"] if config.interplay == "primal-dual" else None
    train = [to_example(s, config.supervision, constrain) for s in train_data]
    return train, [to_example(s, "both") for s in test_data]


def sample_record(s: NerSample):
    return {"persons": s.persons.tolist(), "locations": s.locations.tolist(),
            "is_real_person": list(s.is_real_person), "works_in": list(s.works_in),
            "constraint1": s.constraint1, "constraint2": s.constraint2}


def read_samples(path):
    out = []
    try:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                r = json.loads(line)
                out.append(NerSample(np.array(r["persons"]), np.array(r["locations"]),
                                     tuple(r["is_real_person"]), tuple(r["works_in"]),
                                     r["constraint1"], r["constraint2"]))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise errors.DataError(f"cannot read {path}: {exc}") from exc
    return out


def run(config) -> common.TaskResult:
    return common.run_task(sys.modules[__name__], config)
