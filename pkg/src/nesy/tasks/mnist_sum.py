"""Two-digit addition learned from sum labels only."""

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
from nesy.tasks.digits import gen_synthetic_digits
from nesy.tasks.idx import load_idx

PROGRAM = """
// digit_a / digit_b are the two rows of the shared digit head
rel digit1(int).
rel digit2(int).
rel sum2(int).
""" + "\n".join(
    " ; ".join(f"nn({slot}, {i})::{rel}({i})" for i in range(10)) + "."
    for slot, rel in (("digit_a", "digit1"), ("digit_b", "digit2"))
) + """
sum2(S) :- digit1(A), digit2(B), S == A + B.
query sum2(S).
"""

DEFAULTS = dict(epochs=3, batch_size=16, lr=2e-3, train_size=2000, test_size=500,
                semiring=SemiringSpec(TOPK_GRAD, None))

DIGIT_A = C.Categorical("digit_a", 10, "digit_a")
DIGIT_B = C.Categorical("digit_b", 10, "digit_b")


@dataclass
class MnistPair:
    image_a: np.ndarray
    image_b: np.ndarray
    sum_label: int
    digits: tuple  # hidden, eval only


def program():
    return load(PROGRAM)


def sum_constraint(total):
    pairs = [C.andL(C.is_(DIGIT_A, a), C.is_(DIGIT_B, total - a))
             for a in range(10) if 0 <= total - a <= 9]
    return C.orL(*pairs)


def domain_constraints():
    return [C.exactL(*[C.is_(DIGIT_A, i) for i in range(10)]),
            C.exactL(*[C.is_(DIGIT_B, i) for i in range(10)])]


def make_pairs(images, labels, count, seed):
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(labels), size=(count, 2))
    return [MnistPair(images[i], images[j], int(labels[i] + labels[j]), (int(labels[i]), int(labels[j])))
            for i, j in idx]


def generate(seed, train_size=2000, test_size=500):
    images, labels = gen_synthetic_digits(seed, 2 * (train_size + test_size))
    pairs = make_pairs(images, labels, train_size + test_size, seed + 1)
    return pairs[:train_size], pairs[train_size:]


def load_pairs(config):
    """Pairs from IDX files when configured, otherwise synthetic digits."""
    if config.data_dir and not config.idx_images:
        images = os.path.join(config.data_dir, "images.idx")
        if os.path.exists(images):
            config = config.replace(idx_images=images, idx_labels=os.path.join(config.data_dir, "labels.idx"))
    if config.idx_images:
        if not config.idx_labels:
            raise errors.ConfigError("idx_images given without idx_labels")
        try:
            images, labels = load_idx(config.idx_images), load_idx(config.idx_labels)
        except OSError as exc:
            raise errors.DataError(f"cannot read IDX data: {exc}") from exc
        if len(images) != len(labels):
            raise errors.DataError("IDX image and label counts differ")
        pairs = make_pairs(images, labels, config.train_size + config.test_size, config.seed)
        return pairs[:config.train_size], pairs[config.train_size:]
    return generate(config.seed, config.train_size, config.test_size)


def to_example(pair, prog):
    rows = np.stack([pair.image_a.reshape(-1), pair.image_b.reshape(-1)])
    return common.Example(
        inputs={"digit": rows},
        slots={"digit_a": ("digit", 0), "digit_b": ("digit", 1)},
        program=prog,
        targets=[common.Target("sum2", (pair.sum_label,))],
        constraints=[("sum", sum_constraint(pair.sum_label))],
        truth={"digits": pair.digits, "sum": pair.sum_label},
    )


def digit_network(seed):
    return neural.mlp("digit", [28 * 28, 64, 10], seed=seed)


def predict(nets, example, semiring):
    _, probs = common.forward(nets, example, train=False)
    ctx = Reasoner(example.program, semiring).run(probs)
    rows = query(ctx, "sum2")
    best = max(rows, key=lambda r: r.probability).tuple[0] if rows else 0
    digits = (int(np.argmax(probs["digit_a"])), int(np.argmax(probs["digit_b"])))
    return best, digits, probs


def constrained_decode(probs, total):
    """Most probable digit pair consistent with a known sum."""
    result = C.constrained_map({"digit_a": probs["digit_a"], "digit_b": probs["digit_b"]},
                               [sum_constraint(total)] + domain_constraints())
    return result.assignment["digit_a"], result.assignment["digit_b"], result.feasible


def datasets(config):
    prog = program()
    train_pairs, test_pairs = load_pairs(config)
    return [to_example(p, prog) for p in train_pairs], [to_example(p, prog) for p in test_pairs]


def networks(seed):
    return {"digit": digit_network(seed)}


def evaluate(nets, test, config):
    eval_sr = SemiringSpec(TOPK_GRAD, None)
    outputs, test_ms = common.timed_eval(lambda ex: predict(nets, ex, eval_sr), test)
    sum_hits = digit_hits = 0
    for ex, (s, digits, _) in zip(test, outputs):
        sum_hits += s == ex.truth["sum"]
        digit_hits += (digits[0] == ex.truth["digits"][0]) + (digits[1] == ex.truth["digits"][1])
    return {"sum_accuracy": sum_hits / len(test), "digit_accuracy": digit_hits / (2 * len(test))}, test_ms


def run(config) -> common.TaskResult:
    return common.run_task(sys.modules[__name__], config)
