"""Shared training machinery for the benchmark tasks.

A task turns each sample into an :class:`Example`: per-network input rows,
a map from concept slots to (network, row), the reasoner targets and the
label-conditioned constraints.  Slot ids double as neural head ids in the
task's logic program and as concept variable names in its constraints, so
one dictionary of slot probabilities feeds every interplay mode.
"""

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nesy import constraints as C
from nesy import errors, neural
from nesy.provenance import SemiringSpec, make_semiring
from nesy.reasoner import Reasoner, query

PROB_FLOOR = 1e-12


@dataclass
class Target:
    """Supervision on one query.

    ``value`` is either the expected answer tuple of a multi-valued query
    (NLL over its normalised distribution) or a bool for a 0-ary query.
    """
    query: str
    value: object


@dataclass
class Example:
    inputs: dict  # network id -> (rows, features)
    slots: dict  # slot id -> (network id, row)
    program: object  # ValidatedProgram
    targets: list
    constraints: list = field(default_factory=list)  # [(constraint id, expr)]
    truth: dict = field(default_factory=dict)  # hidden labels, eval only


@dataclass
class TrainStats:
    samples: int = 0
    seconds: float = 0.0
    final_loss: float = 0.0
    multipliers: dict = field(default_factory=dict)

    @property
    def ms_per_sample(self):
        return 1000.0 * self.seconds / max(self.samples, 1)


def forward(nets, example, train=True):
    outs = {}
    for net_id, rows in example.inputs.items():
        outs[net_id] = nets[net_id](rows) if train else nets[net_id].predict(rows)
    probs = {slot: outs[net_id][row] for slot, (net_id, row) in example.slots.items()}
    return outs, probs


def reasoner_loss(example, probs, semiring: SemiringSpec):
    """NLL of every target under the program, with gradients on slot probabilities."""
    if not make_semiring(semiring).has_grad:
        raise errors.ConfigError(f"semiring {semiring} carries no gradients")
    ctx = Reasoner(example.program, semiring).run(probs)
    sizes = {slot: len(p) for slot, p in probs.items()}
    total = 0.0
    fact_grad = {}

    def add(grad, scale):
        for fid, g in grad.items():
            fact_grad[fid] = fact_grad.get(fid, 0.0) + scale * g

    for target in example.targets:
        rows = query(ctx, target.query, include_zero=True)
        if isinstance(target.value, bool):
            p = rows[0].probability if rows else 0.0
            if target.value:
                q = max(p, PROB_FLOOR)
                total -= math.log(q)
                if rows:
                    add(rows[0].grad.grad, -1.0 / q)
            else:
                q = max(1.0 - p, PROB_FLOOR)
                total -= math.log(q)
                if rows:
                    add(rows[0].grad.grad, 1.0 / q)
            continue
        z = sum(r.probability for r in rows)
        hit = next((r for r in rows if r.tuple == tuple(target.value)), None)
        p = hit.probability if hit is not None else 0.0
        if z <= 0.0:
            total -= math.log(PROB_FLOOR)
            continue
        total -= math.log(max(p / z, PROB_FLOOR))
        if hit is not None and p > 0.0:
            add(hit.grad.grad, -1.0 / p)
        for r in rows:
            add(r.grad.grad, 1.0 / z)
    slot_grads = ctx.slot_gradients(fact_grad, sizes)
    return total, slot_grads


def soft_constraint_loss(example, probs):
    total = 0.0
    grads = {}
    for _, expr in example.constraints:
        loss, g = C.soft_loss_grad(expr, probs)
        total += loss
        _merge(grads, g)
    return total, grads


def sampling_constraint_loss(example, probs, sample_count, seed):
    total = 0.0
    grads = {}
    for i, (_, expr) in enumerate(example.constraints):
        loss, g = C.sampling_loss(expr, probs, sample_count, seed + i)
        total += loss
        _merge(grads, g)
    return total, grads


def _merge(into, grads, scale=1.0):
    for k, g in grads.items():
        if k in into:
            into[k] = into[k] + scale * g
        else:
            into[k] = scale * np.asarray(g, dtype=np.float64)


class Trainer:
    """Minibatch Adam over the networks of one task, for any interplay mode."""

    def __init__(self, nets, config, semiring):
        self.nets = nets
        self.config = config
        self.semiring = semiring
        self.optimizers = {k: neural.Adam(config.lr) for k in nets}
        self.dual = C.LagrangeState(step_size=config.dual_lr)
        self._step = 0

    def sample_loss(self, example, probs):
        mode = self.config.interplay
        if mode == "reasoner":
            return reasoner_loss(example, probs, self.semiring)
        if mode == "soft-constraint":
            return soft_constraint_loss(example, probs)
        if mode == "sampling":
            seed = self.config.seed * 1_000_003 + self._step
            return sampling_constraint_loss(example, probs, self.config.sample_count, seed)
        if mode == "primal-dual":
            loss, grads = reasoner_loss(example, probs, self.semiring)
            degrees = {cid: C.soft_eval(expr, probs) for cid, expr in example.constraints}
            weights, self.dual = C.primal_dual_step(self.dual, degrees)
            for cid, expr in example.constraints:
                lam = weights[cid]
                if lam > 0.0:
                    c_loss, c_grads = C.soft_loss_grad(expr, probs)
                    loss += lam * c_loss
                    _merge(grads, c_grads, lam)
            return loss, grads
        raise errors.ConfigError(f"unknown interplay mode {mode!r}")

    def train_example(self, example, scale=1.0):
        outs, probs = forward(self.nets, example)
        loss, slot_grads = self.sample_loss(example, probs)
        self._step += 1
        for net_id, out in outs.items():
            g = np.zeros_like(out)
            for slot, (nid, row) in example.slots.items():
                if nid == net_id and slot in slot_grads:
                    g[row] += slot_grads[slot][: out.shape[1]]
            self.nets[net_id].backward(g * scale)
        return loss

    def fit(self, examples, epochs, batch_size, rng) -> TrainStats:
        stats = TrainStats()
        start = time.perf_counter()
        loss = 0.0
        for _ in range(epochs):
            order = rng.permutation(len(examples))
            for b in range(0, len(order), batch_size):
                batch = order[b:b + batch_size]
                for net in self.nets.values():
                    neural.zero_grads(net)
                loss = 0.0
                for i in batch:
                    loss += self.train_example(examples[i], 1.0 / len(batch))
                for net_id, net in self.nets.items():
                    self.optimizers[net_id].step(net)
                stats.samples += len(batch)
                loss /= len(batch)
        stats.seconds = time.perf_counter() - start
        stats.final_loss = loss
        stats.multipliers = dict(self.dual.multipliers)
        return stats


def timed_eval(fn, examples):
    """Run ``fn`` over ``examples``; returns (outputs, ms per sample)."""
    start = time.perf_counter()
    outputs = [fn(ex) for ex in examples]
    ms = 1000.0 * (time.perf_counter() - start) / max(len(examples), 1)
    return outputs, ms


def binary_head(head_id, n_in, hidden, seed):
    return neural.mlp(head_id, [n_in, hidden, 2], seed=seed)


def resolve(config, **defaults):
    """Fill unset config fields from task defaults."""
    changes = {k: v for k, v in defaults.items() if getattr(config, k) is None}
    return config.replace(**changes) if changes else config


@dataclass
class TaskResult:
    metrics: dict
    networks: dict
    config: object
    train_stats: Optional[TrainStats] = None


def run_task(task, config) -> TaskResult:
    """Train ``task``'s networks per ``config`` and evaluate on its test split.

    A task module provides ``DEFAULTS``, ``datasets(config)``,
    ``networks(seed)`` and ``evaluate(nets, test, config)``.
    """
    config = resolve(config, **task.DEFAULTS)
    train, test = task.datasets(config)
    nets = task.networks(config.seed)
    trainer = Trainer(nets, config, config.semiring)
    stats = trainer.fit(train, config.epochs, config.batch_size, np.random.default_rng(config.seed))
    metrics, test_ms = task.evaluate(nets, test, config)
    metrics.update(train_ms_per_sample=stats.ms_per_sample, test_ms_per_sample=test_ms,
                   final_loss=stats.final_loss)
    if config.interplay == "primal-dual":
        metrics["lambda"] = dict(stats.multipliers)
    return TaskResult(metrics, nets, config, stats)


def evaluate_task(task, nets, config):
    config = resolve(config, **task.DEFAULTS)
    _, test = task.datasets(config)
    metrics, test_ms = task.evaluate(nets, test, config)
    metrics["test_ms_per_sample"] = test_ms
    return metrics
