"""Benchmark tasks: data generation, programs, training and evaluation."""

from nesy.tasks import math_inference, mnist_sum, shapes, toy_ner

REGISTRY = {
    "mnist_sum": mnist_sum,
    "shapes": shapes,
    "toy_ner": toy_ner,
    "math_inference": math_inference,
}


def get(task_id):
    return REGISTRY[task_id]


def run(config):
    return REGISTRY[config.task].run(config)
