"""Synthetic visual question answering: "Is there a red shape above a blue circle?"

Scenes are 128x128 RGB images holding two anchor objects plus one to three
distractors.  Positives place a red object above a blue circle; negatives
are rejection-sampled until no red object sits above any blue circle.
"""

import hashlib
import json
import os
import re
import sys
from dataclasses import dataclass, field

import numpy as np

from nesy import constraints as C
from nesy import errors, neural
from nesy.lang import load
from nesy.provenance import SemiringSpec, TOPK_GRAD
from nesy.reasoner import Reasoner, query
from nesy.tasks import common

WIDTH = HEIGHT = 128
COLORS = ("red", "green", "blue", "yellow")
SHAPES = ("circle", "square", "triangle")
RGB = {"red": (220, 40, 40), "green": (40, 180, 60), "blue": (50, 80, 220), "yellow": (230, 210, 40)}
BACKGROUND = (24, 24, 24)
ABOVE_MARGIN = 4  # px; every red/blue-circle pair differs in center-y by more than this
GAP = 2  # px between bounding boxes
QUESTION = "Is there a red shape above a blue circle?"
CROP = 16

DEFAULTS = dict(epochs=4, batch_size=16, lr=3e-3, train_size=1000, test_size=1000,
                semiring=SemiringSpec(TOPK_GRAD, 5))


@dataclass
class SceneObject:
    shape: str
    color: str
    bbox: tuple  # (x0, y0, x1, y1), exclusive upper corner
    role: str = "distractor"

    @property
    def center(self):
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) / 2.0, (y0 + y1) / 2.0)

    def as_dict(self):
        return {"shape": self.shape, "color": self.color, "bbox": list(self.bbox), "role": self.role}


@dataclass
class SceneSpec:
    id: int
    split: str
    label: bool
    objects: list = field(default_factory=list)
    width: int = WIDTH
    height: int = HEIGHT

    def record(self):
        return {"id": self.id, "split": self.split, "label": "yes" if self.label else "no",
                "question": QUESTION, "above_margin": ABOVE_MARGIN,
                "objects": [o.as_dict() for o in self.objects]}


def above(a: SceneObject, b: SceneObject):
    """Strictly higher center (image y grows downwards)."""
    return a.center[1] < b.center[1]


def answer(objects):
    return any(a.color == "red" and b.color == "blue" and b.shape == "circle" and above(a, b)
               for a in objects for b in objects if a is not b)


def overlaps(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return not (ax1 + GAP <= bx0 or bx1 + GAP <= ax0 or ay1 + GAP <= by0 or by1 + GAP <= ay0)


def _ambiguous(objects):
    for a in objects:
        for b in objects:
            if a is not b and a.color == "red" and b.color == "blue" and b.shape == "circle":
                if abs(a.center[1] - b.center[1]) <= ABOVE_MARGIN:
                    return True
    return False


def _place(rng, placed, size=None):
    for _ in range(200):
        s = int(size or rng.integers(14, 25))
        x0, y0 = int(rng.integers(0, WIDTH - s)), int(rng.integers(0, HEIGHT - s))
        box = (x0, y0, x0 + s, y0 + s)
        if not any(overlaps(box, o.bbox) for o in placed):
            return box
    return None


def _random_object(rng, placed, role, shape=None, color=None):
    box = _place(rng, placed)
    if box is None:
        return None
    return SceneObject(shape or SHAPES[rng.integers(len(SHAPES))], color or COLORS[rng.integers(len(COLORS))],
                       box, role)


def _scene(rng, positive):
    while True:
        objects = []
        if positive:
            anchors = [(SHAPES[rng.integers(len(SHAPES))], "red"), ("circle", "blue")]
        else:
            # near misses: right colors in the wrong order, or the wrong shape/color
            kind = rng.integers(3)
            if kind == 0:
                anchors = [(SHAPES[rng.integers(len(SHAPES))], "red"), ("circle", "blue")]
            elif kind == 1:
                anchors = [(SHAPES[rng.integers(len(SHAPES))], "red"),
                           (SHAPES[1 + rng.integers(2)], "blue")]
            else:
                anchors = [(SHAPES[rng.integers(len(SHAPES))], COLORS[[1, 2, 3][rng.integers(3)]]),
                           ("circle", "blue")]
        ok = True
        for shape, color in anchors:
            obj = _random_object(rng, objects, "anchor", shape, color)
            if obj is None:
                ok = False
                break
            objects.append(obj)
        if not ok:
            continue
        if positive and not objects[0].center[1] < objects[1].center[1] - ABOVE_MARGIN:
            continue
        for _ in range(int(rng.integers(1, 4))):
            obj = _random_object(rng, objects, "distractor")
            if obj is None:
                ok = False
                break
            objects.append(obj)
        if not ok or _ambiguous(objects) or answer(objects) != positive:
            continue
        return objects


def render(scene: SceneSpec):
    img = np.empty((HEIGHT, WIDTH, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    ys, xs = np.mgrid[0:HEIGHT, 0:WIDTH]
    for obj in scene.objects:
        x0, y0, x1, y1 = obj.bbox
        cx, cy = obj.center
        r = (x1 - x0) / 2.0
        if obj.shape == "circle":
            mask = (xs + 0.5 - cx) ** 2 + (ys + 0.5 - cy) ** 2 <= r * r
        elif obj.shape == "square":
            mask = (xs >= x0) & (xs < x1) & (ys >= y0) & (ys < y1)
        else:
            # apex at top center, base along the bottom edge
            t = (ys + 0.5 - y0) / (y1 - y0)
            mask = (ys >= y0) & (ys < y1) & (np.abs(xs + 0.5 - cx) <= t * r)
        img[mask] = RGB[obj.color]
    return img


def gen_shapes(seed, count=2000):
    """Scenes split evenly into train/test, each split exactly half positive."""
    if count % 4:
        raise errors.ConfigError("count must be divisible by 4 to balance both splits")
    rng = np.random.default_rng(seed)
    scenes = []
    half = count // 2
    for split in ("train", "test"):
        labels = np.array([True] * (half // 2) + [False] * (half // 2))
        rng.shuffle(labels)
        for label in labels:
            scenes.append(SceneSpec(len(scenes), split, bool(label), _scene(rng, bool(label))))
    return scenes


def validate_scene(scene: SceneSpec):
    """Raise DataError unless the scene meets the generator's guarantees."""
    objs = scene.objects
    for i, a in enumerate(objs):
        x0, y0, x1, y1 = a.bbox
        if not (0 <= x0 < x1 <= scene.width and 0 <= y0 < y1 <= scene.height):
            raise errors.DataError(f"scene {scene.id}: object {i} out of bounds")
        for b in objs[i + 1:]:
            if overlaps(a.bbox, b.bbox):
                raise errors.DataError(f"scene {scene.id}: overlapping objects")
    distractors = sum(o.role == "distractor" for o in objs)
    if not 1 <= distractors <= 3 or len(objs) - distractors != 2:
        raise errors.DataError(f"scene {scene.id}: {distractors} distractors")
    if answer(objs) != scene.label:
        raise errors.DataError(f"scene {scene.id}: label disagrees with its objects")


# -- files ---------------------------------------------------------------------

def write_ppm(path, img):
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


_PPM_HEADER = re.compile(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s")


def read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    m = _PPM_HEADER.match(data)
    if m is None:
        raise errors.DataError(f"{path}: not a binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    pixels = data[m.end():]
    if len(pixels) < w * h * 3:
        raise errors.DataError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels[: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def write_dataset(scenes, out_dir):
    """Write PPM images plus one annotation record per line; returns written paths."""
    paths = []
    for split in ("train", "test"):
        os.makedirs(os.path.join(out_dir, "images", split), exist_ok=True)
    ann_path = os.path.join(out_dir, "annotations.jsonl")
    with open(ann_path, "w", encoding="utf-8") as fh:
        for scene in scenes:
            rel = os.path.join("images", scene.split, f"{scene.id:04d}.ppm")
            write_ppm(os.path.join(out_dir, rel), render(scene))
            paths.append(os.path.join(out_dir, rel))
            rec = scene.record()
            rec["image"] = rel
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    paths.append(ann_path)
    return paths


def read_dataset(out_dir):
    scenes, images = [], []
    ann_path = os.path.join(out_dir, "annotations.jsonl")
    try:
        with open(ann_path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                objs = [SceneObject(o["shape"], o["color"], tuple(o["bbox"]), o.get("role", "distractor"))
                        for o in rec["objects"]]
                scenes.append(SceneSpec(rec["id"], rec["split"], rec["label"] == "yes", objs))
                images.append(read_ppm(os.path.join(out_dir, rec["image"])))
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise errors.DataError(f"cannot read shapes dataset in {out_dir}: {exc}") from exc
    return scenes, images


def scene_digest(scene):
    return hashlib.sha256(render(scene).tobytes()).hexdigest()


# -- features, program, training ---------------------------------------------------

def crop_features(img, bbox):
    x0, y0, x1, y1 = bbox
    ys = np.linspace(y0, y1 - 1, CROP).round().astype(int)
    xs = np.linspace(x0, x1 - 1, CROP).round().astype(int)
    return (img[np.ix_(ys, xs)].astype(np.float64) / 255.0).reshape(-1)


def pair_features(a: SceneObject, b: SceneObject):
    ca, cb = np.array(a.center) / WIDTH, np.array(b.center) / HEIGHT
    return np.concatenate([np.array(a.bbox) / WIDTH, np.array(b.bbox) / HEIGHT, ca - cb])


def program_text(n):
    lines = [f"rel {c}(int)." for c in COLORS + SHAPES] + ["rel above(int, int).", "rel ans()."]
    for i in range(n):
        lines.append(" ; ".join(f"nn(color_{i}, {k})::{c}({i})" for k, c in enumerate(COLORS)) + ".")
        lines.append(" ; ".join(f"nn(shape_{i}, {k})::{s}({i})" for k, s in enumerate(SHAPES)) + ".")
    for i in range(n):
        for j in range(n):
            if i != j:
                lines.append(f"nn(above_{i}_{j}, 1)::above({i}, {j}).")
    lines.append("ans() :- red(I), blue(J), circle(J), above(I, J).")
    lines.append("query ans().")
    return "\n".join(lines) + "\n"


_PROGRAMS = {}


def program(n):
    if n not in _PROGRAMS:
        _PROGRAMS[n] = load(program_text(n))
    return _PROGRAMS[n]


def answer_constraint(n):
    def pair(ij):
        i, j = ij
        return C.andL(C.is_(C.Categorical(f"color_{i}", 4), COLORS.index("red")),
                      C.is_(C.Categorical(f"color_{j}", 4), COLORS.index("blue")),
                      C.is_(C.Categorical(f"shape_{j}", 3), SHAPES.index("circle")),
                      C.is_(C.Binary(f"above_{i}_{j}"), 1))
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    if not pairs:
        return None
    return C.existsL(pairs, pair)


def to_example(scene, img):
    n = len(scene.objects)
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    inputs = {"color": np.stack([crop_features(img, o.bbox) for o in scene.objects])}
    inputs["shape"] = inputs["color"]
    slots = {}
    for i in range(n):
        slots[f"color_{i}"] = ("color", i)
        slots[f"shape_{i}"] = ("shape", i)
    if pairs:
        inputs["above"] = np.stack([pair_features(scene.objects[i], scene.objects[j]) for i, j in pairs])
        for r, (i, j) in enumerate(pairs):
            slots[f"above_{i}_{j}"] = ("above", r)
    constraint = answer_constraint(n)
    cons = []
    if constraint is not None:
        cons.append(("answer", constraint if scene.label else C.notL(constraint)))
    return common.Example(inputs, slots, program(n), [common.Target("ans", scene.label)], cons,
                          truth={"label": scene.label, "scene": scene})


def networks(seed):
    return {
        "color": neural.mlp("color", [CROP * CROP * 3, 32, len(COLORS)], seed=seed),
        "shape": neural.mlp("shape", [CROP * CROP * 3, 32, len(SHAPES)], seed=seed + 1),
        "above": neural.mlp("above", [10, 16, 2], seed=seed + 2),
    }


def answer_probability(nets, example, semiring):
    _, probs = common.forward(nets, example, train=False)
    return answer_from_probs(example, probs, semiring)


def answer_from_probs(example, probs, semiring):
    ctx = Reasoner(example.program, semiring).run(probs)
    rows = query(ctx, "ans")
    return rows[0].probability if rows else 0.0


def load_or_generate(config):
    if config.data_dir and os.path.exists(os.path.join(config.data_dir, "annotations.jsonl")):
        scenes, images = read_dataset(config.data_dir)
    else:
        scenes = gen_shapes(config.seed)
        images = [render(s) for s in scenes]
    train = [(s, im) for s, im in zip(scenes, images) if s.split == "train"][: config.train_size]
    test = [(s, im) for s, im in zip(scenes, images) if s.split == "test"][: config.test_size]
    return train, test


def datasets(config):
    train_data, test_data = load_or_generate(config)
    return [to_example(s, im) for s, im in train_data], [to_example(s, im) for s, im in test_data]


def evaluate(nets, test, config):
    outputs, test_ms = common.timed_eval(lambda ex: answer_probability(nets, ex, config.semiring), test)
    hits = sum((p > 0.5) == ex.truth["label"] for ex, p in zip(test, outputs))
    return {"answer_accuracy": hits / len(test)}, test_ms


def run(config) -> common.TaskResult:
    return common.run_task(sys.modules[__name__], config)
