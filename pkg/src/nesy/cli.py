"""``nesy`` command line: gen, train, eval, bench, gradcheck.

Exit codes: 0 success, 1 configuration error, 2 data or IO error,
3 internal error (including a failed gradient check).
"""

import argparse
import hashlib
import json
import os
import sys

from nesy import bench, errors, gradcheck, neural, tasks
from nesy.config import INTERPLAY_MODES, SUPERVISION, TASKS, load_config
from nesy.tasks import common, digits, shapes
from nesy.tasks.idx import write_idx

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise errors.ConfigError(message)


def _checksum(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, paths):
    manifest = os.path.join(out_dir, "manifest.jsonl")
    with open(manifest, "w", encoding="utf-8") as fh:
        for path in sorted(paths):
            rel = os.path.relpath(path, out_dir)
            fh.write(json.dumps({"path": rel, "bytes": os.path.getsize(path), "checksum": _checksum(path)},
                                sort_keys=True) + "\n")
    return manifest


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def generate_files(task, seed, out_dir, config=None):
    """Write the task's dataset under ``out_dir``; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    module = tasks.get(task)
    cfg = common.resolve(config or load_config(task=task, seed=seed), **module.DEFAULTS)
    if task == "mnist_sum":
        images, labels = digits.gen_synthetic_digits(seed, 2 * (cfg.train_size + cfg.test_size))
        paths = []
        for name, arr in (("images.idx", images), ("labels.idx", labels)):
            path = os.path.join(out_dir, name)
            with open(path, "wb") as fh:
                fh.write(write_idx(arr))
            paths.append(path)
        return paths
    if task == "shapes":
        return shapes.write_dataset(shapes.gen_shapes(seed), out_dir)
    samples = module.generate(seed, cfg.train_size + cfg.test_size)
    return [_write_jsonl(os.path.join(out_dir, "samples.jsonl"), (module.sample_record(s) for s in samples))]


def _config_from(args):
    fields = {
        "task": args.task, "semiring": getattr(args, "semiring", None), "interplay": getattr(args, "interplay", None),
        "seed": args.seed, "epochs": getattr(args, "epochs", None), "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None), "data_dir": getattr(args, "data", None), "out_dir": args.out,
        "train_size": getattr(args, "train_size", None), "test_size": getattr(args, "test_size", None),
        "supervision": getattr(args, "supervision", None), "dual_lr": getattr(args, "dual_lr", None),
    }
    return load_config(getattr(args, "config", None), **fields)


def cmd_gen(args, out):
    task = args.task_pos or args.task
    if task not in TASKS:
        raise errors.ConfigError(f"unknown task {task!r}")
    paths = generate_files(task, args.seed, args.out)
    manifest = write_manifest(args.out, paths)
    print(f"wrote {len(paths)} files and {manifest}", file=out)


def _save_networks(nets, out_dir):
    paths = []
    for net_id, net in nets.items():
        path = os.path.join(out_dir, f"{net_id}.nsyn")
        neural.save_checkpoint(net, path)
        paths.append(path)
    return paths


def cmd_train(args, out):
    config = _config_from(args)
    os.makedirs(config.out_dir, exist_ok=True)
    result = tasks.run(config)
    _save_networks(result.networks, config.out_dir)
    payload = {"task": config.task, "config": result.config.as_dict(), "metrics": result.metrics}
    path = os.path.join(config.out_dir, "metrics.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    print(json.dumps(result.metrics, sort_keys=True), file=out)


def cmd_eval(args, out):
    config = _config_from(args)
    module = tasks.get(config.task)
    ckpt_dir = args.checkpoints or config.out_dir
    nets = {}
    for net_id in module.networks(config.seed):
        path = os.path.join(ckpt_dir, f"{net_id}.nsyn")
        try:
            nets[net_id] = neural.load_checkpoint(path)
        except FileNotFoundError:
            raise errors.DataError(f"missing checkpoint {path}") from None
    metrics = common.evaluate_task(module, nets, config)
    print(json.dumps(metrics, sort_keys=True), file=out)


def cmd_bench(args, out):
    base = _config_from(args)
    task_ids = TASKS if args.tasks in (None, "all") else tuple(args.tasks.split(","))
    modes = tuple(args.modes.split(",")) if args.modes else ("reasoner",)
    semirings = tuple(args.semirings.split(",")) if args.semirings else (None,)
    records = []
    for task in task_ids:
        for mode in modes:
            for sr in semirings:
                cfg = base.replace(task=task, interplay=mode, semiring=sr)
                records.append(bench.bench_task(cfg, args.runs))
    os.makedirs(base.out_dir, exist_ok=True)
    for name, text in (("bench.csv", bench.to_csv(records)), ("bench.md", bench.to_markdown(records)),
                       ("bench.jsonl", bench.to_jsonl(records))):
        with open(os.path.join(base.out_dir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
    _speed_note(records, out)
    print(bench.to_markdown(records), file=out, end="")


def _speed_note(records, out):
    by_mode = {r.mode: r for r in records if r.task == "mnist_sum"}
    k1 = next((r for m, r in by_mode.items() if m.endswith("[topk:1]")), None)
    exact = next((r for m, r in by_mode.items() if m.endswith("[exact]")), None)
    if k1 and exact and k1.train_ms_per_sample > exact.train_ms_per_sample:
        print(f"note: topk:1 ({k1.train_ms_per_sample:.3f} ms) slower than exact "
              f"({exact.train_ms_per_sample:.3f} ms) on mnist_sum", file=out)


def cmd_gradcheck(args, out):
    results = gradcheck.run_all(args.instances, args.seed)
    for r in results:
        print(r.line(), file=out)
    if not all(r.passed for r in results):
        return EXIT_INTERNAL
    return EXIT_OK


def build_parser():
    parser = _Parser(prog="nesy", description="Neurosymbolic reasoning toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common_flags(p, training=True):
        p.add_argument("--task")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs")
        p.add_argument("--config")
        if training:
            p.add_argument("--semiring")
            p.add_argument("--interplay", choices=INTERPLAY_MODES)
            p.add_argument("--epochs", type=int)
            p.add_argument("--batch-size", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--data")
            p.add_argument("--train-size", type=int)
            p.add_argument("--test-size", type=int)
            p.add_argument("--supervision", choices=SUPERVISION)
            p.add_argument("--dual-lr", type=float)

    p = sub.add_parser("gen", help="generate a task dataset")
    p.add_argument("task_pos", nargs="?", metavar="TASK")
    common_flags(p, training=False)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a task and write checkpoints + metrics")
    common_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved checkpoints")
    common_flags(p)
    p.add_argument("--checkpoints")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time/memory report over tasks")
    common_flags(p)
    p.add_argument("--tasks", help="comma-separated task ids or 'all'")
    p.add_argument("--modes", help="comma-separated interplay modes")
    p.add_argument("--semirings", help="comma-separated semiring specs")
    p.add_argument("--runs", type=int, default=bench.DEFAULT_RUNS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    p.add_argument("--instances", type=int, default=gradcheck.DEFAULT_INSTANCES)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        code = args.func(args, out)
        return EXIT_OK if code is None else code
    except errors.ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except (errors.DataError, errors.BadMagic, errors.TruncatedPayload, errors.CheckpointError) as exc:
        print(f"data error: {exc}", file=err)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc.filename or ''}: {exc.strerror or exc}", file=err)
        return EXIT_DATA
    except errors.NesyError as exc:
        print(f"error [{exc.code}]: {exc}", file=err)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
