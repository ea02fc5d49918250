"""Command line entry point: ``consensus-attack <command> [--config PATH] [--seed N] [--out PATH]``.

Commands
--------
attack      attack a single input tensor
campaign    attack every item of the configured dataset and report statistics
bench       run the optimizers on analytic test functions
verify      check the small-step rates of the NES and consensus-hopping steps
serve-echo  serve the line protocol (echo, fixed logits or a model) for testing
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io as tensor_io
from .exceptions import ConsensusAttackError, InvalidConfigError
from .harness import (
    BENCHMARKS,
    OPTIMIZERS,
    CampaignAborted,
    ExperimentConfig,
    build_classifier,
    export_results,
    aggregate_stats,
    load_dataset,
    run_attack,
    run_benchmark,
    run_campaign,
    verify_ch_nes_alignment,
    verify_ch_rate,
    verify_nes_rate,
)

logger = logging.getLogger("consensus_attack")

SLOPE_RANGE = (1.25, 1.75)


def _load_config(args):
    config = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def _read_json(path):
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _emit(payload, out=None, name="result.json"):
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable)
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, name), "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def cmd_attack(args):
    config = _load_config(args)
    classifier = build_classifier(config.classifier, config.image_shape)
    if args.input:
        x = tensor_io.read_tensor(args.input)
        label = args.label if args.label is not None else int(classifier.predict(x.reshape(1, -1))[0])
    else:
        x, label = load_dataset(config.dataset, classifier, config.image_shape)[args.index]
    rec = run_attack(classifier, x, label, config, seed=config.seed)
    payload = {
        "optimizer": config.optimizer,
        "label": int(label),
        "success": rec.success,
        "skipped": rec.skipped,
        "queries_used": rec.queries_used,
        "success_query": rec.success_query,
        "output_label": rec.output_label,
        "l2": rec.info.get("l2"),
        "linf": rec.info.get("linf"),
    }
    if args.out:
        path = export_results(aggregate_stats([rec], config.budget), [rec], args.out, config.budget,
                              pca_path=rec.trajectory if len(rec.trajectory) >= 3 else None)
        payload["files"] = path
    _emit(payload)
    return 0


def cmd_campaign(args):
    config = _load_config(args)
    if args.workers:
        config.workers = args.workers
    try:
        result = run_campaign(config, out_dir=args.out)
    except CampaignAborted as exc:
        logger.error("%s", exc)
        _emit({"aborted": True, "stats": exc.partial.stats.to_dict()})
        return 3
    _emit({"stats": result.stats.to_dict(), "robust_accuracy": result.robust_accuracy})
    return 0


def cmd_bench(args):
    spec = _read_json(args.config)
    functions = spec.get("functions", args.function or sorted(BENCHMARKS))
    optimizers = spec.get("optimizers", args.optimizer or list(OPTIMIZERS))
    dim = int(spec.get("dim", args.dim))
    budget = int(spec.get("budget", args.budget))
    params = spec.get("params", {})
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    rows = []
    for fn in functions:
        for opt in optimizers:
            rec = run_benchmark(fn, opt, dim=dim, budget=budget, seed=seed, params=params.get(opt))
            rows.append({"function": fn, "optimizer": opt, "dim": dim, "success": rec.success,
                         "queries_used": rec.queries_used, "best_value": rec.best_value,
                         "gap": rec.info["gap"]})
            logger.info("%s %s gap=%.3g queries=%d", fn, opt, rec.info["gap"], rec.queries_used)
    _emit({"results": rows}, args.out, "bench.json")
    return 0


def cmd_verify(args):
    spec = _read_json(args.config)
    seed = args.seed if args.seed is not None else int(spec.get("seed", 0))
    m = int(spec.get("samples", args.samples))
    nes = verify_nes_rate(n_samples=m, seed=seed)
    ch = verify_ch_rate(n_samples=m, seed=seed)
    align = verify_ch_nes_alignment(n_samples=int(spec.get("alignment_samples", 100_000)), seed=seed)
    lo, hi = SLOPE_RANGE
    checks = {
        "nes_rate": {**nes, "passed": lo <= nes["slope"] <= hi},
        "ch_rate": {**ch, "passed": lo <= ch["slope"] <= hi},
        "ch_nes_alignment": {"cosine": align["cosine"], "passed": align["cosine"] > 0.95},
    }
    for name, res in checks.items():
        print(f"{'PASS' if res['passed'] else 'FAIL'} {name}", file=sys.stderr)
    _emit(checks, args.out, "verify.json")
    return 0 if all(r["passed"] for r in checks.values()) else 1


def cmd_serve_echo(args):
    from .protocol import EchoResponder, make_tcp_server, serve_stream

    spec = _read_json(args.config)
    mode = spec.get("mode", args.mode)
    classifier = build_classifier(spec["classifier"]) if mode == "model" else None
    fixed = spec.get("fixed_logits", args.fixed_logits)
    responder = EchoResponder(mode, fixed_logits=fixed, classifier=classifier)
    if args.stdio:
        serve_stream(responder, sys.stdin, sys.stdout)
        return 0
    server = make_tcp_server(responder, args.host, args.port)
    host, port = server.server_address[:2]
    endpoint = f"tcp://{host}:{port}"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(endpoint + "\n")
    print(endpoint, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", help="output directory (a file path for serve-echo)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="consensus-attack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack", parents=[common], help="attack one input")
    p.add_argument("--input", help="image tensor file; defaults to a dataset item")
    p.add_argument("--label", type=int, help="true label (default: the model's prediction)")
    p.add_argument("--index", type=int, default=0, help="dataset item when --input is absent")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("campaign", parents=[common], help="attack a dataset")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("bench", parents=[common], help="analytic benchmarks")
    p.add_argument("--function", action="append", choices=sorted(BENCHMARKS))
    p.add_argument("--optimizer", action="append", choices=OPTIMIZERS)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--budget", type=int, default=20_000)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("verify", parents=[common], help="small-step rate checks")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve-echo", parents=[common], help="line-protocol test server")
    p.add_argument("--mode", choices=("echo", "fixed", "model"), default="echo")
    p.add_argument("--fixed-logits", type=float, nargs="+")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--stdio", action="store_true", help="serve stdin/stdout instead of TCP")
    p.set_defaults(func=cmd_serve_echo)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConsensusAttackError, InvalidConfigError, ValueError, OSError) as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
