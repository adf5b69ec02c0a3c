"""Command-line harness wiring the pipeline into reproducible runs.

Subcommands: train-stego, poison, pretrain, fl-run, evaluate, residual,
sweep, report, synth-data.  Every run validates its config up front
(no partial outputs), writes the resolved config and seed next to its
artifacts, and finishes with a manifest listing every file it created.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

import numpy as np
import yaml

from . import metrics, synth
from .attack import AttackConfig, ReplacementAttack
from .classifier import load_classifier, pretrain_backdoor, save_classifier, train_classifier
from .config import ConfigError, ExperimentConfig, load_config
from .data import ingest_dataset
from .federation import Evaluator, run_federation
from .payload import contract_message, expand_message, payload_bit_accuracy
from .poison import build_poison_dataset, build_poison_testset, write_poison_manifest
from .runio import RunWriter, write_history
from .stego_models import StegoSystem
from .stego_train import train_stego

log = logging.getLogger(__name__)


def _out_dir(cfg: ExperimentConfig, args, command: str) -> str:
    return args.out if args.out else os.path.join(cfg.output_dir, command)


def _writer(cfg: ExperimentConfig, args, command: str) -> RunWriter:
    writer = RunWriter(_out_dir(cfg, args, command), cfg.resolved, command)
    writer.write_text("resolved_config.yaml",
                      yaml.safe_dump(cfg.resolved, sort_keys=True))
    return writer


def _datasets(cfg: ExperimentConfig):
    train = ingest_dataset(cfg.dataset, "train")
    test = ingest_dataset(cfg.dataset, "test")
    return train, test


def _stego_path(cfg: ExperimentConfig, args) -> str:
    path = getattr(args, "stego", None) or cfg.stego_checkpoint
    if not path:
        raise ConfigError(["stego.checkpoint: required for this command "
                           "(or pass --stego PATH)"])
    if not os.path.isfile(path):
        raise ConfigError([f"stego.checkpoint: path {path!r} does not exist"])
    return path


def _attack_vector(cfg: ExperimentConfig):
    path = cfg.attack.pretrained_model_path
    if not path:
        raise ConfigError(["attack.pretrained_model_path: required when the "
                           "attack is enabled"])
    if not os.path.isfile(path):
        raise ConfigError([f"attack.pretrained_model_path: path {path!r} does not exist"])
    spec, vector = load_classifier(path)
    if spec != cfg.classifier:
        raise ConfigError([
            f"attack.pretrained_model_path: checkpoint architecture {spec} "
            f"does not match configured classifier {cfg.classifier}"])
    return vector


def _stego_corpus(cfg: ExperimentConfig, train, test):
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(train))
    corpus = train.images[order[: cfg.stego_corpus_size]]
    holdout = test.images[: cfg.stego_holdout_size]
    return corpus, holdout


def _stego_quality(system: StegoSystem, holdout: np.ndarray, message: str) -> dict:
    payload = expand_message(message, system.height, system.width)
    stego = system.encode(holdout, payload)
    decoded = system.decode(stego)
    accs = [payload_bit_accuracy(d, payload) for d in decoded]
    recovered = [contract_message(d, len(message)) == message for d in decoded]
    report = metrics.quality_report(holdout, stego)
    return {
        "bit_accuracy": float(np.mean(accs)),
        "message_recovery_rate": float(np.mean(recovered)),
        "psnr": report.psnr,
        "ssim": report.ssim,
        "linf": report.linf,
        "sample_count": report.sample_count,
    }


def cmd_train_stego(cfg: ExperimentConfig, args) -> int:
    train, test = _datasets(cfg)
    corpus, holdout = _stego_corpus(cfg, train, test)
    writer = _writer(cfg, args, "train-stego")
    system, history = train_stego(corpus, cfg.stego)
    system.save(writer.path("stego.ckpt"))
    writer.write_records("history.jsonl", history)
    quality = _stego_quality(system, holdout, cfg.poison.message)
    writer.write_json("quality.json", quality)
    writer.finalize()
    log.info("stego quality: %s", quality)
    return 0


def cmd_poison(cfg: ExperimentConfig, args) -> int:
    system = StegoSystem.load(_stego_path(cfg, args))
    train, test = _datasets(cfg)
    writer = _writer(cfg, args, "poison")
    poisoned = build_poison_dataset(train, cfg.poison, system)
    poisoned_test = build_poison_testset(test, cfg.poison, system)
    write_poison_manifest(writer.path("train_manifest.tsv"), poisoned)
    write_poison_manifest(writer.path("test_manifest.tsv"), poisoned_test)
    for tag, pd in (("train", poisoned), ("test", poisoned_test)):
        arrays = {}
        for kind, part in pd.parts().items():
            arrays[f"{kind}_images"] = part.images
            arrays[f"{kind}_labels"] = part.labels
            arrays[f"{kind}_origin"] = part.origin_index
            arrays[f"{kind}_original_labels"] = part.original_labels
        np.savez_compressed(writer.path(f"{tag}_poison.npz"), **arrays)
    writer.write_json("summary.json", {
        "train_sizes": {k: len(p) for k, p in poisoned.parts().items()},
        "test_sizes": {k: len(p) for k, p in poisoned_test.parts().items()},
        "poison_rate": (len(poisoned.s1) + len(poisoned.s2) + len(poisoned.cb)) / len(train),
    })
    writer.finalize()
    return 0


def cmd_pretrain(cfg: ExperimentConfig, args) -> int:
    system = StegoSystem.load(_stego_path(cfg, args))
    train, test = _datasets(cfg)
    writer = _writer(cfg, args, "pretrain")
    poisoned = build_poison_dataset(train, cfg.poison, system)
    poison_test = build_poison_testset(test, cfg.poison, system)
    vector, history = pretrain_backdoor(poisoned, cfg.classifier, cfg.pretrain,
                                        poison_test, clean_test=test)
    save_classifier(writer.path("r_model.ckpt"), cfg.classifier, vector)
    write_history(writer.path("history.jsonl"), history)
    model = (vector, cfg.classifier)
    summary = {"asr": metrics.asr(model, poison_test),
               "ba": metrics.ba(model, test)}
    writer.write_json("metrics.json", summary)
    writer.finalize()
    log.info("pretrained backdoor model: %s", summary)
    return 0


def cmd_fl_run(cfg: ExperimentConfig, args) -> int:
    system = StegoSystem.load(_stego_path(cfg, args))
    train, test = _datasets(cfg)
    attack_on = cfg.attack_enabled and not getattr(args, "no_attack", False)
    attack = ReplacementAttack(cfg.attack, _attack_vector(cfg)) if attack_on else None
    writer = _writer(cfg, args, "fl-run")
    poison_test = build_poison_testset(test, cfg.poison, system)
    evaluator = Evaluator(cfg.classifier, test, poison_test)
    best, logs = run_federation(train, cfg.federation, cfg.classifier, cfg.local,
                                evaluator, attack=attack)
    writer.write_records("rounds.jsonl", [r.to_record() for r in logs])
    save_classifier(writer.path("global_model.ckpt"), cfg.classifier, best)
    ba, asr = evaluator.evaluate(best)
    summary = {"attack_enabled": attack_on, "best": {"ba": ba, "asr": asr},
               "final": logs[-1].to_record()}
    writer.write_json("summary.json", summary)
    writer.finalize()
    log.info("federation finished: %s", summary["best"])
    return 0


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    spec, vector = load_classifier(args.checkpoint)
    train, test = _datasets(cfg)
    writer = _writer(cfg, args, "evaluate")
    model = (vector, spec)
    result = {"checkpoint": os.path.basename(args.checkpoint),
              "ba": metrics.ba(model, test)}
    stego_path = getattr(args, "stego", None) or cfg.stego_checkpoint
    if stego_path and os.path.isfile(stego_path):
        system = StegoSystem.load(stego_path)
        poison_test = build_poison_testset(test, cfg.poison, system)
        result["asr"] = metrics.asr(model, poison_test)
    writer.write_json("evaluation.json", result)
    writer.finalize()
    print(_format_eval(result))
    return 0


def _format_eval(result: dict) -> str:
    lines = [f"checkpoint: {result['checkpoint']}", f"BA: {result['ba']:.4f}"]
    for kind, value in result.get("asr", {}).items():
        lines.append(f"ASR[{kind}]: {value:.4f}")
    return "\n".join(lines)


def cmd_residual(cfg: ExperimentConfig, args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    system = StegoSystem.load(_stego_path(cfg, args))
    _, test = _datasets(cfg)
    writer = _writer(cfg, args, "residual")
    count = min(args.count, len(test))
    covers = test.images[:count]
    payload = expand_message(cfg.poison.message, system.height, system.width)
    stegos = system.encode(covers, payload)
    fig, axes = plt.subplots(3, count, figsize=(1.6 * count, 5))
    row_names = ("cover", "stego", "residual")
    for col in range(count):
        rows = (covers[col], stegos[col],
                metrics.residual(covers[col], stegos[col], gain=args.gain))
        for rix, img in enumerate(rows):
            ax = axes[rix][col] if count > 1 else axes[rix]
            ax.imshow(np.clip(img, 0, 1))
            ax.set_axis_off()
            if col == 0:
                ax.set_title(row_names[rix], loc="left", fontsize=9)
    fig.tight_layout()
    fig.savefig(writer.path("residual.png"), dpi=120)
    plt.close(fig)
    writer.finalize()
    return 0


SWEEP_PARAMS = {
    "alpha": "non-increasing",
    "beta": "non-decreasing",
    "attack_interval": "non-increasing",
    "attackers": "non-decreasing",
}


def _sweep_attack_config(base: AttackConfig, param: str, value: float) -> AttackConfig:
    if param == "alpha":
        return replace(base, alpha=float(value))
    if param == "beta":
        return replace(base, beta=float(value))
    if param == "attack_interval":
        return replace(base, attack_interval=int(value))
    return replace(base, attacker_ids=tuple(range(int(value))))


def _monotone(values, direction: str, slack: float = 0.02) -> bool:
    pairs = zip(values, values[1:])
    if direction == "non-decreasing":
        return all(b >= a - slack for a, b in pairs)
    return all(b <= a + slack for a, b in pairs)


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    if args.param not in SWEEP_PARAMS:
        raise ConfigError([f"sweep.param: unknown parameter {args.param!r}; "
                           f"choose from {sorted(SWEEP_PARAMS)}"])
    values = [float(v) for v in args.values.split(",")]
    if len(values) < 2:
        raise ConfigError(["sweep.values: need at least two values"])
    system = StegoSystem.load(_stego_path(cfg, args))
    r_vector = _attack_vector(cfg)
    train, test = _datasets(cfg)
    writer = _writer(cfg, args, f"sweep-{args.param}")
    poison_test = build_poison_testset(test, cfg.poison, system)
    evaluator = Evaluator(cfg.classifier, test, poison_test)

    rows = []
    for value in values:
        attack_cfg = _sweep_attack_config(cfg.attack, args.param, value)
        for rep in range(args.seeds):
            fed_cfg = replace(cfg.federation, seed=cfg.seed + 1000 * rep)
            schedule = replace(cfg.local, seed=fed_cfg.seed)
            attack = ReplacementAttack(attack_cfg, r_vector)
            _, logs = run_federation(train, fed_cfg, cfg.classifier, schedule,
                                     evaluator, attack=attack)
            per_round = [float(np.mean(list(r.asr.values()))) for r in logs]
            rows.append({
                "param": args.param, "value": value, "seed_rep": rep,
                "mean_asr": float(np.mean(per_round)),
                "final_asr": per_round[-1],
                "final_ba": logs[-1].ba,
            })
            log.info("sweep %s=%s rep %d: mean ASR %.4f", args.param, value,
                     rep, rows[-1]["mean_asr"])
    writer.write_records("sweep.jsonl", rows)

    direction = SWEEP_PARAMS[args.param]
    per_seed = []
    for rep in range(args.seeds):
        series = [r["mean_asr"] for r in rows if r["seed_rep"] == rep]
        per_seed.append(_monotone(series, direction))
    summary = {
        "param": args.param, "values": values, "direction": direction,
        "per_seed_monotone": per_seed,
        "majority_matches": sum(per_seed) * 2 > len(per_seed),
    }
    writer.write_json("trend_summary.json", summary)
    writer.finalize()
    print(f"sweep {args.param}: direction {direction} majority_matches="
          f"{summary['majority_matches']} ({per_seed})")
    return 0


def cmd_report(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .runio import read_jsonl

    rounds_path = os.path.join(args.run, "rounds.jsonl")
    if not os.path.isfile(rounds_path):
        print(f"error: {rounds_path} not found", file=sys.stderr)
        return 2
    records = read_jsonl(rounds_path)
    out_dir = args.out if args.out else os.path.join(args.run, "report")
    writer = RunWriter(out_dir, {"source": rounds_path}, "report")
    xs = [r["round"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(xs, [r["ba"] for r in records], label="BA", lw=2)
    for kind in ("s1", "s2", "cb"):
        series = [r.get(f"asr_{kind}") for r in records]
        if all(v is not None for v in series):
            ax.plot(xs, series, label=f"ASR {kind}")
    ax.set_xlabel("round")
    ax.set_ylabel("rate")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(writer.path("training_curves.png"), dpi=120)
    plt.close(fig)
    writer.finalize()
    return 0


def cmd_synth_data(cfg: ExperimentConfig, args) -> int:
    train = ingest_dataset(cfg.dataset, "train")
    test = ingest_dataset(cfg.dataset, "test")
    writer = _writer(cfg, args, "synth-data")
    if args.layout == "class-dirs":
        synth.write_class_dirs(train, writer.path("train"))
        synth.write_class_dirs(test, writer.path("test"))
    else:
        synth.write_cifar_batches(train, test, writer.path("batches"))
    writer.finalize()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsteg",
        description="Invisible multi-target backdoor attacks on federated averaging",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stego=False):
        p.add_argument("--config", required=True, help="experiment YAML")
        p.add_argument("--out", default="", help="override output directory")
        if stego:
            p.add_argument("--stego", default="", help="stego checkpoint path")

    common(sub.add_parser("train-stego", help="train the trigger generator"))
    common(sub.add_parser("poison", help="build poison datasets"), stego=True)
    common(sub.add_parser("pretrain", help="train the backdoor model R"), stego=True)
    p = sub.add_parser("fl-run", help="run the federation (with or without attack)")
    common(p, stego=True)
    p.add_argument("--no-attack", action="store_true")
    p = sub.add_parser("evaluate", help="evaluate a classifier checkpoint")
    common(p, stego=True)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("residual", help="cover/stego/residual image grid")
    common(p, stego=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--gain", type=float, default=10.0)
    p = sub.add_parser("sweep", help="attack-parameter grid with trend summary")
    common(p, stego=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", type=int, default=3)
    p = sub.add_parser("report", help="plot BA/ASR curves from a run")
    p.add_argument("--run", required=True, help="fl-run output directory")
    p.add_argument("--out", default="")
    p = sub.add_parser("synth-data", help="write the synthetic corpus to disk")
    common(p)
    p.add_argument("--layout", choices=("class-dirs", "cifar-binary"),
                   default="class-dirs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config)
        handler = {
            "train-stego": cmd_train_stego,
            "poison": cmd_poison,
            "pretrain": cmd_pretrain,
            "fl-run": cmd_fl_run,
            "evaluate": cmd_evaluate,
            "residual": cmd_residual,
            "sweep": cmd_sweep,
            "synth-data": cmd_synth_data,
        }[args.command]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
