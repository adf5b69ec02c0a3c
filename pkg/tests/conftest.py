"""Shared fixtures for the acceptance runs.

The acceptance criteria retrain real models, which costs minutes.  Each
heavy stage is built once and cached under tests/.cache keyed by a hash
of everything that influences it; later sessions reload the artifacts
and the recorded build time.  Delete tests/.cache to force fresh runs.
"""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
import pytest

from fedsteg import metrics
from fedsteg.attack import AttackConfig, ReplacementAttack
from fedsteg.classifier import (
    ClassifierSpec,
    TrainSchedule,
    load_classifier,
    pretrain_backdoor,
    save_classifier,
    train_classifier,
)
from fedsteg.data import DatasetDescriptor, ingest_dataset
from fedsteg.federation import Evaluator, FederationConfig, run_federation
from fedsteg.payload import contract_message, expand_message, payload_bit_accuracy
from fedsteg.poison import PoisonPlan, build_poison_dataset, build_poison_testset
from fedsteg.runio import config_hash
from fedsteg.stego_models import StegoSystem
from fedsteg.stego_train import StegoTrainConfig, train_stego

CACHE = Path(__file__).resolve().parent / ".cache"

_acceptance_lines = []


def record_line(line: str):
    _acceptance_lines.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def cached(name: str, key: dict, build, load):
    """Build once into a keyed cache slot; reload with stored elapsed time."""
    slot = CACHE / f"{name}-{config_hash(key)}"
    meta_path = slot / "meta.json"
    if meta_path.is_file():
        meta = json.loads(meta_path.read_text())
        return load(slot), meta["elapsed"]
    slot.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    build(slot)
    elapsed = time.perf_counter() - start
    meta_path.write_text(json.dumps({"elapsed": elapsed, "key": key}))
    return load(slot), elapsed


# ---- shared experiment profile (mirrors the default config) ----

SEED = 7
MESSAGE = "goldfish"
SPEC = ClassifierSpec(architecture="small_cnn", num_classes=10, input_shape=(32, 32, 3))
PLAN = PoisonPlan(message=MESSAGE, targets=(0, 1, 2), rate_per_subset=1 / 30,
                  test_fraction=0.5, seed=SEED)
PRETRAIN = TrainSchedule(epochs=30, lr_initial=0.01, lr_drop_epoch=18, lr_after=0.001,
                         momentum=0.9, weight_decay=5e-4, seed=SEED, batch_size=128,
                         augment="crop")
LOCAL = TrainSchedule(epochs=15, lr_initial=0.01, lr_drop_epoch=8, lr_after=0.001,
                      momentum=0.9, weight_decay=5e-4, seed=SEED, batch_size=64,
                      augment="flip+crop")
FEDERATION = FederationConfig(num_participants=5, global_rounds=15, local_epochs=2,
                              server_lr=1.0, seed=SEED)
ATTACK = AttackConfig(alpha=0.2, beta=6.0, attack_interval=0, attacker_ids=(0,))


def stego_quality(system: StegoSystem, holdout: np.ndarray, message: str) -> dict:
    payload = expand_message(message, system.height, system.width)
    stego = system.encode(holdout, payload)
    decoded = system.decode(stego)
    report = metrics.quality_report(holdout, stego)
    return {
        "bit_accuracy": float(np.mean([payload_bit_accuracy(d, payload) for d in decoded])),
        "message_recovery_rate": float(np.mean(
            [contract_message(d, len(message)) == message for d in decoded])),
        "psnr": report.psnr,
        "ssim": report.ssim,
    }


@pytest.fixture(scope="session")
def acceptance_data():
    desc = DatasetDescriptor(name="synth")  # 10 classes, 32x32, 500/100 per class
    return ingest_dataset(desc, "train"), ingest_dataset(desc, "test")


@pytest.fixture(scope="session")
def stego_a1(acceptance_data):
    """Trigger generator trained at the A1 profile, with holdout quality."""
    train, test = acceptance_data
    config = StegoTrainConfig(epochs=8, seed=SEED)
    key = {"stage": "stego", "config": dataclasses.asdict(config),
           "corpus": 2000, "holdout": 500, "message": MESSAGE}

    def build(slot):
        rng = np.random.default_rng(SEED)
        corpus = train.images[rng.permutation(len(train))[:2000]]
        system, _ = train_stego(corpus, config)
        system.save(str(slot / "stego.ckpt"))
        quality = stego_quality(system, test.images[:500], MESSAGE)
        (slot / "quality.json").write_text(json.dumps(quality))

    def load(slot):
        return {
            "system": StegoSystem.load(str(slot / "stego.ckpt")),
            "quality": json.loads((slot / "quality.json").read_text()),
        }

    loaded, elapsed = cached("a1-stego", key, build, load)
    loaded["elapsed"] = elapsed
    return loaded


@pytest.fixture(scope="session")
def poison_testset(stego_a1, acceptance_data):
    _, test = acceptance_data
    return build_poison_testset(test, PLAN, stego_a1["system"])


@pytest.fixture(scope="session")
def backdoor_bundle(stego_a1, poison_testset, acceptance_data):
    """Pre-trained backdoor model R plus an identically trained clean model."""
    train, test = acceptance_data
    key = {"stage": "pretrain", "plan": dataclasses.asdict(PLAN),
           "schedule": dataclasses.asdict(PRETRAIN), "stego": stego_a1["quality"]}

    def build(slot):
        poisoned = build_poison_dataset(train, PLAN, stego_a1["system"])
        start = time.perf_counter()
        r_vector, _ = pretrain_backdoor(poisoned, SPEC, PRETRAIN, poison_testset,
                                        clean_test=test)
        r_elapsed = time.perf_counter() - start
        clean_vector, _ = train_classifier(train, SPEC, PRETRAIN, selection_set=test)
        save_classifier(str(slot / "r_model.ckpt"), SPEC, r_vector)
        summary = {
            "asr": metrics.asr((r_vector, SPEC), poison_testset),
            "ba": metrics.ba((r_vector, SPEC), test),
            "clean_ba": metrics.ba((clean_vector, SPEC), test),
            "r_elapsed": r_elapsed,
        }
        (slot / "summary.json").write_text(json.dumps(summary))

    def load(slot):
        _, r_vector = load_classifier(str(slot / "r_model.ckpt"))
        return {"r_vector": r_vector,
                **json.loads((slot / "summary.json").read_text())}

    loaded, elapsed = cached("a2-pretrain", key, build, load)
    loaded["elapsed"] = elapsed
    return loaded


@pytest.fixture(scope="session")
def federation_runs(stego_a1, backdoor_bundle, poison_testset, acceptance_data):
    """Attacked 15-round federation plus the clean baseline federation."""
    train, test = acceptance_data
    key = {"stage": "federation", "fed": dataclasses.asdict(FEDERATION),
           "local": dataclasses.asdict(LOCAL), "attack": dataclasses.asdict(ATTACK),
           "r": backdoor_bundle["ba"]}

    def build(slot):
        evaluator = Evaluator(SPEC, test, poison_testset)
        out = {}
        start = time.perf_counter()
        attack = ReplacementAttack(ATTACK, backdoor_bundle["r_vector"])
        best, logs = run_federation(train, FEDERATION, SPEC, LOCAL, evaluator,
                                    attack=attack)
        out["attacked_elapsed"] = time.perf_counter() - start
        ba, asr = evaluator.evaluate(best)
        out["attacked"] = {"ba": ba, "asr": asr,
                           "rounds": [r.to_record() for r in logs]}
        start = time.perf_counter()
        clean_best, clean_logs = run_federation(train, FEDERATION, SPEC, LOCAL,
                                                evaluator)
        out["clean_elapsed"] = time.perf_counter() - start
        clean_ba, _ = evaluator.evaluate(clean_best)
        out["clean"] = {"ba": clean_ba,
                        "rounds": [r.to_record() for r in clean_logs]}
        (slot / "runs.json").write_text(json.dumps(out))

    def load(slot):
        return json.loads((slot / "runs.json").read_text())

    loaded, elapsed = cached("a4-federation", key, build, load)
    loaded["elapsed"] = elapsed
    return loaded


# ---- reduced sweep profile: small corpus, short federations, shared R ----

SWEEP_GRID = {
    "alpha": {"values": (0.0, 0.4, 0.8), "direction": "non-increasing"},
    "beta": {"values": (1.0, 4.0, 8.0), "direction": "non-decreasing"},
    "attackers": {"values": (1, 2, 3), "direction": "non-decreasing"},
    "attack_interval": {"values": (0, 3, 5), "direction": "non-increasing"},
}
SWEEP_SEEDS = 3


def _sweep_profile(param, value):
    # beta is swept on a wider federation so replacement cannot overshoot
    participants = 10 if param == "beta" else 5
    rounds = 12 if param == "attack_interval" else 6
    attack = {"alpha": 0.2, "beta": 5.0, "attack_interval": 0,
              "attacker_ids": (0,)}
    if param == "beta":
        attack["beta"] = float(value)
    elif param == "alpha":
        attack["alpha"] = float(value)
    elif param == "attack_interval":
        attack["attack_interval"] = int(value)
    else:
        attack["attacker_ids"] = tuple(range(int(value)))
        attack["beta"] = 1.0
    return participants, rounds, attack


@pytest.fixture(scope="session")
def trend_sweeps(stego_a1, acceptance_data):
    """Mean per-round attack success across the four sweep axes, 3 seeds each."""
    train, test = acceptance_data
    mini_train = train.subset_per_class(100)
    mini_test = test.subset_per_class(50)
    key = {"stage": "sweeps", "grid": {k: list(v["values"]) for k, v in SWEEP_GRID.items()},
           "seeds": SWEEP_SEEDS, "stego": stego_a1["quality"]}

    def build(slot):
        system = stego_a1["system"]
        poisoned = build_poison_dataset(mini_train, PLAN, system)
        poison_test = build_poison_testset(mini_test, PLAN, system)
        schedule = TrainSchedule(epochs=10, lr_initial=0.01, lr_drop_epoch=8,
                                 lr_after=0.001, momentum=0.9, weight_decay=5e-4,
                                 seed=SEED, batch_size=64, augment="none")
        r_vector, _ = pretrain_backdoor(poisoned, SPEC, schedule, poison_test,
                                        clean_test=mini_test)
        evaluator = Evaluator(SPEC, mini_test, poison_test)
        results = {}
        for param, sweep in SWEEP_GRID.items():
            series = []
            for rep in range(SWEEP_SEEDS):
                row = []
                for value in sweep["values"]:
                    participants, rounds, knobs = _sweep_profile(param, value)
                    fed = FederationConfig(num_participants=participants,
                                           global_rounds=rounds, local_epochs=1,
                                           server_lr=1.0, seed=SEED + 1000 * rep)
                    local = TrainSchedule(epochs=rounds, lr_initial=0.01,
                                          lr_drop_epoch=rounds, lr_after=0.01,
                                          momentum=0.9, weight_decay=5e-4,
                                          seed=SEED + 1000 * rep, batch_size=64,
                                          augment="none")
                    attack = ReplacementAttack(AttackConfig(**knobs), r_vector)
                    _, logs = run_federation(mini_train, fed, SPEC, local,
                                             evaluator, attack=attack)
                    per_round = [float(np.mean(list(r.asr.values()))) for r in logs]
                    row.append(float(np.mean(per_round)))
                series.append(row)
            results[param] = {"values": list(sweep["values"]),
                              "direction": sweep["direction"], "series": series}
        (slot / "sweeps.json").write_text(json.dumps(results))

    def load(slot):
        return json.loads((slot / "sweeps.json").read_text())

    loaded, elapsed = cached("a5-sweeps", key, build, load)
    return {"sweeps": loaded, "elapsed": elapsed}
