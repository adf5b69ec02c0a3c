"""Run directories, manifests, and line-oriented record files.

Every experiment writes into one directory through a RunWriter, which
registers each artifact and finishes with a manifest (run id, resolved
config hash, artifact list).  Records are JSON lines with sorted keys,
so reruns with identical inputs are byte-identical.
"""

import hashlib
import json
import os


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()[:16]


def write_jsonl(path, records):
    with open(path, "w") as f:
        for record in records:
            f.write(canonical_json(record) + "\n")


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


class RunWriter:
    """Collects artifacts under one directory and writes the manifest."""

    MANIFEST = "manifest.json"

    def __init__(self, out_dir: str, config_dict: dict, command: str):
        self.out_dir = out_dir
        self.config_dict = config_dict
        self.command = command
        self.files = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        """Register an artifact name and return its absolute path."""
        if name not in self.files:
            self.files.append(name)
        return os.path.join(self.out_dir, name)

    def write_text(self, name: str, text: str):
        with open(self.path(name), "w") as f:
            f.write(text)

    def write_json(self, name: str, obj):
        self.write_text(name, canonical_json(obj) + "\n")

    def write_records(self, name: str, records):
        write_jsonl(self.path(name), records)

    def finalize(self) -> str:
        run_id = config_hash({"command": self.command, "config": self.config_dict})
        manifest = {
            "run_id": run_id,
            "command": self.command,
            "config_hash": config_hash(self.config_dict),
            "files": sorted(self.files),
        }
        with open(os.path.join(self.out_dir, self.MANIFEST), "w") as f:
            f.write(canonical_json(manifest) + "\n")
        return run_id


def write_history(path, history):
    """Training history as line records: epoch, split, metric, value."""
    rows = []
    for record in history:
        epoch = record["epoch"]
        for key, value in record.items():
            if key == "epoch":
                continue
            rows.append({"epoch": epoch, "split": "train", "metric": key,
                         "value": value if not isinstance(value, tuple) else list(value)})
    write_jsonl(path, rows)
