"""Self-describing run snapshots.

A checkpoint is a single ``.npz`` archive holding a version field, the run
config echo, the global step counter, every task's named parameter arrays,
per-task optimizer moments, and each task's vocabulary.  Everything needed
to resume or decode is in the file; nothing is pickled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import CheckpointError
from .sharing import TaskParams

CHECKPOINT_VERSION = 1

__all__ = [
    "CHECKPOINT_VERSION",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "restore_task_params",
    "restore_optimizer",
]


NestedArrays = dict[str, dict[str, dict[str, np.ndarray]]]


@dataclass
class Checkpoint:
    """In-memory view of a loaded snapshot."""

    version: int
    step: int
    config: dict
    tasks: tuple[str, ...]
    params: NestedArrays
    adam_m: NestedArrays = field(default_factory=dict)
    adam_v: NestedArrays = field(default_factory=dict)
    adam_t: dict[str, int] = field(default_factory=dict)
    vocabs: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def task_arrays(self, task: str) -> dict[str, dict[str, np.ndarray]]:
        if task not in self.params:
            raise CheckpointError(
                f"checkpoint holds tasks {sorted(self.params)}, not {task!r}"
            )
        return self.params[task]


def save_checkpoint(
    path,
    *,
    step: int,
    tasks: Mapping[str, TaskParams],
    config: dict,
    optimizer=None,
    vocabs: Mapping[str, object] | None = None,
) -> Path:
    """Write one archive for all tasks.

    `optimizer`, when given, maps task name to an object with ``m``/``v``
    dicts (flat name -> array) and an integer ``t``; `vocabs` maps task name
    to a Vocab (or any object with ``.tokens``).
    """
    path = Path(path)
    arrays: dict[str, np.ndarray] = {
        "version": np.array(CHECKPOINT_VERSION),
        "step": np.array(int(step)),
        "config": np.array(json.dumps(config)),
        "tasks": np.array(json.dumps(sorted(tasks))),
    }
    for task, params in tasks.items():
        for tag, name, t in params.named():
            arrays[f"params/{task}/{tag}/{name}"] = t.values
    if optimizer:
        for task, state in optimizer.items():
            arrays[f"adam/{task}/t"] = np.array(int(state.t))
            for key, m in state.m.items():
                arrays[f"adam/{task}/m/{key}"] = m
            for key, v in state.v.items():
                arrays[f"adam/{task}/v/{key}"] = v
    if vocabs:
        for task, vocab in vocabs.items():
            arrays[f"vocab/{task}"] = np.array(list(vocab.tokens), dtype=str)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def _nested(store: NestedArrays, task: str, tag: str, name: str, arr: np.ndarray):
    store.setdefault(task, {}).setdefault(tag, {})[name] = arr


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    with archive:
        keys = set(archive.files)
        if "version" not in keys:
            raise CheckpointError(f"{path} has no version field; not a checkpoint")
        version = int(archive["version"])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path} is checkpoint version {version}; this build reads "
                f"version {CHECKPOINT_VERSION}"
            )
        for required in ("step", "config", "tasks"):
            if required not in keys:
                raise CheckpointError(f"{path} is missing the {required!r} field")
        ckpt = Checkpoint(
            version=version,
            step=int(archive["step"]),
            config=json.loads(str(archive["config"])),
            tasks=tuple(json.loads(str(archive["tasks"]))),
            params={},
        )
        for key in keys:
            parts = key.split("/")
            if parts[0] == "params":
                if len(parts) != 4:
                    raise CheckpointError(f"{path}: malformed parameter key {key!r}")
                _nested(ckpt.params, parts[1], parts[2], parts[3], archive[key])
            elif parts[0] == "adam":
                if len(parts) == 3 and parts[2] == "t":
                    ckpt.adam_t[parts[1]] = int(archive[key])
                elif len(parts) == 5 and parts[2] in ("m", "v"):
                    store = ckpt.adam_m if parts[2] == "m" else ckpt.adam_v
                    _nested(store, parts[1], parts[3], parts[4], archive[key])
                else:
                    raise CheckpointError(f"{path}: malformed optimizer key {key!r}")
            elif parts[0] == "vocab":
                ckpt.vocabs[parts[1]] = tuple(str(t) for t in archive[key])
        missing = set(ckpt.tasks) - set(ckpt.params)
        if missing:
            raise CheckpointError(f"{path}: no parameters for tasks {sorted(missing)}")
    return ckpt


def restore_task_params(
    target: TaskParams, ckpt: Checkpoint, source_task: str | None = None
) -> None:
    """Copy one task's arrays from a checkpoint into live parameters.

    `source_task` defaults to the target's own name; a single-task
    checkpoint may be restored into a differently named task.
    """
    if source_task is None:
        if target.task in ckpt.params:
            source_task = target.task
        elif len(ckpt.params) == 1:
            source_task = next(iter(ckpt.params))
        else:
            raise CheckpointError(
                f"checkpoint holds tasks {sorted(ckpt.params)}; name one to "
                f"restore into {target.task!r}"
            )
    saved = ckpt.task_arrays(source_task)
    for tag, name, t in target.named():
        if tag not in saved or name not in saved[tag]:
            raise CheckpointError(f"checkpoint lacks {tag}/{name} for {source_task!r}")
        arr = saved[tag][name]
        if arr.shape != t.values.shape:
            raise CheckpointError(
                f"shape mismatch restoring {tag}/{name}: checkpoint "
                f"{arr.shape} vs model {t.values.shape}"
            )
        t.values[...] = arr


def restore_optimizer(state, ckpt: Checkpoint, task: str) -> None:
    """Load saved moments into an existing optimizer state object."""
    if task not in ckpt.adam_t:
        raise CheckpointError(f"checkpoint has no optimizer state for {task!r}")
    state.t = ckpt.adam_t[task]
    for which, live in (("m", state.m), ("v", state.v)):
        saved = (ckpt.adam_m if which == "m" else ckpt.adam_v).get(task, {})
        for key, arr in live.items():
            tag, name = key.split("/", 1)
            if tag not in saved or name not in saved[tag]:
                raise CheckpointError(f"checkpoint lacks moment {which} for {key}")
            if saved[tag][name].shape != arr.shape:
                raise CheckpointError(f"optimizer shape mismatch for {key}")
            arr[...] = saved[tag][name]
