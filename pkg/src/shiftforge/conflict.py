"""Training-conflict matrices from per-step training logs.

An external trainer records, for every gradient step, how many batch
images came from each training subset and how each evaluation subset's
validation loss changed. One ordinary-least-squares fit per evaluation
subset (with an intercept absorbing subset-independent drift) attributes
those loss changes to the training subsets. The exported matrix is
normalized to [-1, 1] by the global max absolute coefficient and
sign-flipped so that positive means training on the row subset improves
the column subset.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

RIDGE_SCALE = 1e-6


@dataclass(frozen=True)
class LogStep:
    step: int
    counts: tuple[int, ...]
    deltas: tuple[float, ...]


@dataclass(frozen=True)
class TrainingLog:
    train_subsets: tuple[str, ...]
    eval_subsets: tuple[str, ...]
    batch_size: int
    steps: tuple[LogStep, ...]

    @property
    def n_train(self) -> int:
        return len(self.train_subsets)

    @property
    def n_eval(self) -> int:
        return len(self.eval_subsets)

    def count_matrix(self) -> np.ndarray:
        return np.array([s.counts for s in self.steps], dtype=float)

    def delta_matrix(self) -> np.ndarray:
        return np.array([s.deltas for s in self.steps], dtype=float)


@dataclass(frozen=True, eq=False)
class ConflictMatrix:
    """raw: regression sign (negative slope = loss drops = improvement);
    normalized: raw / max|raw|, sign-flipped so positive = improvement."""

    train_subsets: tuple[str, ...]
    eval_subsets: tuple[str, ...]
    raw: np.ndarray  # (T, E)
    normalized: np.ndarray  # (T, E) in [-1, 1]
    intercepts: np.ndarray  # (E,)
    diagnostics: dict


def parse_training_log(path: str | Path) -> TrainingLog:
    """Parse a JSONL training log: a header line, then one line per step."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [(i, line) for i, line in enumerate(f, start=1) if line.strip()]
    if not lines:
        raise ParseError(f"{path}: empty log")

    def load(lineno: int, line: str):
        try:
            return json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{lineno}: malformed JSON: {e.msg}") from e

    lineno, header_line = lines[0]
    header = load(lineno, header_line)
    for key, kind in (("train_subsets", list), ("eval_subsets", list), ("batch_size", int)):
        if not isinstance(header.get(key), kind):
            raise ParseError(f"{path}:{lineno}: header field {key!r} missing or wrong type")
    train_subsets = tuple(header["train_subsets"])
    eval_subsets = tuple(header["eval_subsets"])
    batch_size = header["batch_size"]
    if batch_size < 1:
        raise ParseError(f"{path}:{lineno}: batch_size must be >= 1")

    steps = []
    for lineno, line in lines[1:]:
        obj = load(lineno, line)
        counts = obj.get("counts")
        deltas = obj.get("deltas")
        if not isinstance(counts, list) or len(counts) != len(train_subsets):
            raise ParseError(
                f"{path}:{lineno}: 'counts' must have {len(train_subsets)} entries"
            )
        if not isinstance(deltas, list) or len(deltas) != len(eval_subsets):
            raise ParseError(
                f"{path}:{lineno}: 'deltas' must have {len(eval_subsets)} entries"
            )
        if any(not isinstance(c, int) or c < 0 for c in counts):
            raise ParseError(f"{path}:{lineno}: counts must be non-negative integers")
        # batch_size is the nominal batch size; remainder batches are smaller
        if not 1 <= sum(counts) <= batch_size:
            raise ParseError(
                f"{path}:{lineno}: counts sum to {sum(counts)}, "
                f"outside [1, batch_size={batch_size}]"
            )
        if any(not isinstance(d, (int, float)) or not math.isfinite(d) for d in deltas):
            raise ParseError(f"{path}:{lineno}: deltas must be finite numbers")
        steps.append(LogStep(step=obj.get("step", len(steps)), counts=tuple(counts), deltas=tuple(map(float, deltas))))
    if not steps:
        raise ParseError(f"{path}: log contains a header but no steps")
    return TrainingLog(train_subsets, eval_subsets, batch_size, tuple(steps))


def write_training_log(log: TrainingLog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(
            {
                "train_subsets": list(log.train_subsets),
                "eval_subsets": list(log.eval_subsets),
                "batch_size": log.batch_size,
            },
            f, ensure_ascii=False, sort_keys=True, separators=(",", ":"),
        )
        f.write("\n")
        for s in log.steps:
            json.dump(
                {"step": s.step, "counts": list(s.counts), "deltas": list(s.deltas)},
                f, ensure_ascii=False, sort_keys=True, separators=(",", ":"),
            )
            f.write("\n")


def fit_conflict_matrix(log: TrainingLog) -> ConflictMatrix:
    """Per-evaluation-subset OLS of loss deltas on batch composition.

    Requires at least T+1 steps (T count covariates plus an intercept).
    A rank-deficient design triggers a ridge fallback with
    lambda = 1e-6 * trace(C^T C) / T on the count coefficients only,
    flagged in diagnostics.
    """
    n_steps = len(log.steps)
    t = log.n_train
    if n_steps < t + 1:
        raise ValidationError(
            f"regression needs at least T+1 = {t + 1} steps, log has {n_steps}"
        )
    counts = log.count_matrix()
    deltas = log.delta_matrix()
    design = np.hstack([np.ones((n_steps, 1)), counts])

    rank = np.linalg.matrix_rank(design)
    ridge_lambda = 0.0
    if rank < t + 1:
        ridge_lambda = RIDGE_SCALE * float(np.trace(counts.T @ counts)) / t
        if ridge_lambda <= 0.0:
            raise ValidationError("design matrix is rank deficient and all counts are zero")
        penalty = np.eye(t + 1)
        penalty[0, 0] = 0.0  # intercept unpenalized
        gram = design.T @ design + ridge_lambda * penalty
        beta = np.linalg.solve(gram, design.T @ deltas)
    else:
        beta, *_ = np.linalg.lstsq(design, deltas, rcond=None)

    intercepts = beta[0]
    raw = beta[1:]
    residuals = deltas - design @ beta
    max_abs = float(np.max(np.abs(raw))) if raw.size else 0.0
    if max_abs > 0.0:
        normalized = -raw / max_abs  # positive = improvement
    else:
        normalized = np.zeros_like(raw)
    return ConflictMatrix(
        train_subsets=log.train_subsets,
        eval_subsets=log.eval_subsets,
        raw=raw,
        normalized=normalized,
        intercepts=intercepts,
        diagnostics={
            "steps": n_steps,
            "ridge": ridge_lambda > 0.0,
            "ridge_lambda": ridge_lambda,
            "intercept_fitted": True,
            "residual_norms": [float(np.linalg.norm(residuals[:, e])) for e in range(log.n_eval)],
        },
    )


def matrix_to_json(matrix: ConflictMatrix) -> dict:
    return {
        "train_subsets": list(matrix.train_subsets),
        "eval_subsets": list(matrix.eval_subsets),
        "raw_coefficients": [[float(v) for v in row] for row in matrix.raw],
        "normalized": [[float(v) for v in row] for row in matrix.normalized],
        "intercepts": [float(v) for v in matrix.intercepts],
        "diagnostics": matrix.diagnostics,
    }


def matrix_from_json(obj: dict) -> ConflictMatrix:
    try:
        return ConflictMatrix(
            train_subsets=tuple(obj["train_subsets"]),
            eval_subsets=tuple(obj["eval_subsets"]),
            raw=np.array(obj["raw_coefficients"], dtype=float),
            normalized=np.array(obj["normalized"], dtype=float),
            intercepts=np.array(obj["intercepts"], dtype=float),
            diagnostics=obj.get("diagnostics", {}),
        )
    except KeyError as e:
        raise ParseError(f"conflict matrix JSON missing field {e}") from e


def export_matrix(matrix: ConflictMatrix, fmt: str, path: str | Path) -> None:
    """Write the matrix as lossless `json` or a headed `csv` of the
    normalized coefficients (rows = training subsets, columns = evals)."""
    if fmt == "json":
        with open(path, "w", encoding="utf-8") as f:
            json.dump(matrix_to_json(matrix), f, ensure_ascii=False, sort_keys=True)
            f.write("\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["train_subset"] + list(matrix.eval_subsets))
            for name, row in zip(matrix.train_subsets, matrix.normalized):
                writer.writerow([name] + [repr(float(v)) for v in row])
    else:
        raise ValidationError(f"unknown matrix export format {fmt!r}")


def read_matrix(path: str | Path) -> ConflictMatrix:
    with open(path, "r", encoding="utf-8") as f:
        return matrix_from_json(json.load(f))
