"""Feature matrices with row ids and their CSV form (``id,f0,...,f{D-1}``)."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError, ShapeError


@dataclass
class FeatureMatrix:
    ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.ids = [str(i) for i in self.ids]
        if self.values.ndim != 2:
            raise ShapeError(f"feature matrix must be 2-D, got shape {self.values.shape}")
        if len(self.ids) != self.values.shape[0]:
            raise ShapeError(f"{len(self.ids)} ids for {self.values.shape[0]} rows")

    @classmethod
    def from_array(cls, values, ids: Sequence | None = None) -> "FeatureMatrix":
        values = np.asarray(values, dtype=np.float64)
        if ids is None:
            ids = [str(i) for i in range(values.shape[0])]
        return cls(list(ids), values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix([self.ids[i] for i in rows], self.values[rows])

    def with_values(self, values) -> "FeatureMatrix":
        return FeatureMatrix(list(self.ids), values)


def as_array(matrix) -> np.ndarray:
    if isinstance(matrix, FeatureMatrix):
        return matrix.values
    return np.asarray(matrix, dtype=np.float64)


def write_features_csv(path, matrix: FeatureMatrix) -> None:
    n, d = matrix.shape
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(["id"] + [f"f{j}" for j in range(d)]) + "\n")
        for rid, row in zip(matrix.ids, matrix.values):
            fh.write(rid + "," + ",".join(repr(float(v)) for v in row) + "\n")


def read_features_csv(path) -> FeatureMatrix:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        if not header or header[0] != "id" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise InputError(f"{path}: header must be id,f0,...,f{{D-1}}")
        ids, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            ids.append(rec[0])
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise InputError(f"{path}: duplicate id {dup!r}")
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return FeatureMatrix(ids, values)
