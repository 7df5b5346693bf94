"""Synthetic stand-ins for emotional speech corpora."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError

# class index -> (valence, arousal); four classes cover the four quadrants
QUADRANTS = [("pos", "high"), ("neg", "high"), ("neg", "low"), ("pos", "low")]


@dataclass
class TemporalCorpus:
    utterances: list[np.ndarray]  # (T_i, dim) frame matrices
    classes: np.ndarray
    valence: np.ndarray  # +1 positive, -1 negative
    arousal: np.ndarray  # +1 high, -1 low


def temporal_utterances(
    n_utterances: int = 200,
    n_frames: int = 120,
    dim: int = 40,
    n_classes: int = 4,
    period: float = 24.0,
    amplitude: float = 3.0,
    speaker_scale: float = 1.0,
    noise: float = 0.3,
    length_jitter: int = 0,
    weak_fraction: float = 0.0,
    weak_scale: float = 0.2,
    seed: int = 0,
) -> TemporalCorpus:
    """Utterances whose class shows only in how frames move over time.

    Each class owns a unit direction ``u_c``. An utterance of class ``c``
    oscillates along ``u_c``::

        x_t = amplitude * sin(2 pi t / period + phase) * u_c + s + noise_t

    with a random phase and a per-utterance constant offset ``s`` (the
    "speaker"). Because the oscillation averages out, the time-mean of the
    frames is ``s`` plus noise and carries no class information, while any
    nonlinear per-frame encoder sees a class-specific frame distribution.
    Future frames are predictable from the past, which CPC can exploit.
    ``n_frames`` is rounded to a whole number of periods for each utterance
    so the oscillation cancels exactly in the mean.

    A ``weak_fraction`` of utterances oscillate at ``weak_scale`` times the
    amplitude. They keep their label but are hard to place, much like
    ambiguous recordings in a real corpus.
    """
    if n_classes < 2 or n_utterances < n_classes:
        raise InputError("need at least 2 classes and one utterance per class")
    if not 0.0 <= weak_fraction <= 1.0:
        raise InputError("weak_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    # separate stream so weak_fraction=0 leaves every other draw unchanged
    gain = np.where(np.random.default_rng([seed, 1]).random(n_utterances) < weak_fraction, weak_scale, 1.0)
    dirs = np.linalg.qr(rng.normal(size=(dim, n_classes)))[0].T  # orthonormal rows
    classes = np.arange(n_utterances) % n_classes
    rng.shuffle(classes)
    utterances = []
    for c, g in zip(classes, gain):
        T = n_frames + (int(rng.integers(-length_jitter, length_jitter + 1)) if length_jitter else 0)
        T = max(int(period), int(round(T / period) * period))
        t = np.arange(T)
        phase = rng.uniform(0, 2 * np.pi)
        wave = g * amplitude * np.sin(2 * np.pi * t / period + phase)
        offset = rng.normal(scale=speaker_scale, size=dim)
        x = wave[:, None] * dirs[c] + offset + rng.normal(scale=noise, size=(T, dim))
        utterances.append(x)
    quad = np.array([QUADRANTS[c % 4] for c in classes])
    valence = np.where(quad[:, 0] == "pos", 1, -1)
    arousal = np.where(quad[:, 1] == "high", 1, -1)
    return TemporalCorpus(utterances, classes, valence, arousal)


@dataclass
class BlobData:
    features: np.ndarray  # (N, dim)
    blobs: np.ndarray  # generating blob per row; -1 for halo rows
    valence: np.ndarray
    arousal: np.ndarray
    centers: np.ndarray


def quadrant_blobs(
    n_blobs: int = 4,
    per_blob: int = 375,
    dim: int = 40,
    separation: float = 5.0,
    label_noise: float = 0.0,
    halo_fraction: float = 0.0,
    halo_scale: float = 3.0,
    seed: int = 0,
) -> BlobData:
    """Gaussian blobs with unit spread, labeled by valence-arousal quadrant.

    Blob ``b`` takes quadrant ``b % 4``. The first four centers sit on a
    square of side ``separation`` in a random 2-D plane; further blobs get
    random centers at the same scale. Each binary label is flipped
    independently with probability ``label_noise`` (0.5 erases all signal).

    ``halo_fraction`` of each blob's rows are instead drawn ``halo_scale``
    times wider and take a random quadrant. They mimic ambiguous utterances:
    sparse, far from any prototype, with labels the features cannot predict.
    """
    if n_blobs < 2:
        raise InputError("need at least 2 blobs")
    if separation <= 0 or per_blob < 1 or dim < 2:
        raise InputError("separation, per_blob and dim must be positive (dim >= 2)")
    if not 0 <= label_noise <= 1 or not 0 <= halo_fraction < 1:
        raise InputError("label_noise must lie in [0, 1] and halo_fraction in [0, 1)")
    rng = np.random.default_rng(seed)
    plane = np.linalg.qr(rng.normal(size=(dim, 2)))[0].T
    square = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * (separation / 2.0)
    centers = np.empty((n_blobs, dim))
    for b in range(n_blobs):
        if b < 4:
            centers[b] = square[b] @ plane
        else:
            centers[b] = rng.normal(size=dim) * separation / np.sqrt(2 * dim)
    blobs = np.repeat(np.arange(n_blobs), per_blob)
    x = centers[blobs] + rng.normal(size=(blobs.size, dim))
    quadrant = blobs % 4
    halo = rng.random(blobs.size) < halo_fraction
    x[halo] = centers[blobs[halo]] + halo_scale * rng.normal(size=(int(halo.sum()), dim))
    quadrant[halo] = rng.integers(0, 4, size=int(halo.sum()))
    quad = np.array(QUADRANTS)[quadrant]
    valence = np.where(quad[:, 0] == "pos", 1, -1)
    arousal = np.where(quad[:, 1] == "high", 1, -1)
    valence[rng.random(blobs.size) < label_noise] *= -1
    arousal[rng.random(blobs.size) < label_noise] *= -1
    return BlobData(x, np.where(halo, -1, blobs), valence, arousal, centers)
