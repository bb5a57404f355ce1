"""Grid lookup task: ask for the color of one cell of a 16x16 image.

Each sample is a uniformly random grid of C colors plus a query cell;
the answer is the color at that cell.  The question is two tokens, one
naming the row and one the column, so the vocabulary is C color ids
followed by 16 row tokens and 16 column tokens.  Answering above chance
requires actually reading the image, which makes the task a minimal
probe for whether the fusion branch carries visual information -- and
because the answer lives at one spatial location, the drop masks have a
ground-truth cell they ought to keep.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .prompt import GRID, build_prompt, synthetic_encoder

N_ROW_TOKENS = GRID
N_COL_TOKENS = GRID


def vocab_size(channels: int) -> int:
    """Colors, then row tokens, then column tokens."""
    return channels + N_ROW_TOKENS + N_COL_TOKENS


def question_tokens(row, col, channels: int):
    """Token pair naming a cell: row token first, column token second."""
    return np.stack(np.broadcast_arrays(channels + np.asarray(row), channels + N_ROW_TOKENS + np.asarray(col)), axis=-1)


def decode_question(question, channels: int):
    """Inverse of question_tokens: (row, col) cell coordinates."""
    question = np.asarray(question)
    return question[..., 0] - channels, question[..., 1] - channels - N_ROW_TOKENS


@dataclass
class GridVqaSample:
    image: np.ndarray  # (16, 16) color ids in [0, channels)
    question: np.ndarray  # (2,) tokens naming the query cell
    answer: int
    channels: int

    def __post_init__(self):
        if self.image.shape != (GRID, GRID):
            raise ValueError(f"image must be ({GRID}, {GRID}), got {self.image.shape}")
        row, col = self.query_cell
        if not (0 <= row < GRID and 0 <= col < GRID):
            raise ValueError(f"question {self.question} decodes to out-of-grid cell ({row}, {col})")
        if self.image[row, col] != self.answer:
            raise ValueError(f"answer {self.answer} does not match cell ({row}, {col})")

    @property
    def query_cell(self) -> tuple[int, int]:
        row, col = decode_question(self.question, self.channels)
        return int(row), int(col)


@dataclass
class GridVqaDataset:
    images: np.ndarray  # (n, 16, 16) color ids
    queries: np.ndarray  # (n, 2) (row, col) cells
    answers: np.ndarray  # (n,)
    channels: int

    def __post_init__(self):
        n = len(self.answers)
        looked_up = self.images[np.arange(n), self.queries[:, 0], self.queries[:, 1]]
        if not np.array_equal(self.answers, looked_up):
            raise ValueError("answers inconsistent with queried cells")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def vocab_size(self) -> int:
        return vocab_size(self.channels)

    def tokens(self, idx=None) -> np.ndarray:
        q = self.queries if idx is None else self.queries[idx]
        return question_tokens(q[:, 0], q[:, 1], self.channels)

    def sample(self, i: int) -> GridVqaSample:
        return GridVqaSample(
            image=self.images[i],
            question=self.tokens([i])[0],
            answer=int(self.answers[i]),
            channels=self.channels,
        )


def _draw(rng: np.random.Generator, n: int, channels: int):
    images = rng.integers(0, channels, size=(n, GRID, GRID))
    queries = rng.integers(0, GRID, size=(n, 2))
    answers = images[np.arange(n), queries[:, 0], queries[:, 1]]
    return images, queries, answers


def gen_dataset(seed: int, n_train: int = 4096, n_test: int = 1024, channels: int = 8):
    """Deterministic train/test pair from disjoint child seed streams."""
    if channels < 2:
        raise ValueError(f"need at least 2 colors, got {channels}")
    train_seq, test_seq = np.random.SeedSequence(seed).spawn(2)
    train = GridVqaDataset(*_draw(np.random.default_rng(train_seq), n_train, channels), channels)
    test = GridVqaDataset(*_draw(np.random.default_rng(test_seq), n_test, channels), channels)
    return train, test


def encode_batch(dataset: GridVqaDataset, idx, d_in: int, encoder_seed: int, scales=(1, 2), pool: str = "avg"):
    """Tokens, prompt features, cls rows, and answers for the given indices.

    Runs the frozen encoder and prompt builder per sample; the content
    map is a pure function of encoder_seed, so features do not depend on
    batch composition.
    """
    idx = np.asarray(idx)
    eye = np.eye(dataset.channels)
    feats, cls_rows = [], []
    for i in idx:
        enc = synthetic_encoder(eye[dataset.images[i]], d_in, encoder_seed)
        feats.append(build_prompt(enc, scales=scales, pool=pool).features)
        cls_rows.append(enc.cls)
    return (
        dataset.tokens(idx),
        np.stack(feats),
        np.stack(cls_rows),
        dataset.answers[idx],
    )
