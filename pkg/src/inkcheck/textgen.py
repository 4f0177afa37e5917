"""Word sampling, spelling-noise injection and balanced dataset assembly."""
from __future__ import annotations

import json
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

LOWERCASE = string.ascii_lowercase


@dataclass(frozen=True)
class Alphabet:
    """Ordered symbol set; class index ``size`` is reserved for the CTC blank."""

    symbols: str = LOWERCASE

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")
        missing = set(LOWERCASE) - set(self.symbols)
        if missing:
            raise ValueError(f"alphabet lacks lowercase letters {''.join(sorted(missing))}")

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> list[int]:
        try:
            return [self.symbols.index(c) for c in text]
        except ValueError:
            bad = next(c for c in text if c not in self.symbols)
            raise ValueError(f"character {bad!r} is not in the alphabet") from None

    def decode(self, indices: Iterable[int]) -> str:
        return "".join(self.symbols[i] for i in indices)

    def covers(self, text: str) -> bool:
        return all(c in self.symbols for c in text)


@dataclass
class Example:
    text: str
    rendered_text: str
    severity: int
    seed: int
    image: np.ndarray | None = None
    image_path: str | None = None

    @property
    def incorrect(self) -> bool:
        return self.rendered_text != self.text

    @property
    def truth(self) -> str:
        return "incorrect" if self.incorrect else "correct"

    @property
    def label(self) -> int:
        """1 for a misspelled example, 0 otherwise."""
        return int(self.incorrect)

    def record(self) -> dict:
        return {
            "image_path": self.image_path,
            "text": self.text,
            "truth": self.truth,
            "severity": self.severity,
            "rendered_text": self.rendered_text,
            "seed": self.seed,
        }


@dataclass
class DatasetManifest:
    examples: list[Example]
    seed: int
    balance: float = field(init=False)
    severity_distribution: dict[int, int] = field(init=False)

    def __post_init__(self):
        self.refresh()

    def refresh(self) -> None:
        n = len(self.examples)
        self.balance = sum(e.incorrect for e in self.examples) / n if n else 0.0
        dist: dict[int, int] = {}
        for e in self.examples:
            dist[e.severity] = dist.get(e.severity, 0) + 1
        self.severity_distribution = dict(sorted(dist.items()))

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples])

    def images(self) -> np.ndarray:
        return np.stack([e.image for e in self.examples])


# ---------------------------------------------------------------------------


def load_wordlist(path: str | Path | None = None, alphabet: Alphabet | None = None,
                  max_len: int | None = None) -> list[str]:
    """Read one word per line, keeping words inside ``alphabet`` and ``max_len``."""
    if path is None:
        text = resources.files("inkcheck").joinpath("data/words.txt").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = [w.strip() for w in text.splitlines() if w.strip()]
    if alphabet is not None:
        words = [w for w in words if alphabet.covers(w)]
    if max_len is not None:
        words = [w for w in words if len(w) <= max_len]
    return words


def generate_mistake(word: str, rng) -> str:
    """Replace one uniformly chosen position with a different random lowercase letter."""
    if not word:
        raise ValueError("cannot inject a mistake into an empty word")
    pos = int(rng.integers(0, len(word)))
    new = word[pos]
    while new == word[pos]:
        new = LOWERCASE[int(rng.integers(0, len(LOWERCASE)))]
    return word[:pos] + new + word[pos + 1:]


def apply_severity(word: str, level: int, rng) -> str:
    """Compose ``generate_mistake`` ``level`` times, redrawing if the result equals ``word``."""
    if level < 1:
        raise ValueError(f"severity level must be >= 1, got {level}")
    if not word:
        raise ValueError("cannot inject a mistake into an empty word")
    while True:
        out = word
        for _ in range(level):
            out = generate_mistake(out, rng)
        if out != word:
            return out


def sample_words(wordlist: Sequence[str], n: int, rng) -> list[str]:
    if not wordlist:
        raise ValueError("wordlist is empty")
    idx = rng.integers(0, len(wordlist), size=n)
    return [wordlist[i] for i in idx]


def example_streams(seed: int, index: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (noise, rendering) generators for one example index."""
    return np.random.default_rng([seed, index, 1]), np.random.default_rng([seed, index, 2])


Renderer = Callable[[str, np.random.Generator], np.ndarray]


def build_dataset(words: Sequence[str], incorrect_fraction: float, severity: int,
                  renderer: Renderer | None, seed: int, n_incorrect: int | None = None,
                  cache: dict | None = None) -> DatasetManifest:
    """Assemble examples: some words get spelling noise before their image is rendered.

    With ``n_incorrect`` the first ``n_incorrect`` indices are misspelled;
    otherwise each index is misspelled with probability ``incorrect_fraction``.
    The label is always the original word; the image shows ``rendered_text``.
    Each index draws from its own generators, so a word's style does not depend
    on whether it was misspelled. ``cache`` maps ``(seed, index, rendered_text)``
    to an image and lets several datasets built from the same seed share renders.
    """
    if not 0.0 <= incorrect_fraction <= 1.0:
        raise ValueError("incorrect_fraction must lie in [0, 1]")
    examples = []
    for i, word in enumerate(words):
        noise_rng, render_rng = example_streams(seed, i)
        coin = noise_rng.random()
        wrong = i < n_incorrect if n_incorrect is not None else coin < incorrect_fraction
        rendered = apply_severity(word, severity, noise_rng) if wrong else word
        image = None
        if renderer is not None:
            key = (seed, i, rendered)
            image = cache.get(key) if cache is not None else None
            if image is None:
                image = renderer(rendered, render_rng)
                if cache is not None:
                    cache[key] = image
        examples.append(Example(word, rendered, severity if wrong else 0, seed, image))
    return DatasetManifest(examples, seed)


# ---------------------------------------------------------------------------
# persistence


def save_dataset(manifest: DatasetManifest, directory: str | Path) -> Path:
    """Write ``images/NNNNNN.pgm`` plus ``manifest.jsonl`` (one record per example)."""
    from .renderer import write_pgm

    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ex in enumerate(manifest.examples):
        ex.image_path = f"images/{i:06d}.pgm"
        write_pgm(directory / ex.image_path, ex.image)
        lines.append(json.dumps(ex.record(), sort_keys=True))
    path = directory / "manifest.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_dataset(directory: str | Path, with_images: bool = True) -> DatasetManifest:
    from .renderer import read_pgm

    directory = Path(directory)
    path = directory / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    examples = []
    seed = 0
    for line in path.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        image = read_pgm(directory / rec["image_path"]) if with_images else None
        ex = Example(rec["text"], rec["rendered_text"], rec["severity"], rec["seed"], image, rec["image_path"])
        if ex.truth != rec["truth"]:
            raise ValueError(f"record {rec['image_path']} has inconsistent truth flag")
        seed = rec["seed"]
        examples.append(ex)
    return DatasetManifest(examples, seed)
