import json
import random

from scorer_service.model import ModelConfig, Variant
from scorer_service.training import Example, TrainSpec

WORDS = [
    "beach", "museum", "hiking", "ramen", "onsen", "garden", "castle", "aquarium",
    "market", "shrine", "gallery", "harbor", "forest", "tower", "cave", "island",
]

TINY_MODEL = ModelConfig(vocab_size=512, dim=32, n_heads=4, n_layers=1, max_len=64)


def make_examples(n=32, seed=0):
    rng = random.Random(seed)
    examples = []
    for i in range(n):
        left = " ".join(rng.sample(WORDS, 4)) + f" person {i}"
        right = " ".join(rng.sample(WORDS, 3)) + f" spot {i}"
        examples.append(Example(left, right, float(1 + i % 5)))
    return examples


def write_examples(path, examples):
    with open(path, "w", encoding="utf-8") as f:
        for e in examples:
            f.write(
                json.dumps(
                    {
                        "left_text": e.left_text,
                        "right_text": e.right_text,
                        "score": e.score,
                        "target_speaker": e.target_speaker,
                    }
                )
                + "\n"
            )
    return path


def overfit_spec(**overrides):
    defaults = dict(
        variant=Variant.BIENCODER_SUMREC,
        learning_rate=1e-2,
        batch_size=32,
        max_epochs=200,
        patience=200,
        model=TINY_MODEL,
    )
    defaults.update(overrides)
    return TrainSpec(**defaults)

