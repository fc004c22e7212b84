import json

import numpy as np
import pytest
from PIL import Image

from cfpipe.backends import mock_suite

CAPTIONS = [
    "A cat sat on the mat",
    "A man riding a horse on a dirt road next to a field",
    "Two dogs play with a ball in the park",
    "A plate of food with a sandwich and a cup of coffee",
    "A woman holding an umbrella on a busy street",
    "A red bus parked on the side of the street",
    "A boy throws a frisbee on the beach",
    "A giraffe standing next to a tree in a field",
    "Running quickly",
    "A laptop and a phone on a wooden table",
]


@pytest.fixture
def suite():
    return mock_suite(dim=16, seed=1)


def write_corpus(tmp_path, captions, n=None):
    """Caption corpus JSONL with small random PNGs; returns the corpus path."""
    img_dir = tmp_path / "imgs"
    img_dir.mkdir(exist_ok=True)
    path = tmp_path / "coco.jsonl"
    n = len(captions) if n is None else n
    with open(path, "w") as fh:
        for i in range(n):
            rng = np.random.default_rng(i)
            Image.fromarray(rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)).save(img_dir / f"{i}.png")
            rec = {"id": f"c{i:03d}", "caption": captions[i % len(captions)], "image_path": f"imgs/{i}.png"}
            fh.write(json.dumps(rec) + "\n")
    return path


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path, CAPTIONS)
