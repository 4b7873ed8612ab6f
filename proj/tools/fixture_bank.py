#!/usr/bin/env python3
"""Writes the committed text-bank fixture (archive + JSON sidecar).

The embeddings are a seeded stand-in: each quality dimension gets a random
direction, each adjective a perturbation of it, so adjectives in the same
dimension are correlated. Replace with real text-encoder output when one is
available; the file layout is the same.
"""
import argparse
import json
import struct
import zlib
from pathlib import Path

import numpy as np

DIMENSIONS = [
    ("brightness", ["bright", "dark", "well-lit", "dim", "overexposed", "underexposed"]),
    ("colorfulness", ["colorful", "vivid", "saturated", "dull", "washed-out", "faded"]),
    ("contrast", ["high-contrast", "low-contrast", "punchy", "flat", "crisp-toned", "murky"]),
    ("sharpness", ["sharp", "blurry", "detailed", "soft", "clear", "fuzzy", "focused", "out-of-focus"]),
    ("noisiness", ["clean", "noisy", "grainy", "smooth", "artifact-free", "pixelated"]),
    ("overall quality", ["excellent", "good", "fair", "poor", "bad", "pleasant", "distorted", "pristine"]),
]
TEMPLATE = "a photo of a {adjective} image"


def write_archive(path, name, array):
    payload = np.ascontiguousarray(array, dtype="<f4").tobytes()
    header = {name: {"dtype": "f32", "shape": list(array.shape), "offset": 0, "byte_len": len(payload)}}
    hs = json.dumps(header, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(b"BPTA")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(hs)))
        f.write(hs)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/text_bank/default.bpta")
    ap.add_argument("--dim", type=int, default=512)
    ap.add_argument("--seed", type=int, default=20240521)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = []
    for _, adjectives in DIMENSIONS:
        centre = rng.standard_normal(args.dim)
        centre /= np.linalg.norm(centre)
        for _ in adjectives:
            v = centre + 0.8 * rng.standard_normal(args.dim) / np.sqrt(args.dim)
            rows.append(v / np.linalg.norm(v))
    emb = np.stack(rows).astype(np.float32)
    assert emb.shape == (40, args.dim)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(out, "text.embeddings", emb)
    sidecar = {
        "template": TEMPLATE,
        "model_id": f"seeded-standin-{args.seed} (no text encoder available offline)",
        "dimensions": [{"name": n, "adjectives": a} for n, a in DIMENSIONS],
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


if __name__ == "__main__":
    main()
