"""Build the small photo corpus used by the acceptance suite.

Copies a handful of freely licensed sample photos that ship with scikit-image,
scikit-learn and matplotlib into data/desk/images, writes a training manifest,
an evaluation manifest and a JSONL file of seeded random boxes over the
evaluation photos.
"""
import hashlib
import json
import os
import random

import matplotlib
import skimage
import sklearn
from PIL import Image

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data", "desk")
SKI = os.path.join(os.path.dirname(skimage.__file__), "data")
SKL = os.path.join(os.path.dirname(sklearn.__file__), "datasets", "images")
MPL = os.path.join(matplotlib.get_data_path(), "sample_data")

TRAIN = {
    "camera": os.path.join(SKI, "camera.png"),
    "coffee": os.path.join(SKI, "coffee.png"),
    "motorcycle_left": os.path.join(SKI, "motorcycle_left.png"),
    "motorcycle_right": os.path.join(SKI, "motorcycle_right.png"),
    "china": os.path.join(SKL, "china.jpg"),
    "coins": os.path.join(SKI, "coins.png"),
    "moon": os.path.join(SKI, "moon.png"),
    "clock": os.path.join(SKI, "clock_motion.png"),
    "brick": os.path.join(SKI, "brick.png"),
    "grass": os.path.join(SKI, "grass.png"),
    "gravel": os.path.join(SKI, "gravel.png"),
}
EVAL = {
    "astronaut": os.path.join(SKI, "astronaut.png"),
    "cat": os.path.join(SKI, "chelsea.png"),
    "flower": os.path.join(SKL, "flower.jpg"),
    "portrait": os.path.join(MPL, "grace_hopper.jpg"),
    "rocket": os.path.join(SKI, "rocket.jpg"),
}
BOXES_PER_IMAGE = 24


def export(name, src):
    im = Image.open(src)
    im = im.convert("RGB") if im.mode not in ("L",) else im
    rel = f"images/{name}.png"
    path = os.path.join(OUT, rel)
    im.save(path, optimize=True)
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    return {"path": rel, "sha256": digest, "width": im.width, "height": im.height}


def main():
    os.makedirs(os.path.join(OUT, "images"), exist_ok=True)
    train = [export(n, p) for n, p in TRAIN.items()]
    evals = [export(n, p) for n, p in EVAL.items()]
    with open(os.path.join(OUT, "train.json"), "w") as f:
        json.dump({"entries": train}, f, indent=2)
    with open(os.path.join(OUT, "eval.json"), "w") as f:
        json.dump({"entries": evals, "annotations": "eval.jsonl"}, f, indent=2)

    rng = random.Random(2013)
    with open(os.path.join(OUT, "eval.jsonl"), "w") as f:
        for (name, _), entry in zip(EVAL.items(), evals):
            for _ in range(BOXES_PER_IMAGE):
                side = rng.randint(150, min(280, entry["height"] - 8, entry["width"] - 8))
                w = min(entry["width"], int(side * rng.uniform(0.8, 1.25)))
                h = side
                x = rng.randint(0, entry["width"] - w)
                y = rng.randint(0, entry["height"] - h)
                rec = {"image": entry["path"], "x": x, "y": y, "w": w, "h": h, "category": name}
                f.write(json.dumps(rec) + "\n")


if __name__ == "__main__":
    main()
