#!/usr/bin/env python3
"""Build the X-NIST base corpora as IDX files.

Digits come from the `mnist` npm package (about 1000 per class, stored as
floats in [0, 1]); clothing items from `fashion-mnist` (7000 per class, bytes),
of which the first --fashion-per-class items of each class are kept.

Writes digits-{images,labels}.idx and fashion-{images,labels}.idx into OUT.
"""

import argparse
import io
import json
import struct
import sys
import tarfile
import urllib.request
from pathlib import Path

REGISTRY = "https://registry.npmjs.org"
PACKAGES = {
    "digits": ("mnist", "1.1.0", "package/src/digits"),
    "fashion": ("fashion-mnist", "1.1.0", "package/src/clothes"),
}
SIDE = 28


def fetch_tarball(name, version, cache):
    fname = f"{name}-{version}.tgz"
    if cache:
        local = Path(cache) / fname
        if local.exists():
            return local.read_bytes()
    url = f"{REGISTRY}/{name}/-/{fname}"
    with urllib.request.urlopen(url, timeout=120) as r:
        data = r.read()
    if cache:
        Path(cache).mkdir(parents=True, exist_ok=True)
        (Path(cache) / fname).write_bytes(data)
    return data


def class_arrays(tgz, prefix):
    out = {}
    with tarfile.open(fileobj=io.BytesIO(tgz), mode="r:gz") as tf:
        for m in tf.getmembers():
            if not (m.name.startswith(prefix + "/") and m.name.endswith(".json")):
                continue
            label = int(Path(m.name).stem)
            out[label] = json.load(tf.extractfile(m))["data"]
    if sorted(out) != list(range(10)):
        raise SystemExit(f"{prefix}: expected class files 0..9, found {sorted(out)}")
    return out


def to_images(data):
    """Flat float list or list of byte rows -> list of 784-byte images."""
    if data and isinstance(data[0], list):
        rows = data
        return [bytes(int(v) for v in row) for row in rows if len(row) == SIDE * SIDE]
    n = len(data) // (SIDE * SIDE)
    flat = bytes(min(255, max(0, round(v * 255))) for v in data[: n * SIDE * SIDE])
    return [flat[i * SIDE * SIDE:(i + 1) * SIDE * SIDE] for i in range(n)]


def write_idx(out, name, images, labels):
    with open(out / f"{name}-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)
    with open(out / f"{name}-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path)
    ap.add_argument("--cache", help="directory holding (or receiving) the npm tarballs")
    ap.add_argument("--fashion-per-class", type=int, default=1000)
    ap.add_argument("--skip-existing", action="store_true",
                    help="leave corpora whose two IDX files are already present")
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    for name, (pkg, version, prefix) in PACKAGES.items():
        if args.skip_existing and all(
            (args.out / f"{name}-{kind}.idx").exists() for kind in ("images", "labels")
        ):
            print(f"{name}: present", file=sys.stderr)
            continue
        arrays = class_arrays(fetch_tarball(pkg, version, args.cache), prefix)
        images, labels = [], []
        for label in range(10):
            imgs = to_images(arrays[label])
            if name == "fashion":
                imgs = imgs[: args.fashion_per_class]
            images += imgs
            labels += [label] * len(imgs)
        write_idx(args.out, name, images, labels)
        print(f"{name}: {len(images)} images", file=sys.stderr)


if __name__ == "__main__":
    main()
