"""Download the MNIST IDX files for the acceptance criteria that need them.

Usage:
    python3 scripts/fetch_mnist.py [--dir data/mnist]
    export LIPNET_DATA_DIR=$PWD/data/mnist

Tries each mirror in order and verifies the downloaded pair parses and
cross-checks (60000 train / 10000 test). Files are kept gzipped; the loader
reads .gz transparently.
"""

import argparse
import sys
import urllib.request
from pathlib import Path

MIRRORS = (
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
)

FILES = (
    "train-images-idx3-ubyte.gz",
    "train-labels-idx1-ubyte.gz",
    "t10k-images-idx3-ubyte.gz",
    "t10k-labels-idx1-ubyte.gz",
)


def fetch(name: str, dest: Path) -> None:
    if dest.exists():
        print(f"{dest} already present, skipping")
        return
    last_error = None
    for mirror in MIRRORS:
        url = mirror + name
        try:
            print(f"fetching {url}")
            with urllib.request.urlopen(url, timeout=60) as resp:
                blob = resp.read()
            dest.write_bytes(blob)
            return
        except OSError as e:
            last_error = e
            print(f"  failed: {e}")
    raise SystemExit(f"could not fetch {name} from any mirror: {last_error}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dir", type=Path, default=Path("data/mnist"))
    args = parser.parse_args()
    args.dir.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        fetch(name, args.dir / name)

    from lipnet import load_idx
    train = load_idx(args.dir / FILES[0], args.dir / FILES[1])
    test = load_idx(args.dir / FILES[2], args.dir / FILES[3])
    print(f"ok: {train.n} train / {test.n} test samples under {args.dir}")
    print(f"export LIPNET_DATA_DIR={args.dir.resolve()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
