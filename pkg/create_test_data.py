"""Write a synthetic labelled dataset in the objective module's CSV import format."""
import sys

import numpy as np

from ngosim.utils import TAG_DATA, rng_stream, write_csv


def create_dataset(path, samples=400, d=5, classes=4, seed=0, separation=2.0):
    rng = rng_stream(seed, TAG_DATA)
    centers = separation * rng.standard_normal((classes, d))
    labels = rng.integers(classes, size=samples)
    features = centers[labels] + rng.standard_normal((samples, d))
    header = [f'feature_{j}' for j in range(d)] + ['label']
    rows = ([*(repr(float(v)) for v in features[i]), int(labels[i])] for i in range(samples))
    write_csv(path, header, rows)
    return path


if __name__ == '__main__':
    target = sys.argv[1] if len(sys.argv) > 1 else 'data/synthetic.csv'
    create_dataset(target)
    print(f'Wrote {target}')
