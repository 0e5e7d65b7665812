"""Regenerate the committed fixtures: `dlv-train-fixtures --out-dir DIR`."""

from __future__ import annotations

import argparse
from pathlib import Path

from .export import write_images_csv, write_labels_csv, write_weights
from .train import TrainSpec, train_2d_curve, train_mini_classifier


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs-2d", type=int, default=9000)
    parser.add_argument("--epochs-digits", type=int, default=800)
    args = parser.parse_args(argv)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    result = train_2d_curve(
        TrainSpec(hidden=(20, 20, 20), epochs=args.epochs_2d, seed=args.seed, accuracy_target=0.99)
    )
    write_weights(out / "curve2d.json", result.document)
    print(f"curve2d: accuracy {result.accuracy:.4f} (seed {result.seed})")

    result = train_mini_classifier(
        TrainSpec(
            hidden=(32, 24),
            epochs=args.epochs_digits,
            seed=args.seed,
            accuracy_target=0.90,
            weight_decay=1e-4,
        )
    )
    write_weights(out / "minidigits.json", result.document)
    test_x, test_y = result.test_set
    write_images_csv(out / "digits_test_images.csv", test_x[:100])
    write_labels_csv(out / "digits_test_labels.csv", test_y[:100])
    print(f"minidigits: accuracy {result.accuracy:.4f} (seed {result.seed})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
