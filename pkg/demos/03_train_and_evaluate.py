"""Train the classifier on the demo corpus and report metrics.

Run demos/02_build_fixture_corpus.py first (this script builds the corpus
itself if it is missing). Training is from scratch on CPU and takes well
under a minute at demo scale.

    python3 demos/03_train_and_evaluate.py
"""

import subprocess
import sys
from pathlib import Path

from mapforensics.corpus import load_manifest
from mapforensics.detector import (
    Predictor,
    TrainingConfig,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    train,
)
from mapforensics.metrics import compute_metrics, render_report

OUT = Path(__file__).resolve().parent.parent / "demo-output"


def main() -> None:
    corpus = OUT / "corpus"
    manifest_path = corpus / "manifest.jsonl"
    if not manifest_path.exists():
        print("demo corpus missing; building it first...", flush=True)
        builder = Path(__file__).with_name("02_build_fixture_corpus.py")
        subprocess.run([sys.executable, str(builder)], check=True)

    manifest = load_manifest(manifest_path)
    print(f"training on {len(manifest.subset('train'))} records, "
          f"validating on {len(manifest.subset('val'))}")

    config = TrainingConfig(
        pretrained_init=False,  # offline: no downloaded backbone weights
        max_epochs=3,
        early_stop_patience=3,
        batch_size=8,
        seed=0,
    )
    checkpoint = train(manifest, corpus, config)
    for stats in checkpoint.log.epochs:
        print(f"  epoch {stats.epoch}: train_loss={stats.train_loss:.4f} "
              f"val_loss={stats.val_loss:.4f} val_acc={stats.val_accuracy:.3f}")
    print(f"best epoch: {checkpoint.log.best_epoch}")

    model_path = OUT / "model.pt"
    save_checkpoint(checkpoint, model_path)
    predictor = Predictor.from_checkpoint(load_checkpoint(model_path))

    test_records = manifest.subset("test")
    matrix = evaluate(predictor, test_records, corpus)
    print()
    print(render_report(compute_metrics(matrix)))

    sample = test_records[0]
    prediction = predictor.predict_path(corpus / sample.image_path)
    print(f"single image: {sample.image_path}")
    print(f"  true={sample.label} predicted={prediction.label} p={prediction.probability:.4f}")


if __name__ == "__main__":
    main()
