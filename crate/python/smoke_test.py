"""Smoke test for the Python extension.

Build and install it first, for example
    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/*.whl
then run: python python/smoke_test.py
"""

import math
import tempfile
from pathlib import Path

import fast_transfer as ft

ROOT = Path(__file__).resolve().parent.parent

SYNTH = """
[data]
source_classes = [0, 1]
target_classes = [2, 3]

[data.corpus]
kind = "synth_blobs"
classes = 4
per_class = 60
image_size = 12
seed = 3

[pretrain]
epochs = 2
batch_size = 10
lr = 0.05

[adopt]
init = { mode = "zero" }

[finetune]
mode = "fast"
alpha = 0.1
beta = 0.01
batch_size = 4
max_steps = 21
seeds = [1, 2]

[output]
dir = "runs"
"""


def main() -> None:
    p = ft.softmax_rows([[math.log(2.0), 0.0], [0.0, 0.0]])
    assert abs(p[0][0] - 2 / 3) < 1e-12 and p[1] == [0.5, 0.5]
    assert abs(ft.nll_loss([[1 / 3] * 3], [1]) - math.log(3)) < 1e-9
    assert ft.prediction_error([[0.5, 0.5]], [0]) == [[0.5, -0.5]]
    assert ft.fibonacci_checkpoints(100) == [1, 2, 3, 5, 8, 13, 21, 34, 55, 89]
    assert ft.validation_due(55) and not ft.validation_due(56)

    a = ft.Tensor.from_rows([[1.0, 2.0], [3.0, 4.0]])
    b = ft.Tensor([2, 1], [5.0, 6.0])
    assert (a @ b).tolist() == [[17.0], [39.0]]

    head = ft.ClassifierHead(5, 8)
    z = head.forward([[0.3] * 8, [-2.0] * 8])
    assert all(v == 0.0 for row in z for v in row)
    assert all(abs(v - 0.2) < 1e-15 for row in ft.softmax_rows(z) for v in row)
    assert ft.ClassifierHead(3, 4, "normal", scale=1e-8, seed=1).frobenius_norm() < 1e-6

    ds = ft.synth_blobs(5, 10, 8, 0)
    assert len(ds) == 50 and ds.class_histogram() == [10] * 5
    train, hold = ds.split(0.2, 1)
    assert hold.class_histogram() == [2] * 5 and len(train) == 40

    digits = ft.load_idx(ROOT / "data/mnist5k/images-idx3-ubyte.gz", ROOT / "data/mnist5k/labels-idx1-ubyte.gz")
    assert len(digits) == 5000 and digits.image_shape == [1, 28, 28]

    exp = ft.Experiment.from_toml(SYNTH)
    assert exp.source_accuracy() > 0.9
    run = exp.finetune(1)
    steps = run.steps()
    assert abs(steps[0]["entropy"] - math.log(2)) < 1e-10
    assert steps[1]["theta_dist"] == 0.0
    assert [r["step"] for r in run.adp()] == [1, 2, 3, 5, 8, 13, 21]
    assert run.adp_csv() == exp.finetune(1).adp_csv()
    with tempfile.TemporaryDirectory() as d:
        run.save(d)
        assert (Path(d) / "metrics.csv").read_text() == run.metrics_csv()

    failed = [name for name, ok, _ in ft.verify() if not ok]
    assert not failed, failed
    print("python smoke test passed")


if __name__ == "__main__":
    main()
