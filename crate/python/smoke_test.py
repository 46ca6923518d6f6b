"""Smoke test for the Python extension.

Builds the extension with cargo, loads it from the build directory and
checks a handful of reference values. Run from anywhere:

    python3 python/smoke_test.py
"""

import importlib.util
import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_extension():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "bayes-uq-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    built = ROOT / "target" / "release" / "libbayes_uq_py.so"
    tmp = pathlib.Path(tempfile.mkdtemp())
    target = tmp / "bayes_uq_py.so"
    shutil.copy(built, target)
    spec = importlib.util.spec_from_file_location("bayes_uq_py", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def close(a, b, tol=1e-12):
    assert abs(a - b) <= tol, f"{a} != {b}"


def main():
    bu = load_extension()

    mc = bu.McPredictions([[[0.9, 0.1]], [[0.5, 0.5]]], "multiclass")
    t = mc.decompose()
    close(t.total[0], 0.6108643020548935)
    close(t.aleatoric[0], 0.5091150769756968)
    close(t.epistemic[0], 0.1017492250791967)

    ml = bu.McPredictions([[[0.9, 0.2]], [[0.5, 0.4]]], "multilabel")
    t = bu.decompose_multilabel(ml)
    close(t.total[0], 1.2217286041097869)
    close(t.aleatoric[0], 1.0958221222494189)
    close(t.epistemic[0], 0.125906481860368)

    close(bu.binary_entropy(0.5), math.log(2))
    close(bu.auc([0.1, 0.4, 0.35, 0.8], [False, False, True, True]), 0.75)
    close(bu.average_precision([0.1, 0.4, 0.35, 0.8], [False, False, True, True]), 0.8333333333333333)
    close(bu.d_prime(0.5), 0.0)
    close(bu.d_prime(0.975), 2.7718076, 1e-6)

    try:
        bu.McPredictions([[[0.2, 0.7]]], "multiclass")
    except ValueError as e:
        assert "RowSum" in str(e), e
    else:
        raise AssertionError("unnormalized rows accepted")

    perfect = bu.McPredictions([[[0.9, 0.1], [0.3, 0.7], [0.6, 0.4]]], "multiclass")
    report = json.loads(bu.macro_metrics_json(perfect, [[0], [1], [0]]))
    assert report["map_macro"] == 1.0 and report["d_prime"] == "inf", report
    try:
        bu.macro_metrics_json(mc, [[0]])
    except ValueError as e:
        assert "AllClassesSkipped" in str(e), e
    else:
        raise AssertionError("single item should skip every class")

    fractions, means, half = bu.retention_curve(
        bu.McPredictions([[[0.9, 0.1], [0.4, 0.6], [0.55, 0.45]]] * 3, "multiclass"),
        [[0], [1], [1]],
        replications=3,
    )
    assert len(fractions) == 20 and fractions[-1] == 1.0
    close(means[-1], 2 / 3)
    assert all(h == 0.0 for h in half)

    box = bu.boxplot_stats([1.0, 2.0, 3.0, 4.0])
    close(box["median"], 2.5)

    data = bu.write_npy_f64([2, 2], [1.0, 2.0, 3.0, 4.0])
    assert data[:6] == b"\x93NUMPY"
    assert bu.read_npy_bytes(data) == ("<f8", [2, 2], [1.0, 2.0, 3.0, 4.0])
    try:
        import numpy as np
        import io

        buf = io.BytesIO()
        np.save(buf, np.arange(6, dtype="<f4").reshape(2, 3))
        assert bu.read_npy_bytes(buf.getvalue()) == ("<f4", [2, 3], [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
        back = np.load(io.BytesIO(data))
        assert back.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    except ImportError:
        pass

    print(f"bayes_uq_py {bu.__version__}: smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
