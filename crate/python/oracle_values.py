"""Regenerate the closed decomposition reference values at 40 digits.

    python3 python/oracle_values.py
"""

from mpmath import mp, mpf, log, sqrt, erfinv

mp.dps = 40


def xlnx(p):
    return mpf(0) if p == 0 else p * log(p)


def categorical(ps):
    return -sum(xlnx(p) for p in ps)


def binary(p):
    return categorical([p, 1 - p])


def multiclass(samples):
    m = len(samples)
    mean = [sum(s[k] for s in samples) / m for k in range(len(samples[0]))]
    total = categorical(mean)
    aleatoric = sum(categorical(s) for s in samples) / m
    return total, aleatoric, total - aleatoric


def multilabel(samples):
    m = len(samples)
    total = aleatoric = mpf(0)
    for k in range(len(samples[0])):
        mean = sum(s[k] for s in samples) / m
        total += binary(mean)
        aleatoric += sum(binary(s[k]) for s in samples) / m
    return total, aleatoric, total - aleatoric


def d_prime(auc):
    return sqrt(2) * sqrt(2) * erfinv(2 * mpf(auc) - 1)


if __name__ == "__main__":
    f = mpf
    print("multiclass", *multiclass([[f("0.9"), f("0.1")], [f("0.5"), f("0.5")]]))
    print("multilabel", *multilabel([[f("0.9"), f("0.2")], [f("0.5"), f("0.4")]]))
    for auc in ["0.973", "0.975", "0.972", "0.971"]:
        lo, hi = d_prime(mpf(auc) - f("0.0005")), d_prime(mpf(auc) + f("0.0005"))
        print(f"d' AUC {auc}: [{mp.nstr(lo, 8)}, {mp.nstr(hi, 8)}]")
