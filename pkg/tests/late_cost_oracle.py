"""Independent closed forms for the cost u^n e^{-au} 1[tau, inf) under M/M/1.

Written straight from the residue calculation, without importing mg1w.
``wprime_printed``/``w_printed`` keep the commonly printed form, which omits
the binomial factors of u^q = sum_t C(q,t) tau^(q-t) (u-tau)^t and is therefore
exact only for n <= 1. ``wprime``/``w`` restore those factors.
Running this file rewrites the golden table used by the CLI test.
"""

import math
import sys
from pathlib import Path


def wprime_printed(u, n, a, tau, lam, om):
    b = om - lam + a
    if u < tau:
        s = sum((b * tau) ** t / math.factorial(t) for t in range(n + 1))
        return math.factorial(n) * lam**2 * math.exp(-a * tau) / b ** (n + 1) * s * math.exp(-(om - lam) * (tau - u))
    acc = 0.0
    for t in range(n + 1):
        inner = tau ** (n - t)
        inner += sum(math.factorial(n) * lam * tau ** (q - t) / (math.factorial(q) * b ** (n - q + 1)) for q in range(t, n + 1))
        acc += inner * (u - tau) ** t
    return lam * acc * math.exp(-a * u)


def w_printed(u, n, a, tau, lam, om):
    b = om - lam + a
    s = sum((b * tau) ** t / math.factorial(t) for t in range(n + 1))
    first = math.factorial(n) * lam**2 * math.exp(-b * tau) / ((om - lam) * b ** (n + 1)) * s
    first *= math.exp((om - lam) * min(u, tau)) - 1.0

    def brace(t):
        return 1.0 + sum(
            math.factorial(n) * lam * tau / (math.factorial(q) * (b * tau) ** (n - q + 1)) for q in range(t, n + 1)
        )

    if a == 0:
        x = max(u / tau - 1.0, 0.0)
        return first + lam * tau ** (n + 1) * sum(brace(t) * x ** (t + 1) / (t + 1) for t in range(n + 1))
    second = 0.0
    for t in range(n + 1):
        inner = sum(brace(j) * math.factorial(j) / (a * tau) ** j for j in range(t, n + 1))
        second += inner * (a * max(u - tau, 0.0)) ** t / math.factorial(t)
    second *= lam * tau**n * math.exp(-a * max(u, tau)) / a
    third = lam * tau**n * math.exp(-a * tau) / a * sum(brace(t) * math.factorial(t) / (a * tau) ** t for t in range(n + 1))
    return first - second + third


def _front(u, n, a, tau, lam, om):
    b = om - lam + a
    s = sum((b * tau) ** t / math.factorial(t) for t in range(n + 1))
    return math.factorial(n) * lam**2 * math.exp(-a * tau) / b ** (n + 1) * s


def _tail_coeffs(n, a, tau, lam, om):
    """K_t with w'(u) = sum_t K_t (u-tau)^t e^{-au} for u > tau."""
    b = om - lam + a
    out = []
    for t in range(n + 1):
        k = math.comb(n, t) * tau ** (n - t)
        k += sum(
            math.factorial(n) * lam * math.comb(q, t) * tau ** (q - t) / (math.factorial(q) * b ** (n - q + 1))
            for q in range(t, n + 1)
        )
        out.append(lam * k)
    return out


def wprime(u, n, a, tau, lam, om):
    if u < tau:
        return _front(u, n, a, tau, lam, om) * math.exp(-(om - lam) * (tau - u))
    x = u - tau
    return sum(k * x**t for t, k in enumerate(_tail_coeffs(n, a, tau, lam, om))) * math.exp(-a * u)


def w(u, n, a, tau, lam, om):
    g = om - lam
    v = _front(u, n, a, tau, lam, om) * math.exp(-g * tau) / g * (math.exp(g * min(u, tau)) - 1.0)
    if u <= tau:
        return v
    x = u - tau
    for t, k in enumerate(_tail_coeffs(n, a, tau, lam, om)):
        if a == 0:
            part = x ** (t + 1) / (t + 1)
        else:
            # int_0^x s^t e^{-as} ds
            head = sum((a * x) ** j / math.factorial(j) for j in range(t + 1))
            part = math.factorial(t) / a ** (t + 1) * (1.0 - math.exp(-a * x) * head)
        v += k * math.exp(-a * tau) * part
    return v


# the committed configuration configs/late_cost.yaml
CASE = dict(n=2, a=0.5, tau=1.5, lam=0.5, om=1.0)
GRID = [0.25 * k for k in range(25)]


def golden_rows():
    return [(u, w(u, **CASE), wprime(u, **CASE)) for u in GRID]


if __name__ == "__main__":
    out = Path(__file__).with_name("data") / "late_cost_golden.csv"
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("u,w,wprime\n")
        for r in golden_rows():
            fh.write(",".join(repr(float(x)) for x in r) + "\n")
    sys.stdout.write(f"wrote {out}\n")
