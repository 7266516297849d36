"""Property suites behind ``spikerpe verify``.

Each suite returns a dict with at least ``passed`` and, on failure, a
serialisable ``failure`` describing the first failing case. The oracles
here are deliberately written without the module under test (plain
comparisons, integer loops) so a broken kernel cannot vouch for itself.
"""

from __future__ import annotations

import math
import time

import numpy as np

from . import autograd as ag
from .attention import gray_pe_map, log_pe_bias, xnor_map
from .bitcodec import verify_theorem1
from .lut import build_log2_lut, check_lut, search_exact_lut
from .neuron import surrogate_grad
from .tasks import MetricReport, metric_r2, metric_rse

# cheapest exact table found by search_exact_lut(512); re-checked on every run
RECORDED_LUT = {"N": 9, "K": 1, "P": 10}

SUITES = ("theorem1", "attention", "gradients", "lut", "metrics")


def suite_theorem1(b_max: int = 12, encode=None) -> dict:
    t0 = time.perf_counter()
    rep = verify_theorem1(b_max, encode=encode)
    elapsed = time.perf_counter() - t0
    out = rep.to_dict()
    out["seconds"] = elapsed
    out["passed"] = bool(rep.passed and elapsed < 5.0)
    if rep.counterexamples:
        out["failure"] = {"counterexample": list(rep.counterexamples[0])}
    return out


def _popcount(x):
    return np.array([bin(int(v)).count("1") for v in np.ravel(x)]).reshape(np.shape(x))


def check_duality(rng, dims=(4, 32, 256), pairs: int = 10_000) -> dict:
    """xnor score == D - Hamming distance on random row pairs."""
    for d in dims:
        q = rng.integers(0, 2, (pairs, 1, d), dtype=np.int8)
        k = rng.integers(0, 2, (pairs, 1, d), dtype=np.int8)
        got = xnor_map(q, k)[:, 0, 0]
        want = d - (q[:, 0] != k[:, 0]).sum(-1)
        bad = np.nonzero(got != want)[0]
        if bad.size:
            i = int(bad[0])
            return {"passed": False, "failure": {"D": d, "pair": i, "xnor": int(got[i]), "expected": int(want[i])}}
    return {"passed": True, "dims": list(dims), "pairs_per_dim": pairs}


def check_gray_decomposition(rng, max_length: int = 64, instances: int = 100, d: int = 8) -> dict:
    for length in range(1, max_length + 1):
        b = max(1, math.ceil(math.log2(length))) if length > 1 else 1
        idx = np.arange(length)
        g = idx ^ (idx >> 1)
        term = b - _popcount(g[:, None] ^ g[None, :])
        q = rng.integers(0, 2, (instances, length, d), dtype=np.int8)
        k = rng.integers(0, 2, (instances, length, d), dtype=np.int8)
        got = gray_pe_map(q, k, b)
        want = (q[:, :, None, :] == k[:, None, :, :]).sum(-1) + term
        if not np.array_equal(got, want):
            n, i, j = (int(v) for v in np.argwhere(got != want)[0])
            return {
                "passed": False,
                "failure": {"L": length, "instance": n, "i": i, "j": j, "got": int(got[n, i, j]), "expected": int(want[n, i, j])},
            }
    return {"passed": True, "lengths": [1, max_length], "instances": instances}


def check_log_pe(max_length: int = 512) -> dict:
    for length in range(2, max_length + 1):
        r = np.asarray(log_pe_bias(length))
        row = r[0]
        problem = None
        if not np.array_equal(r, r.T):
            problem = "not symmetric"
        elif (r < 0).any():
            problem = "negative entry"
        elif (np.diff(row) > 0).any():
            problem = "increases with distance"
        elif length >= 3 and int(r[0, 0]) != _ceil_log2(length - 1):
            problem = f"diagonal {int(r[0, 0])} != ceil(log2(L-1))"
        if problem:
            return {"passed": False, "failure": {"L": length, "problem": problem}}
    return {"passed": True, "lengths": [2, max_length]}


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length()


def suite_attention(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    parts = {
        "duality": check_duality(rng),
        "gray_decomposition": check_gray_decomposition(rng),
        "log_pe": check_log_pe(),
    }
    return {"passed": all(p["passed"] for p in parts.values()), **parts}


def gradient_cases(seed: int = 0) -> dict:
    """name -> (f, params) pairs for every smooth layer, in float64."""
    rng = np.random.default_rng(seed)

    def t(*shape, lo=-1.0, hi=1.0):
        return ag.tensor(rng.uniform(lo, hi, shape), requires_grad=True)

    w_out = rng.normal(size=(3, 4, 5))
    cases = {}
    x, w, b = t(3, 4, 6), t(6, 5), t(5)
    cases["linear"] = (lambda p: ag.sum_all(ag.mul(ag.linear(p[0], p[1], p[2]), w_out)), [x, w, b])

    bn = ag.BatchNormState.create(5)
    bn.gamma.values = rng.uniform(0.5, 1.5, 5)
    bn.beta.values = rng.uniform(-0.5, 0.5, 5)
    xb = t(4, 3, 5)
    wb = rng.normal(size=(4, 3, 5))

    def f_bn(p):
        bn.running_mean[:] = 0.0
        bn.running_var[:] = 1.0
        return ag.sum_all(ag.mul(ag.batch_norm(p[0], bn, training=True), wb))

    cases["batch_norm_train"] = (f_bn, [xb, bn.gamma, bn.beta])
    bn2 = ag.BatchNormState.create(5)
    bn2.running_mean = rng.normal(size=5)
    bn2.running_var = rng.uniform(0.5, 2.0, 5)
    cases["batch_norm_eval"] = (
        lambda p: ag.sum_all(ag.mul(ag.batch_norm(p[0], bn2, training=False), wb)),
        [t(4, 3, 5), bn2.gamma, bn2.beta],
    )

    q, k = t(2, 5, 4, lo=0, hi=1), t(2, 5, 4, lo=0, hi=1)
    ws = rng.normal(size=(2, 5, 5))
    cases["xnor_scores"] = (lambda p: ag.sum_all(ag.mul(ag.xnor_scores(p[0], p[1]), ws)), [q, k])
    cases["dot_scores"] = (lambda p: ag.sum_all(ag.mul(ag.dot_scores(p[0], p[1]), ws)), [t(2, 5, 4), t(2, 5, 4)])

    sc, v, sig = t(2, 5, 5), t(2, 5, 3), ag.tensor(np.array(0.4), requires_grad=True)
    wa = rng.normal(size=(2, 5, 3))
    cases["attend"] = (lambda p: ag.sum_all(ag.mul(ag.attend(p[0], p[1], p[2]), wa)), [sc, v, sig])

    labels = rng.integers(0, 4, 6)
    cases["cross_entropy"] = (lambda p: ag.cross_entropy(p[0], labels), [t(6, 4, lo=-2, hi=2)])
    target = rng.normal(size=(6, 3))
    cases["mse"] = (lambda p: ag.mse(p[0], target), [t(6, 3)])

    wm = rng.normal(size=(3, 4))
    cases["mean_select_reshape"] = (
        lambda p: ag.sum_all(
            ag.mul(ag.add(ag.mean(p[0], axis=0), ag.reshape(ag.select(p[0], 1, axis=0), (3, 4))), wm)
        ),
        [t(2, 3, 4)],
    )
    return cases


def suite_gradients(seed: int = 0, tol: float = 1e-4) -> dict:
    results = {}
    worst_name, worst = None, 0.0
    for name, (f, params) in gradient_cases(seed).items():
        err = ag.grad_check(f, params, eps=1e-5)
        results[name] = err
        if err > worst:
            worst_name, worst = name, err
    alpha = 2.0
    peak = float(surrogate_grad(0.0, alpha))
    peak_ok = abs(peak - alpha / 2) <= 1e-12
    out = {
        "passed": bool(worst < tol and peak_ok),
        "max_relative_error": results,
        "tolerance": tol,
        "surrogate_peak": peak,
    }
    if worst >= tol:
        out["failure"] = {"layer": worst_name, "relative_error": worst}
    elif not peak_ok:
        out["failure"] = {"surrogate_peak": peak, "expected": alpha / 2}
    return out


def suite_lut(length_max: int = 512, search: bool = False) -> dict:
    if search:
        lut, res = search_exact_lut(length_max)
        if lut is None:
            return {"passed": False, "failure": {"reason": "no (K <= 64, P <= 16) table is exact"}}
    else:
        lut = build_log2_lut(RECORDED_LUT["N"], RECORDED_LUT["K"], RECORDED_LUT["P"])
        res = check_lut(lut, length_max)
    storage_ok = lut.storage_bits == lut.k_segments * (lut.n_bits + 2 * lut.p_bits)
    coarse = check_lut(build_log2_lut(8, 1, 4), 168, length_min=168)
    out = {
        "passed": bool(res.passed and storage_ok),
        "recorded": res.to_dict(),
        "coarse_K1_P4_L168_mismatches": coarse.mismatches,
    }
    if not res.passed:
        out["failure"] = {"first_mismatch": res.first_mismatch}
    return out


def suite_metrics() -> dict:
    cases = []
    y = np.array([1.0, 2.0, 3.0])
    yhat = np.array([1.0, 2.0, 4.0])
    cases.append(("r2_hand", metric_r2(yhat, y), 0.5))
    cases.append(("r2_perfect", metric_r2(y, y), 1.0))
    cases.append(("r2_mean_predictor", metric_r2(np.full(3, 2.0), y), 0.0))
    cases.append(("rse_hand", metric_rse(yhat, y), math.sqrt(0.5)))
    cases.append(("rse_perfect", metric_rse(y, y), 0.0))
    rep = MetricReport()
    two = np.stack([y, np.full(3, 5.0)], axis=1)
    cases.append(("r2_excludes_constant_channel", metric_r2(two + 0.0, two, rep), 1.0))
    failures = [
        {"case": n, "got": g, "expected": e} for n, g, e in cases if not math.isclose(g, e, rel_tol=0, abs_tol=1e-12)
    ]
    if rep.excluded_channels != [(1, 0)]:
        failures.append({"case": "excluded_channels", "got": rep.excluded_channels})
    # moving a prediction toward the target never hurts either metric
    rng = np.random.default_rng(0)
    target = rng.normal(size=(20, 3))
    pred = rng.normal(size=(20, 3))
    prev = (metric_r2(pred, target), metric_rse(pred, target))
    for step in np.linspace(0.1, 1.0, 10):
        cur = pred + step * (target - pred)
        now = (metric_r2(cur, target), metric_rse(cur, target))
        if now[0] < prev[0] - 1e-12 or now[1] > prev[1] + 1e-12:
            failures.append({"case": "monotone", "step": float(step)})
            break
        prev = now
    out = {"passed": not failures, "cases": {n: g for n, g, _ in cases}}
    if failures:
        out["failure"] = failures[0]
    return out


def run(scope: str = "all", **kw) -> dict:
    names = SUITES if scope == "all" else (scope,)
    fns = {
        "theorem1": suite_theorem1,
        "attention": suite_attention,
        "gradients": suite_gradients,
        "lut": suite_lut,
        "metrics": suite_metrics,
    }
    report = {}
    for n in names:
        args = kw.get(n, {})
        report[n] = fns[n](**args)
    report["passed"] = all(report[n]["passed"] for n in names)
    return report
