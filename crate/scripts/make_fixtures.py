"""Builds the recorded fixtures used by the acceptance suite.

Histogram pairs are integer cluster counts (k = 500, 5,000 conversations per
side) searched so the smoothed forward and backward KL hit the recorded
values. Ablation results are synthetic JS values for 24 simulators on two
datasets under two embedding models, searched so the pooled z-scored Spearman
correlation hits the recorded value.

Usage: python3 scripts/make_fixtures.py crates/core/tests/fixtures
"""

import json
import sys

import numpy as np
from scipy.stats import spearmanr

K = 500
N = 5000

SIMULATORS = [
    "GPT-5.4", "GPT-5.4 mini", "GPT-5.4 nano", "Claude Haiku 4.5", "Gemini 3.1 Pro",
    "Gemini 3 Flash", "Gemini 3.1 Flash-Lite", "Qwen3.5-122B-A10B", "Qwen3.5-35B-A3B",
    "Qwen3.5-27B", "Qwen3.5-9B", "Qwen3.5-4B", "Qwen3.5-2B", "Qwen3.5 0.8B",
    "Llama-3.3-70B-Instruct", "Llama-3.1-8B-Instruct", "gpt-oss-120b", "gpt-oss-20b",
    "gemma-4-31B-it", "gemma-4-26B-A4B-it", "gemma-4-E4B-it", "gemma-4-E2B-it", "UserLM-8b",
    "Qwen3.5-397B-A17B",
]


def smoothed(c):
    a = 1.0 / K
    return (c + a) / (c.sum() + K * a)


def kl(p, q):
    return float(np.sum(p * np.log(p / q)))


def js(p, q):
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def metrics(r, s):
    p, q = smoothed(r), smoothed(s)
    return kl(p, q), kl(q, p), js(p, q)


def search_pair(target_fwd, target_bwd, seed):
    rng = np.random.default_rng(seed)
    real = rng.multinomial(N, rng.dirichlet(np.full(K, 2.0)))
    sim = real.copy()

    def loss(s):
        f, b, _ = metrics(real, s)
        return (f - target_fwd) ** 2 + (b - target_bwd) ** 2

    cur = loss(sim)
    for step in range(400_000):
        i, j = rng.integers(K, size=2)
        n = int(rng.integers(1, 4))
        if i == j or sim[i] < n:
            continue
        sim[i] -= n
        sim[j] += n
        new = loss(sim)
        if new <= cur:
            cur = new
        else:
            sim[i] += n
            sim[j] -= n
        if cur < 1e-10:
            break
    return real, sim


def pooled_rho(a, b):
    za, zb = [], []
    for ds in sorted(a):
        names = sorted(a[ds])
        va = np.array([a[ds][n] for n in names])
        vb = np.array([b[ds][n] for n in names])
        za.extend((va - va.mean()) / va.std())
        zb.extend((vb - vb.mean()) / vb.std())
    return spearmanr(za, zb).statistic


def ablation(target, seed):
    rng = np.random.default_rng(seed)
    base = {
        ds: {n: float(v) for n, v in zip(SIMULATORS, rng.uniform(0.15, 0.45, len(SIMULATORS)))}
        for ds in ("coding", "writing")
    }
    best = None
    for scale in np.linspace(0.005, 0.08, 400):
        for trial in range(20):
            other = {
                ds: {n: round(v + rng.normal(0, scale), 6) for n, v in vals.items()}
                for ds, vals in base.items()
            }
            rho = pooled_rho(base, other)
            if best is None or abs(rho - target) < abs(best[0] - target):
                best = (rho, other)
        if abs(best[0] - target) < 5e-4:
            break
    rounded = {ds: {n: round(v, 6) for n, v in vals.items()} for ds, vals in base.items()}
    return {"bge-small-en-v1.5": rounded, "e5-large-v2": best[1]}, best[0]


def main(out):
    rows = [
        ("real_users_coding", 0.025, 0.025, 0.028, 1),
        ("gemini_3_1_pro_coding", 0.260, 0.256, 0.246, 2),
    ]
    for name, f, b, j, seed in rows:
        real, sim = search_pair(f, b, seed)
        got = metrics(real, sim)
        doc = {
            "name": name,
            "k": K,
            "alpha": 1.0 / K,
            "real_counts": real.tolist(),
            "sim_counts": sim.tolist(),
            "recorded": {"kl_fwd": f, "kl_bwd": b, "js": j},
        }
        with open(f"{out}/histograms_{name}.json", "w") as fh:
            json.dump(doc, fh)
        print(name, "kl_fwd %.5f kl_bwd %.5f js %.5f" % got)
    results, rho = ablation(0.97, 7)
    doc = {"recorded_rho_js": 0.97, "results": results}
    with open(f"{out}/ablation_embedding_js.json", "w") as fh:
        json.dump(doc, fh, indent=1)
    print("ablation rho %.5f" % rho)


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".")
