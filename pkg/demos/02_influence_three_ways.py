"""Influence of dog on cat and sparrow, measured three ways.

Compares the sampled Bayesian influence (BIF), the closed-form influence of
the linear-network solution and leave-one-out retraining along the whole
training run. Dog first helps both queries (negative influence, while the
network only knows animal from plant) and later hurts sparrow once mammal and
bird are told apart.

Run: python3 demos/02_influence_three_ways.py  (about a minute)
"""
from stagewise.config import ExperimentConfig
from stagewise.experiments import run_report

cfg = ExperimentConfig(methods=("bif", "analytic", "loo", "classical_gnh"))
rep = run_report(cfg)

print("branch epochs:")
for b in rep["branches"][:3]:
    print(f"  {b['label']:16s} {b['epoch']}")

for pair in rep["pairs"]:
    print(f"\n{pair}")
    print("  method         neg peak  pos peak  sign change")
    for m, p in rep["peak_epochs"][pair].items():
        flip = rep["sign_change_epochs"][pair][m]
        print(f"  {m:13s} {p['neg']:9.0f} {p['pos']:9.0f} {flip:12.0f}")
    print("  trace correlations:")
    for k, r in rep["correlations"][pair].items():
        print(f"    {k:24s} {r:+.3f}")
