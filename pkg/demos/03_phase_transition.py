"""Why influence spikes and flips sign at a phase transition.

A posterior split between a simple phase U and a complex phase V gives two
losses a covariance with a within-phase part and a between-phase part. The
between part grows as pi_U (1 - pi_U), so it peaks when the phases are
equally likely. If the within-phase covariances have opposite signs, the
total changes sign as mass moves from U to V.

Run: python3 demos/03_phase_transition.py
"""
import numpy as np

from stagewise.phases import MixturePosterior, PhasePair, simulate_bif_through_transition, transition_point

# complex phase wins once n |dL| outgrows dlambda log n
res = transition_point(PhasePair(delta_L=-0.01, delta_lambda=1.0))
print(f"transition at n* = {res.n:.2f} ({res.status})")

# log-odds of V over U, -n dL - dlambda log n, is zero at n*
n = np.linspace(200, 1500, 27)
pi_u = 1.0 / (1.0 + np.exp(0.01 * n - np.log(n)))

cov_u = np.array([[1.0, 0.3], [0.3, 1.0]])
cov_v = np.array([[1.0, -0.3], [-0.3, 1.0]])
mix = MixturePosterior(1.0, np.array([1.0, 1.0]), np.array([-0.5, -0.5]), cov_u, cov_v)
tr = simulate_bif_through_transition(mix, pi_u, 0, 1)

print("\n     n   pi_U    BIF(0 -> 1)   (between-phase part)")
for k in range(0, n.size, 2):
    bar = "#" * int(round(40 * abs(tr.values[k])))
    between = pi_u[k] * (1 - pi_u[k]) * 1.5**2
    print(f"{n[k]:6.0f}  {pi_u[k]:.3f}  {tr.values[k]:+.4f}  ({-between:+.4f}) {bar}")
