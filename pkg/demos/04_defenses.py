"""
The aggregation rules on a toy round
====================================

Nine honest clients agree roughly; one client sends a large update in a
different direction. Each rule reports what it kept.
"""

import numpy as np

from dpotsim.defenses import DEFENSES, DefenseState, aggregate

rng = np.random.default_rng(0)
honest = np.array([1.0, -0.5, 0.25, 2.0]) + 0.1 * rng.normal(size=(9, 4))
attacker = np.array([[-10.0, 10.0, 10.0, -10.0]])
U = np.vstack([honest, attacker])
print("honest mean:", honest.mean(0).round(3))

# With no history, FLAIR drops the lowest client id and FoolsGold treats the
# nine near-identical honest updates as sybils; both rules need several rounds.
for name in DEFENSES:
    params = {"vote_threshold": 4} if name == "robustlr" else {}
    res = aggregate(name, U, DefenseState(), params, n_malicious=1)
    print(f"{name:>12}: {res.global_update.round(3)}  excluded={res.excluded}")

# FoolsGold needs history: two clients that always agree lose their weight
state = DefenseState()
for _ in range(5):
    V = rng.normal(size=(6, 20))
    V[4] = V[5]
    res = aggregate("foolsgold", V, state)
print("foolsgold weights after 5 rounds:", res.weights.round(3))
