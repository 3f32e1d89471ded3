"""
A short federated run with and without the attack
=================================================

The desk defaults (20 clients, one attacker, 30 rounds) under Median.
Each run takes roughly ten seconds. The CLI equivalent is
``dpotsim run --config configs/desk.cfg --attack none|ft|dpot``.
"""

import dataclasses

from dpotsim.engine import FLConfig, run_experiment
from dpotsim.metrics import rounds_csv_text

cfg = FLConfig(defense="median")
for attack in ("none", "ft", "dpot"):
    log = run_experiment(dataclasses.replace(cfg, attack=attack))
    s = log.summary
    print(f"{attack:>5}: final ASR {s.final_asr:.3f}  avg ASR {s.avg_asr:.3f}  MA {s.final_ma:.3f}")

print("malicious client:", log.malicious_ids)
print("\n".join(rounds_csv_text(log.records).splitlines()[-5:]))
