"""
Certified edit budgets and random attacks
=========================================

An edit changes at most a + 1 green tokens, so a sequence that clears the
threshold with room to spare survives a proportional number of edits.
"""

import math

from dipmark import AttackSpec, DetectorConfig, GenerationConfig, SecretKey, Vocabulary
from dipmark import attack, certified_radius, default_provider, detect, generate

model = default_provider()
key = SecretKey(bytes(range(16)))
toks = generate(model, GenerationConfig(key, 260, prompt=(0, 1), rng_seed=1)).tokens

config = DetectorConfig(key, model.vocab_size)
report = detect(toks, config)
z = 1.517 / math.sqrt(report.scored)
radius = certified_radius(report.phi, z, gamma=0.5, a=1)
budget = radius.edits(report.scored)
print(f"phi={report.phi:.3f}  z={z:.3f}  eps0={radius.epsilon0:.3f}  -> {budget} edits certified")

##############################################################################
# Spend the whole budget in each attack mode; detection at the same z holds.
fixed = DetectorConfig(key, model.vocab_size, z=z)
vocab = Vocabulary(model.vocab_size)
for mode in ("substitute", "insert", "delete"):
    edited = attack(toks, AttackSpec(mode, budget / len(toks), rng_seed=5), vocab)
    r = detect(edited, fixed)
    print(f"{mode:10s} phi={r.phi:.3f} detected={r.decision}")

##############################################################################
# Far beyond the budget the signal fades.
for eps in (0.3, 0.6, 0.9):
    r = detect(attack(toks, AttackSpec("substitute", eps, 5), vocab), fixed)
    print(f"eps={eps:.1f} phi={r.phi:.3f} detected={r.decision}")
