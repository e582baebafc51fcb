"""
Secure-SGD on a synthetic benchmark
===================================

Train a one-hidden-layer network with clipped, noisy gradients and a fixed
heterogeneous perturbation of its first hidden layer, certify a few test
inputs, then attack them.
"""

# %%
import numpy as np

from hgmdp.attacks import AttackConfig, iterated_attack
from hgmdp.evaluation import CertParams, desk_config, desk_data, evaluate
from hgmdp.rng import spawn
from hgmdp.robustness import certify, mc_predict
from hgmdp.secure_sgd import train, train_dpsgd_baseline

seed = 20190101
train_ds, test_ds = desk_data(seed)
tm = train(desk_config(seed), train_ds)
print("hidden width", tm.model.first_hidden_size, " delta_f", round(tm.delta_f, 2), " sigma_r", round(tm.gamma_spec.sigma, 3))
print("last losses", [round(h[1], 3) for h in tm.history[-3:]])

# %%
# Redistribution vector: components whose loss gradient is large get more noise.
r = np.sort(tm.r.r)[::-1]
print("largest r", r[:4], " smallest r", r[-4:])

# %%
# Certify the first ten test inputs with 300 noise draws at 95% confidence.
streams = spawn(seed, 20)
results = [certify(tm, test_ds.inputs[i], 0.0, 300, 0.95, streams[i]) for i in range(10)]
for i, res in enumerate(results):
    print(i, "label", res.label, "true", test_ds.labels[i], "mu_max", f"{res.mu_max:.2e}")

# %%
# Attack each certified input just inside its radius; the smoothed prediction should hold.
for i, res in enumerate(results):
    if res.mu_max == 0:
        continue
    x_adv = iterated_attack(tm, test_ds.inputs[i], test_ds.labels[i], AttackConfig("madry", 0.99 * res.mu_max))
    print(i, "before", res.label, "after", mc_predict(tm, x_adv, 300, streams[10 + i]))

# %%
# Accuracy under I-FGSM for Secure-SGD and the plain DP-SGD baseline.
attack = AttackConfig("ifgsm", 0.05, 10, seed=seed)
sweep = (0.0, 1e-4, 1e-3, 0.05)
print(evaluate(tm, test_ds, attack, CertParams(300, 0.95, seed), sweep).csv_body())
base = train_dpsgd_baseline(desk_config(seed), train_ds)
print(evaluate(base, test_ds, attack, CertParams(300, 0.95, seed), sweep).csv_body())
