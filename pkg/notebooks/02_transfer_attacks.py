"""Crafting adversarials on one net and testing them on three others.

Trains the standard four-model zoo (a few minutes on one core), then
compares IFGSM, TAIG-S and TAIG-R at eps = 0.05.
"""

import numpy as np

from taig import attacks, evaluation, experiments

nets, train, test, inputs = experiments.desk_setup(seed=0)
surrogate = nets[experiments.SURROGATE]
victims = {a: n for a, n in nets.items() if a != experiments.SURROGATE}
print(f"{len(inputs)} test images classified correctly by all of {', '.join(nets)}")

plans = {
    "ifgsm": attacks.AttackConfig(0.05, 1 / 255, 50),
    "mifgsm": attacks.AttackConfig(0.05, 1 / 255, 50, source=attacks.GradientSource(momentum=1.0)),
    "taig-s": attacks.taig_s(0.05, iterations=50),
    "taig-r": attacks.taig_r(0.05, iterations=50),
    "mtaig-r": attacks.taig_r(0.05, iterations=50, momentum=1.0),
}

print(f"\n{'attack':8s} {'white-box':>9s} " + " ".join(f"{a:>16s}" for a in victims) + f" {'avg':>6s} {'PSNR':>6s}")
for name, cfg in plans.items():
    m, res = evaluation.transfer_eval(surrogate, victims, inputs, cfg, name)
    psnr = evaluation.perceptual(inputs.images, res.adversarial).summary["psnr"]
    cells = " ".join(f"{r:16.3f}" for r in m.rates)
    print(f"{name:8s} {np.mean(res.success):9.3f} {cells} {m.average:6.3f} {psnr:6.2f}")

# The budget is respected exactly, not just to rounding.
print("\nmax |x_adv - x| =", np.abs(res.adversarial - inputs.images).max())

# Targeted mode climbs the target logit instead of descending the true one.
targets = evaluation.pick_targets(inputs.labels, inputs.n_classes, seed=0)
for name, cfg in [("ifgsm", attacks.AttackConfig(0.05, 1 / 255, 50, mode="targeted")),
                  ("taig-r", attacks.taig_r(0.05, iterations=50, mode="targeted"))]:
    m, _ = evaluation.transfer_eval(surrogate, victims, inputs, cfg, name, targets=targets)
    print(f"targeted {name:7s} black-box average {m.average:.3f}")
