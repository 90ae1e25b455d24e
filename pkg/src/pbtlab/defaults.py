"""Frozen surrogate-task constants.

Acceptance numbers depend on these values; change them only together with the
tests that pin the resulting losses.
"""

QUADRATIC = {
    "lr": 0.01,
    "theta0": (0.9, 0.9),
}

REGRESSION = {
    "dim": 12,
    "n_train": 18,
    "n_select": 512,
    "n_report": 512,
    "label_noise": 0.7,
    "lr": 0.08,
    "sigma_max": 2.0,
    "sigma_init": 0.1,
}

SPECTOY = {
    "frames": 64,
    "bands": 80,
    "n_train": 64,
    "n_select": 192,
    "n_report": 192,
    "tone_bands": 6,
    "tone_gain": 0.3,
    "bg_noise": 1.2,
    "lr": 0.1,
    "batch": 4,
}
