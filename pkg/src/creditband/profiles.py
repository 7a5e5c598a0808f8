"""Bundled demand profiles: app-probability tables and evening gamma curves.

The app-probability table pins, per device type and evening half-hour slot,
the probability that traffic belongs to each of the four application kinds.
A gateway's mixture is the device-count-weighted average of its devices'
columns. Gamma curves scale how much a gateway values bandwidth in each slot:
a fixed diurnal bump times per-gateway, per-day lognormal noise.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .utility import APP_KINDS, AppUtilityParams, UtilityModel, default_app_params

DEFAULT_SLOTS_PER_DAY = 12

# diurnal shape: quiet early evening, peak near mid-evening (slot units)
GAMMA_BASE_LEVEL = 1.0
GAMMA_BUMP_AMPLITUDE = 2.0
GAMMA_BUMP_CENTER = 6.5
GAMMA_BUMP_WIDTH = 2.5

# per-gateway device counts; four hardware mixes cycled over 16 gateways
DEFAULT_DEVICE_MIX = [
    {"iphone": 1, "android": 1, "windows": 1, "mac": 1},   # gateways 1,4,9,13
    {"iphone": 2, "android": 0, "windows": 2, "mac": 1},   # gateways 2,6,10,14
    {"iphone": 1, "android": 1, "windows": 1, "mac": 2},   # gateways 3,7,11,15
    {"iphone": 2, "android": 0, "windows": 1, "mac": 1},   # gateways 5,8,12,16
]
DEFAULT_MIX_ASSIGNMENT = {
    0: [1, 4, 9, 13],
    1: [2, 6, 10, 14],
    2: [3, 7, 11, 15],
    3: [5, 8, 12, 16],
}


def default_device_mix(n: int = 16) -> list[dict]:
    """Per-gateway device counts (1-indexed assignment flattened to a list)."""
    mix = [None] * n
    for row, gateways in DEFAULT_MIX_ASSIGNMENT.items():
        for g in gateways:
            if g <= n:
                mix[g - 1] = dict(DEFAULT_DEVICE_MIX[row])
    # any gateway outside the 16-slot table cycles through the rows
    for i in range(n):
        if mix[i] is None:
            mix[i] = dict(DEFAULT_DEVICE_MIX[i % len(DEFAULT_DEVICE_MIX)])
    return mix


def load_app_table(path=None) -> dict[str, np.ndarray]:
    """Load the app-probability table as {device_type: (slots, 4) array}."""
    if path is None:
        blob = resources.files("creditband").joinpath("data/app_probabilities.json").read_text()
        data = json.loads(blob)
    else:
        with open(path) as f:
            data = json.load(f)
    kinds = data["app_kinds"]
    if tuple(kinds) != APP_KINDS:
        raise ValueError(f"app table kinds {kinds} do not match {APP_KINDS}")
    table = {}
    for dev, cols in data["device_types"].items():
        mat = np.column_stack([np.asarray(cols[k], dtype=float) for k in APP_KINDS])
        if np.any(np.abs(mat.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError(f"columns for {dev} must sum to 1 per slot")
        table[dev] = mat
    return table


def gateway_app_probs(device_counts: dict, table: dict[str, np.ndarray]) -> np.ndarray:
    """Device-count-weighted app mixture for one gateway, shape (slots, 4)."""
    total = sum(device_counts.values())
    if total <= 0:
        raise ValueError("gateway needs at least one device")
    acc = None
    for dev, count in device_counts.items():
        if count == 0:
            continue
        if dev not in table:
            raise ValueError(f"unknown device type {dev!r}")
        part = count * table[dev]
        acc = part if acc is None else acc + part
    return acc / total


def gamma_base(slots_per_day: int = DEFAULT_SLOTS_PER_DAY) -> np.ndarray:
    """Base diurnal gamma profile over one evening."""
    slots = np.arange(slots_per_day)
    bump = np.exp(-0.5 * ((slots - GAMMA_BUMP_CENTER) / GAMMA_BUMP_WIDTH) ** 2)
    return GAMMA_BASE_LEVEL + GAMMA_BUMP_AMPLITUDE * bump


def build_gateway_models(
    n: int,
    days: int,
    rng: np.random.Generator,
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY,
    device_mix: list[dict] | None = None,
    noise_sigma: float = 0.25,
    params: tuple[AppUtilityParams, ...] | None = None,
    app_table: dict[str, np.ndarray] | None = None,
) -> list[UtilityModel]:
    """One UtilityModel per gateway covering days * slots_per_day periods.

    gamma[i, day*S + slot] = base[slot] * exp(noise), noise ~ N(0, sigma^2)
    drawn once per (gateway, day). App mixtures repeat daily.
    """
    if device_mix is None:
        device_mix = default_device_mix(n)
    if len(device_mix) != n:
        raise ValueError(f"device_mix must list {n} gateways, got {len(device_mix)}")
    if params is None:
        params = default_app_params()
    if app_table is None:
        app_table = load_app_table()
    base = gamma_base(slots_per_day)
    noise = np.exp(rng.normal(0.0, noise_sigma, size=(n, days)))
    models = []
    for i in range(n):
        gamma = (noise[i][:, None] * base[None, :]).reshape(-1)
        probs_day = gateway_app_probs(device_mix[i], app_table)
        if probs_day.shape[0] != slots_per_day:
            raise ValueError("app table slot count does not match slots_per_day")
        probs = np.tile(probs_day, (days, 1))
        models.append(UtilityModel(gamma=gamma, app_probs=probs, params=params))
    return models
