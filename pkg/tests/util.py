"""Shared test oracles and config builders."""

import numpy as np

TEST_MASTER = "9d2c1a77e4f3b8062b5e4a1c0d9f8e7a6b5c4d3e2f1a0918273645546372819a"

_TEST_PARAMS = {
    "TR": ({"policy": "fixed", "tau": 0.45}, {"rings": 8, "carrier_channel": 3}),
    "RI": ({"policy": "fixed", "tau": 0.9}, {"rings": 8, "carrier_channels": [2, 3], "keys": 16, "amplitude": 1.5}),
    "ROBIN": ({"policy": "fixed", "tau": 0.55}, {"rings": 8, "carrier_channel": 3, "strength": 0.7}),
    "WIND": ({"policy": "fixed", "tau": 0.5}, {"noises": 64, "groups": 8, "rings": 8, "carrier_channel": 0, "amplitude": 1.5}),
    "GS": ({"policy": "fixed", "tau": 0.75}, {"message_bits": 256, "replication": [1, 4, 4]}),
    "PRC": ({"policy": "p_value", "alpha": 0.01}, {"checks": 512, "check_weight": 3}),
    "SEAL": ({"policy": "p_value", "alpha": 0.01}, {"hash_bits": 16, "patch_grid": [4, 4], "patch_threshold": 0.5, "provider": "avgpool8", "calibration_trials": 50}),
    "VideoShield": ({"policy": "fixed", "tau": 0.75}, {"message_bits": 60, "max_frames": 16, "replication": [1, 8, 8], "frame_threshold": 0.75}),
}


def make_test_config(algorithm, channel=None, threshold=None, params=None, frames=8):
    """Config dict at the 4x32x32 test geometry."""
    default_threshold, default_params = _TEST_PARAMS[algorithm]
    cfg = {
        "schema": 1,
        "algorithm": algorithm,
        "latent_shape": [4, 32, 32],
        "master_key": TEST_MASTER,
        "channel": channel or {"kind": "identity", "steps": 8},
        "threshold": threshold or dict(default_threshold),
        "params": {**default_params, **(params or {})},
    }
    if algorithm == "VideoShield":
        cfg["frames"] = frames
    return cfg


def rank_auc(wm_scores, null_scores, higher_is_wm: bool) -> float:
    """ROC AUC via the rank-sum (Mann-Whitney) identity, ties counted half."""
    wm = np.asarray(wm_scores, dtype=float)
    null = np.asarray(null_scores, dtype=float)
    if not higher_is_wm:
        wm, null = -wm, -null
    wins = 0.0
    for w in wm:
        wins += np.sum(w > null) + 0.5 * np.sum(w == null)
    return wins / (len(wm) * len(null))


def brute_force_tpr_at_fpr(wm, null, target_fpr, higher_is_wm):
    """Exhaustive threshold sweep over observed scores plus a beyond-extreme sentinel.

    Tie rule: score equal to the threshold counts positive for higher-is-wm
    and negative otherwise.  Returns (threshold, tpr, fpr) of the feasible
    operating point with maximal TPR.
    """
    wm = np.asarray(wm, dtype=float)
    null = np.asarray(null, dtype=float)
    if higher_is_wm:
        candidates = sorted(set(np.concatenate([wm, null])) | {np.inf})
    else:
        candidates = sorted(set(np.concatenate([wm, null])) | {-np.inf}, reverse=True)
    best = None
    for tau in candidates:
        if higher_is_wm:
            fp = np.sum(null >= tau)
            tp = np.sum(wm >= tau)
        else:
            fp = np.sum(null < tau)
            tp = np.sum(wm < tau)
        fpr = fp / len(null)
        tpr = tp / len(wm)
        if fpr <= target_fpr and (best is None or tpr > best[1]):
            best = (tau, tpr, fpr)
    return best
