"""Offline RL for adaptive policy-chunk retrieval on synthetic prior-authorization requests."""

__version__ = "0.1.0"

DIM = 384
OBS_DIM = 2 * DIM
K = 10
HORIZON = 20
N_ACTIONS = K + 1
STOP = K
