"""Task replication for vehicular edge computing.

Modules:
    analytics: closed-form delay model and replica-count planning.
    bandit: the learning-based replica selector and its regret tools.
    traffic: vehicle placement, mobility traces and the uplink channel.
    simcore: discrete-event offloading simulator and Monte Carlo checks.
    harness: policies, experiments and the ``vecrep`` command line.
"""

__version__ = "0.1.0"
