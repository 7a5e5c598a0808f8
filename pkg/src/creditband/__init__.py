"""creditband: credit-based peak-hour bandwidth allocation toolkit.

Core pieces: the credit ledger and its fairness/hoarding bounds, the
four-application utility family, concave spending-plan solvers with KKT
certificates, scenario-based inflow forecasting, the per-gateway online
control loop, the end-to-end experiment simulator, and receive-side rate
limiting models (fluid window dynamics and the priority read scheduler).
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
