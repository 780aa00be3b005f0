"""Budget-aware selection and combination of multi-label prediction APIs."""

from .core import CostTable, Record, multilabel_accuracy, strategy_cost
from .selector import (
    OnlinePolicy,
    SelectionInstance,
    brute_force_ilp,
    offline_strategy,
    run_online,
    select_sp,
    solve_dual_price,
)

__version__ = "0.1.0"
