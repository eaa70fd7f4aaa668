"""
Numerical substrate: tape autodiff, op set, convolutions and optimizers.
"""
from src.numerics.optim import (
    AdamHyper,
    AdamState,
    BoundBox,
    LbfgsbConfig,
    LbfgsbResult,
    OptimizerStatus,
    adam_step,
    lbfgsb_minimize,
)
from src.numerics.tape import Node, Tape, Var, backward, gradient_node

__all__ = [
    "AdamHyper",
    "AdamState",
    "BoundBox",
    "LbfgsbConfig",
    "LbfgsbResult",
    "OptimizerStatus",
    "adam_step",
    "lbfgsb_minimize",
    "Node",
    "Tape",
    "Var",
    "backward",
    "gradient_node",
]
