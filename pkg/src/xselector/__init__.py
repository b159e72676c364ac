"""Dynamic explanation selection for an XAI-assisted trading decision-support testbed.

The package covers the full loop: market data and account mechanics, a
surrogate price predictor, a store of per-day explanation candidates, a
learned model of user decision shifts, a reward-trained recommendation
policy, the explanation selector with its baselines, a synthetic-user
experiment harness, and an HTTP session service for live participants.
"""

__version__ = "0.1.0"

from .explanations import Combination, DayCandidates, ExplanationItem, Modality
from .market import Account, OhlcBar, PriceClass, PriceSeries
from .predictor import PredictionDistribution
from .selector import SelectionResult, StrategyKind
from .user_model import DecisionContext, InteractionRecord

__all__ = [
    "Account",
    "Combination",
    "DayCandidates",
    "DecisionContext",
    "ExplanationItem",
    "InteractionRecord",
    "Modality",
    "OhlcBar",
    "PredictionDistribution",
    "PriceClass",
    "PriceSeries",
    "SelectionResult",
    "StrategyKind",
    "__version__",
]
