"""ouro: a self-rewriting agent runtime.

The agent's solver and its improvement logic are stored as replaceable
logic units in a live registry; an evolution run inspects them, rewrites
them under a high-level goal, and measures itself against pluggable task
environments. A deterministic scripted backend makes the whole loop
testable offline.
"""

__version__ = "0.1.0"

from .gateway import Budget, DecisionRequest, DecisionResponse, Gateway, ScriptedBackend
from .kernel import Action, EvolutionResult, GoalPrompt, default_goal, run_evolution
from .registry import CodeRegistry, LogicUnit, PatchResult, SourceMap
from .tasks import Environment, TaskExample, UtilityReport, evaluate_policy

__all__ = [
    "Action",
    "Budget",
    "CodeRegistry",
    "DecisionRequest",
    "DecisionResponse",
    "Environment",
    "EvolutionResult",
    "Gateway",
    "GoalPrompt",
    "LogicUnit",
    "PatchResult",
    "ScriptedBackend",
    "SourceMap",
    "TaskExample",
    "UtilityReport",
    "default_goal",
    "evaluate_policy",
    "run_evolution",
    "__version__",
]
