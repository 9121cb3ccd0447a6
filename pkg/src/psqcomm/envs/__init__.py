"""Task environments: teleportation, entanglement purification and repeaters."""
from .base import EnvStep, TrialRecord, run_trial
from .epp import EppEnv, ProtocolTree, epp_env, evaluate_epp_protocol
from .repeater import (
    BlockActionCache, DelegationBudget, RepeaterConfig, RepeaterState, ScalingEnv,
    delegate_block, exhaustive_search, repeater2_env, scaling_env,
)
from .teleport import TeleportEnv, teleport_env, verify_teleport_sequence

__all__ = [
    "EnvStep", "TrialRecord", "run_trial",
    "EppEnv", "ProtocolTree", "epp_env", "evaluate_epp_protocol",
    "BlockActionCache", "DelegationBudget", "RepeaterConfig", "RepeaterState", "ScalingEnv",
    "delegate_block", "exhaustive_search", "repeater2_env", "scaling_env",
    "TeleportEnv", "teleport_env", "verify_teleport_sequence",
]
