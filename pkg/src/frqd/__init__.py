"""Byzantine-resilient distributed Q-learning over redundant communication graphs."""

from .graph import (Graph, construct_redundant, is_r_robust_bruteforce, is_rr_redundant,
                    two_hop_graph)
from .learning import AgentStates, FilterAudit, ScheduleParams, frqd_step
from .mdp import MdpModel, build_task_assignment_mdp
from .oracle import value_iteration

__version__ = "0.1.0"
