"""
CLI subcommands. Each command declares its parameters and runs against a resolved RunConfig.
"""

from .base import BaseCommand, CommandParameter
from .synth_command import SynthCommand
from .training_commands import TrainCommand, CrossValCommand
from .model_commands import EvalCommand, PredictCommand
from .inspect_command import InspectCommand

ALL_COMMANDS = [
    SynthCommand(),
    TrainCommand(),
    CrossValCommand(),
    EvalCommand(),
    PredictCommand(),
    InspectCommand(),
]

COMMANDS_BY_NAME = {command.name: command for command in ALL_COMMANDS}

__all__ = [
    'BaseCommand',
    'CommandParameter',
    'ALL_COMMANDS',
    'COMMANDS_BY_NAME',
    'SynthCommand',
    'TrainCommand',
    'CrossValCommand',
    'EvalCommand',
    'PredictCommand',
    'InspectCommand',
]
