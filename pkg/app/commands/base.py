"""
Base Command class for all CLI subcommands
"""

import json
import logging
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ValidationError

from app.config import RunConfig, load_run_config, write_resolved_config
from app.errors import SeriesClassifierError

logger = logging.getLogger(__name__)


class CommandParameter(BaseModel):
    """Parameter definition for a command"""
    name: str
    type: str  # "string", "integer", "float", "path", "boolean", "choice"
    description: str
    required: bool = False
    default: Any = None
    choices: Optional[List[str]] = None
    config_key: Optional[str] = None  # dotted RunConfig path the value overrides, e.g. "train.seed"
    flag_value: Any = None            # boolean flags: value written to config_key when the flag is given

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


def overrides_from(parameters: List[CommandParameter], values: Dict[str, Any]) -> Dict[str, Any]:
    """Nested override dict for load_run_config from parsed flag values"""
    overrides: Dict[str, Any] = {}
    for p in parameters:
        value = values.get(p.name)
        if p.config_key is None or value is None or value is False:
            continue
        if p.type == "boolean":
            value = True if p.flag_value is None else p.flag_value
        node = overrides
        *parents, leaf = p.config_key.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = str(value) if isinstance(value, Path) else value
    return overrides


class BaseCommand(ABC):
    """
    Base class for all subcommands.
    A command declares its parameters, receives a fully resolved RunConfig and
    returns a dictionary with its results.
    """

    @property
    @abstractmethod
    def name(self) -> str:
        """Subcommand name"""
        pass

    @property
    @abstractmethod
    def description(self) -> str:
        pass

    @property
    def parameters(self) -> List[CommandParameter]:
        """List of parameters this command accepts"""
        return []

    @property
    def writes_run_dir(self) -> bool:
        return True

    @abstractmethod
    def execute(self, config: RunConfig) -> Dict[str, Any]:
        """
        Execute the command with a resolved configuration.
        Returns a dictionary with results.
        """
        pass

    def resolve(self, values: Dict[str, Any]) -> RunConfig:
        overrides = overrides_from(self.parameters, values)
        overrides["command"] = self.name
        return load_run_config(values.get("config"), overrides)

    def run(self, values: Dict[str, Any]) -> int:
        """Resolve the configuration, execute, and map errors to a nonzero exit status"""
        logger.info("=" * 80)
        logger.info(f"🚀 {self.name}")
        logger.info("=" * 80)
        try:
            config = self.resolve(values)
            if self.writes_run_dir:
                write_resolved_config(config, config.out_dir)
            result = self.execute(config)
        except ValidationError as e:
            logger.error(f"❌ {self.name}: invalid configuration\n{e}")
            return 2
        except (SeriesClassifierError, OSError, json.JSONDecodeError) as e:
            logger.error(f"❌ {self.name} failed: {type(e).__name__}: {e}")
            return 1
        logger.info(f"✅ {self.name} finished: {result}")
        return 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": [p.model_dump(exclude_none=True) for p in self.parameters],
        }

    def __str__(self) -> str:
        params_str = ", ".join([f"{p.name}: {p.type}" for p in self.parameters])
        return f"{self.name}({params_str}) - {self.description}"


# ============================================================================
# SHARED PARAMETERS
# ============================================================================

CONFIG = CommandParameter(name="config", type="path", description="JSON run configuration file")
OUT = CommandParameter(name="out", type="path", description="Output directory", config_key="out_dir")
DATA_ROOT = CommandParameter(
    name="data_root", type="path", config_key="data_root",
    description="DICOM root with labels.csv (default: SERIESCLF_DATA_ROOT)",
)
LABELS_FILE = CommandParameter(name="labels_file", type="path", config_key="labels_file",
                               description="Labels table (default: <data-root>/labels.csv)")
SCHEMA = CommandParameter(name="schema", type="path", config_key="schema_path",
                          description="Tag schema JSON (default: bundled reference schema)")
WORKERS = CommandParameter(name="workers", type="integer", config_key="workers",
                           description="Threads for header scanning")
SEED = CommandParameter(name="seed", type="integer", config_key="train.seed", description="Random seed")
SLICES = CommandParameter(name="slices", type="integer", config_key="train.slices",
                          description="Slices sampled per series (S)")
MODE = CommandParameter(name="mode", type="choice", config_key="train.mode", choices=["joint", "multilabel"],
                        description="Label schema")
BASELINE = CommandParameter(
    name="baseline", type="choice", config_key="train.baseline",
    choices=["none", "concat-zero", "concat-learned", "image-only", "metadata-only"],
    description="Model variant; 'none' is the full model",
)
NO_POSITIONAL = CommandParameter(name="no_positional", type="boolean", config_key="model.use_positional",
                                 flag_value=False, description="Disable slice positional embeddings")
EPOCHS = CommandParameter(name="epochs", type="integer", config_key="train.epochs", description="Training epochs")
BATCH_SIZE = CommandParameter(name="batch_size", type="integer", config_key="train.batch_size",
                              description="Batch size")
CHECKPOINT = CommandParameter(name="checkpoint", type="path", config_key="checkpoint", required=True,
                              description="Model checkpoint file")

TRAINING_PARAMETERS = [CONFIG, OUT, DATA_ROOT, LABELS_FILE, SCHEMA, WORKERS, SEED, SLICES, MODE, BASELINE,
                       NO_POSITIONAL, EPOCHS, BATCH_SIZE]
