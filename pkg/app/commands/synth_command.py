"""
Synthetic dataset command
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List

from app.config import RunConfig, deep_merge
from app.errors import ConfigurationError
from app.models import SynthSpec
from app.services.runs import resolve_tag_schema
from app.services.synthetic import generate_dataset, write_dicom_like
from .base import CONFIG, OUT, SCHEMA, BaseCommand, CommandParameter

logger = logging.getLogger(__name__)


class SynthCommand(BaseCommand):
    """Generate and write a synthetic DICOM dataset"""

    @property
    def name(self) -> str:
        return "synth"

    @property
    def description(self) -> str:
        return "Generate a synthetic DICOM dataset with controllable signal placement and missingness"

    @property
    def parameters(self) -> List[CommandParameter]:
        return [
            CommandParameter(name="spec", type="path",
                             description="Synthetic recipe JSON (a bare recipe or a run config with a 'synth' block)"),
            CONFIG,
            OUT,
            SCHEMA,
            CommandParameter(name="seed", type="integer", config_key="synth.seed", description="Generator seed"),
            CommandParameter(name="n_series", type="integer", config_key="synth.n_series",
                             description="Number of series"),
            CommandParameter(name="n_classes", type="integer", config_key="synth.n_classes",
                             description="Number of classes"),
            CommandParameter(
                name="signal_mode", type="choice", config_key="synth.signal_mode",
                choices=["image_only", "metadata_only", "joint", "mid_slice_only", "off_center"],
                description="Where the class signal lives",
            ),
            CommandParameter(name="missingness", type="float", config_key="synth.missingness_rate",
                             description="Tag-wise dropout rate"),
        ]

    def resolve(self, values: Dict[str, Any]) -> RunConfig:
        config = super().resolve(values)
        spec_file = values.get("spec")
        if spec_file is None:
            if config.synth is None:
                raise ConfigurationError("synth needs --spec or a config with a 'synth' block")
            return config
        spec_file = Path(spec_file)
        if not spec_file.is_file():
            raise ConfigurationError(f"Spec file not found: {spec_file}")
        payload = json.loads(spec_file.read_text(encoding="utf-8"))
        recipe = payload.get("synth", payload)
        current = config.synth.model_dump(exclude_unset=True) if config.synth is not None else {}
        # flags win over the recipe file
        merged = deep_merge(recipe, current)
        return config.model_copy(update={"synth": SynthSpec.model_validate(merged)})

    def execute(self, config: RunConfig) -> Dict[str, Any]:
        dataset = generate_dataset(config.synth, resolve_tag_schema(config))
        write_dicom_like(dataset, config.out_dir)
        counts = dataset.label_frame()["label"].value_counts().sort_index()
        summary = {
            "series": len(dataset),
            "patients": len(set(dataset.patient_ids)),
            "slices": int(sum(s.num_slices for s in dataset.series)),
        }
        print(f"series={summary['series']} patients={summary['patients']} slices={summary['slices']}")
        for name, n in counts.items():
            print(f"  {name}: {n}")
        return summary
