#!/usr/bin/env python3
"""
Behavioral benchmarks on synthetic data.

  multimodal-gain          full model vs image-only, metadata-only and concat-zero on joint-signal data
  slice-ablation           S = 1 / 5 / 10 on data whose signal sits off the centre slice
  missingness-robustness   train at 30% tag dropout, test at 30% and 60%, full model vs concat-zero

Usage:
    python scripts/run_benchmarks.py multimodal-gain --out runs/bench --epochs 15
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from dotenv import load_dotenv

from app.config import ModelConfig, RunConfig, TrainConfig
from app.errors import SeriesClassifierError, UndefinedStatisticError
from app.models import SynthSpec
from app.services.checkpoint import load_checkpoint
from app.services.datasets import LabeledSeries
from app.services.evaluation import MetricsReport
from app.services.metadata_schema import reference_schema
from app.services.runs import evaluate_series, run_training
from app.services.splits import stratified_patient_folds
from app.services.statistics import wilcoxon_signed_rank
from app.services.synthetic import generate_dataset

logger = logging.getLogger(__name__)


class BenchmarkRunner:
    """Trains the compared variants on one synthetic split and prints the comparison"""

    def __init__(self, out_dir: Path, epochs: int, batch_size: int, seed: int, n_series: int):
        self.out_dir = Path(out_dir)
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.n_series = n_series
        self.tag_schema = reference_schema()
        self.results: Dict[str, Dict[str, float]] = {}

    def _config(self, baseline: str, slices: Optional[int] = None) -> RunConfig:
        return RunConfig(
            command="benchmark",
            out_dir=self.out_dir,
            model=ModelConfig(),
            train=TrainConfig(baseline=baseline, slices=slices, epochs=self.epochs,
                              batch_size=self.batch_size, seed=self.seed),
        )

    def _dataset(self, signal_mode: str, missingness: float) -> LabeledSeries:
        spec = SynthSpec(n_series=self.n_series, n_classes=13, signal_mode=signal_mode,
                         missingness_rate=missingness, seed=self.seed)
        return generate_dataset(spec, self.tag_schema).to_labeled()

    def _split(self, series: LabeledSeries) -> Tuple[List[int], List[int], List[int]]:
        """(train, val, test) indices: one fold for test, one for validation"""
        folds = stratified_patient_folds(list(zip(series.patient_ids, series.labels)), 5, self.seed)
        train_val, test = folds.split_indices(series.patient_ids, 0)
        _, val = folds.split_indices(series.patient_ids, 1)
        held = set(val)
        train = [i for i in train_val if i not in held]
        return train, val, test

    def _run(self, name: str, config: RunConfig, series: LabeledSeries,
             test_sets: Dict[str, LabeledSeries]) -> Dict[str, MetricsReport]:
        train, val, _ = self._split(series)
        run_dir = self.out_dir / name
        result = run_training(config, series.subset(train), series.subset(val), self.tag_schema, run_dir)
        checkpoint = load_checkpoint(result.checkpoint_path)
        reports = {}
        for test_name, test_series in test_sets.items():
            evaluation = evaluate_series(result.model, test_series, checkpoint.tag_schema, checkpoint.label_schema,
                                         config.train.resolved_slices, self.batch_size)
            reports[test_name] = evaluation.reports["joint"]
        self.results[name] = {k: round(r.weighted.f1 * 100.0, 2) for k, r in reports.items()}
        print(f"   ✓ {name}: " + ", ".join(f"{k} wF1={v:.2f}" for k, v in self.results[name].items()))
        return reports

    def _compare(self, reference: MetricsReport, other: MetricsReport, label: str) -> None:
        a = [m.f1 for m in reference.per_class.values()]
        b = [m.f1 for m in other.per_class.values()]
        try:
            test = wilcoxon_signed_rank(a, b)
            print(f"   per-class F1, full vs {label}: W={test.statistic:.1f} p={test.p_value:.4f} ({test.method})")
        except UndefinedStatisticError:
            print(f"   per-class F1, full vs {label}: identical")

    def multimodal_gain(self) -> bool:
        print("\n📊 Multimodal gain (joint signal, 30% missingness)")
        series = self._dataset("joint", 0.30)
        test = {"test": series.subset(self._split(series)[2])}
        full = self._run("full", self._config("none"), series, test)["test"]
        scores = {"full": full.weighted.f1}
        for baseline in ("image-only", "metadata-only", "concat-zero"):
            report = self._run(baseline, self._config(baseline), series, test)["test"]
            scores[baseline] = report.weighted.f1
            self._compare(full, report, baseline)

        passed = (scores["full"] - scores["image-only"] >= 0.10
                  and scores["full"] - scores["metadata-only"] >= 0.10
                  and scores["full"] - scores["concat-zero"] >= 0.03)
        return self._verdict(passed)

    def slice_ablation(self) -> bool:
        print("\n📊 Slice-count ablation (signal at relative positions 0.6-0.8)")
        series = self._dataset("off_center", 0.0)
        test = {"test": series.subset(self._split(series)[2])}
        scores = {}
        for S in (1, 5, 10):
            scores[S] = self._run(f"slices_{S}", self._config("none", slices=S), series, test)["test"].weighted.f1
        passed = scores[5] - scores[1] >= 0.10 and abs(scores[10] - scores[5]) < 0.03
        return self._verdict(passed)

    def missingness_robustness(self) -> bool:
        print("\n📊 Missingness robustness (train 30%, test 30% and 60%)")
        series = self._dataset("joint", 0.30)
        shifted = self._dataset("joint", 0.60)
        test_idx = self._split(series)[2]
        test = {"test_30": series.subset(test_idx), "test_60": shifted.subset(test_idx)}
        drops = {}
        for name, baseline in (("full", "none"), ("concat-zero", "concat-zero")):
            reports = self._run(f"robust_{name}", self._config(baseline), series, test)
            drops[name] = reports["test_30"].weighted.f1 - reports["test_60"].weighted.f1
            print(f"   {name}: drop {drops[name] * 100:.2f} points")
        return self._verdict(drops["full"] < drops["concat-zero"])

    def _verdict(self, passed: bool) -> bool:
        print("   ✅ criterion met" if passed else "   ❌ criterion not met")
        return passed

    def save(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / "benchmarks.json"
        path.write_text(json.dumps(self.results, indent=2, sort_keys=True), encoding="utf-8")
        print(f"\n✅ Results saved to {path}")
        return path


BENCHMARKS = {
    "multimodal-gain": BenchmarkRunner.multimodal_gain,
    "slice-ablation": BenchmarkRunner.slice_ablation,
    "missingness-robustness": BenchmarkRunner.missingness_robustness,
}


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    logging.basicConfig(level=logging.WARNING, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')

    parser = argparse.ArgumentParser(description="Synthetic-data behavioral benchmarks")
    parser.add_argument("benchmark", choices=list(BENCHMARKS) + ["all"])
    parser.add_argument("--out", type=Path, default=Path("runs/benchmarks"))
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--n-series", type=int, default=2600)
    args = parser.parse_args(argv)

    print("🧪 Synthetic benchmarks")
    print("=" * 80)
    runner = BenchmarkRunner(args.out, args.epochs, args.batch_size, args.seed, args.n_series)
    selected = list(BENCHMARKS) if args.benchmark == "all" else [args.benchmark]
    try:
        outcomes = [BENCHMARKS[name](runner) for name in selected]
    except SeriesClassifierError as e:
        print(f"\n❌ {type(e).__name__}: {e}")
        return 1
    runner.save()
    return 0 if all(outcomes) else 1


if __name__ == '__main__':
    sys.exit(main())
