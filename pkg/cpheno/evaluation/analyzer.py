import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd

from cpheno.evaluation.retrieval import RetrievalReport

logger = logging.getLogger(__name__)

TASK_TITLES = {
    "zs": "Zero-shot classification",
    "i2t": "Image-to-text retrieval",
    "t2i": "Text-to-image retrieval",
    "i2p": "Image-to-phenotype retrieval",
    "p2i": "Phenotype-to-image retrieval",
    "match": "Phenotype matching",
    "probe": "Linear probing",
}


class Analyzer:
    def __init__(self, reports: Sequence[RetrievalReport], name: str = "model"):
        """
        Initialize result analyzer

        Parameters:
            reports (list): RetrievalReport of every evaluated task
            name (str): Row label of the result table
        """
        self.reports = list(reports)
        self.name = name
        self.analysis = self._get_analysis()

    def _get_analysis(self) -> Dict[str, Dict[str, float]]:
        """Metrics keyed by task, in evaluation order"""
        return {report.task: dict(report.metrics) for report in self.reports}

    def report(self, task: str) -> Optional[RetrievalReport]:
        for report in self.reports:
            if report.task == task:
                return report
        return None

    def flat_metrics(self) -> Dict[str, float]:
        """{"<task> <metric>": value} plus the mean of all R@K values as "Avg" """
        flat = {
            f"{task} {metric}": value
            for task, metrics in self.analysis.items()
            for metric, value in metrics.items()
        }
        recalls = [v for k, v in flat.items() if " R@" in k]
        if recalls:
            flat["Avg"] = sum(recalls) / len(recalls)
        return flat

    def to_table(self) -> pd.DataFrame:
        """One-row table laid out as task/metric columns with an Avg column"""
        flat = self.flat_metrics()
        return pd.DataFrame([flat], index=[self.name]) * 100.0

    def print_summary(self):
        print("\n=== Evaluation Results Summary ===\n")
        format_str = "  {:<24} : {:<24}"

        for report in self.reports:
            print(f"{TASK_TITLES.get(report.task, report.task)} ({report.n_queries} queries):")
            for metric, value in report.metrics.items():
                print(format_str.format(metric, f"{value:.2%}"))
            print()

        flat = self.flat_metrics()
        if "Avg" in flat:
            print(format_str.format("Average R@K", f"{flat['Avg']:.2%}"))

    def save(self, out_dir: str) -> Dict[str, str]:
        """Write results.json, results.csv and results.txt; returns the paths"""
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "json": os.path.join(out_dir, "results.json"),
            "csv": os.path.join(out_dir, "results.csv"),
            "table": os.path.join(out_dir, "results.txt"),
        }
        with open(paths["json"], "w", encoding="utf-8") as f:
            json.dump([r.to_dict() for r in self.reports], f, indent=2, sort_keys=True)
        table = self.to_table()
        table.to_csv(paths["csv"], float_format="%.2f")
        with open(paths["table"], "w", encoding="utf-8") as f:
            f.write(table.to_string(float_format=lambda v: f"{v:.2f}") + "\n")
        logger.info(f"Saved evaluation results to {out_dir}")
        return paths

    @classmethod
    def load(cls, path: str, name: str = "model") -> "Analyzer":
        with open(path, "r", encoding="utf-8") as f:
            return cls([RetrievalReport.from_dict(r) for r in json.load(f)], name)

    def plot_results(self, out_dir: str) -> List[str]:
        """Bar chart of R@K per retrieval task"""
        os.makedirs(out_dir, exist_ok=True)
        written = []
        for report in self.reports:
            recalls = {m: v for m, v in report.metrics.items() if m.startswith("R@")}
            if not recalls:
                continue
            fig, ax = plt.subplots(figsize=(5, 3.5))
            ax.bar(list(recalls), [100.0 * v for v in recalls.values()], color="steelblue")
            ax.set_ylim(0, 100)
            ax.set_ylabel("recall (%)")
            ax.set_title(TASK_TITLES.get(report.task, report.task))
            fig.tight_layout()
            path = os.path.join(out_dir, f"recall_{report.task}.png")
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
        return written
