import os
from typing import Dict, List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


class LossHistory:
    """Recorder of per-step training losses

    Collects one row per optimizer step (step, epoch, learning rate and the
    loss terms), for later CSV export and plotting of the training curve.
    """

    def __init__(self):
        self.start()

    def start(self):
        # One dict per step
        self.rets: List[Dict[str, float]] = []

    def record(self, step: int, epoch: int, lr: float, **losses: Optional[float]):
        row = {"step": step, "epoch": epoch, "lr": lr}
        row.update({k: float(v) for k, v in losses.items() if v is not None})
        self.rets.append(row)

    def get_analysis(self) -> pd.DataFrame:
        return pd.DataFrame(self.rets)

    @property
    def losses(self) -> List[float]:
        return [row["loss"] for row in self.rets]

    @property
    def final_loss(self) -> Optional[float]:
        return self.rets[-1]["loss"] if self.rets else None

    def __len__(self):
        return len(self.rets)

    def save_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self.get_analysis().to_csv(path, index=False)

    @classmethod
    def load_csv(cls, path: str) -> "LossHistory":
        history = cls()
        history.rets = pd.read_csv(path).to_dict("records")
        return history

    def plot(self, path: str, title: str = "Training loss") -> None:
        frame = self.get_analysis()
        if frame.empty:
            return
        fig, ax = plt.subplots(figsize=(8, 4))
        for column in frame.columns:
            if column.startswith("loss"):
                ax.plot(frame["step"], frame[column], label=column)
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        fig.savefig(path)
        plt.close(fig)
