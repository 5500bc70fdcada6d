"""Per-run state: progress and checkpoints of named fitting runs."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .config import get_state_base_dir

UTC = timezone.utc  # alias of datetime.UTC (3.11+), kept for Python 3.10


@dataclass
class CheckpointRecord:
    """One checkpoint written by a run."""

    step: int
    path: str
    written: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"step": self.step, "path": self.path, "written": self.written}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CheckpointRecord:
        return cls(
            step=data.get("step", 0),
            path=data.get("path", ""),
            written=data.get("written", ""),
        )


@dataclass
class RunState:
    """Progress of a fitting run."""

    command: str
    seed: int = 0
    steps_done: int = 0
    checkpoints: list[CheckpointRecord] = field(default_factory=list)
    last_total: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "command": self.command,
            "seed": self.seed,
            "steps_done": self.steps_done,
            "checkpoints": [c.to_dict() for c in self.checkpoints],
            "last_total": self.last_total,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunState:
        return cls(
            command=data.get("command", ""),
            seed=data.get("seed", 0),
            steps_done=data.get("steps_done", 0),
            checkpoints=[CheckpointRecord.from_dict(c) for c in data.get("checkpoints", [])],
            last_total=data.get("last_total"),
        )

    def latest_checkpoint(self) -> CheckpointRecord | None:
        if not self.checkpoints:
            return None
        return max(self.checkpoints, key=lambda c: c.step)


class RunStateManager:
    """Manages run state files in <L4D_HOME>/runs/<run>/run.json."""

    def __init__(self, base_dir: str | Path | None = None) -> None:
        self.base_dir = Path(base_dir) if base_dir is not None else get_state_base_dir()

    def run_dir(self, run: str) -> Path:
        """Directory holding a run's state, checkpoints and logs."""
        # Sanitize run name for filesystem
        safe_name = run.replace("/", "-").replace("\\", "-").lstrip("-.") or "run"
        return self.base_dir / "runs" / safe_name

    def _state_file(self, run: str) -> Path:
        return self.run_dir(run) / "run.json"

    def checkpoint_path(self, run: str, step: int) -> Path:
        return self.run_dir(run) / f"step{step:08d}.l4dc"

    def log_path(self, run: str) -> Path:
        return self.run_dir(run) / "train.csv"

    def exists(self, run: str) -> bool:
        return self._state_file(run).exists()

    def load(self, run: str, command: str = "") -> RunState:
        """Load state for a run, or a fresh one if the run is new."""
        state_file = self._state_file(run)
        if not state_file.exists():
            return RunState(command=command)
        with open(state_file, encoding="utf-8") as f:
            data = json.load(f)
        return RunState.from_dict(data)

    def save(self, run: str, state: RunState) -> None:
        state_file = self._state_file(run)
        state_file.parent.mkdir(parents=True, exist_ok=True)
        with open(state_file, "w", encoding="utf-8") as f:
            json.dump(state.to_dict(), f, indent=2)

    def record_checkpoint(self, run: str, step: int, path: str | Path, total: float) -> RunState:
        """Note a checkpoint written at ``step`` and the total loss of that step."""
        state = self.load(run)
        state.checkpoints = [c for c in state.checkpoints if c.step != step]
        state.checkpoints.append(
            CheckpointRecord(step, str(path), datetime.now(UTC).isoformat())
        )
        state.steps_done = max(state.steps_done, step)
        state.last_total = total
        self.save(run, state)
        return state

    def list_runs(self) -> list[str]:
        runs_dir = self.base_dir / "runs"
        if not runs_dir.exists():
            return []
        runs = []
        for item in runs_dir.iterdir():
            if item.is_dir() and (item / "run.json").exists():
                runs.append(item.name)
        return sorted(runs)

    def get_stats(self, run: str) -> dict[str, Any]:
        state = self.load(run)
        latest = state.latest_checkpoint()
        return {
            "run": run,
            "command": state.command,
            "steps_done": state.steps_done,
            "checkpoints": len(state.checkpoints),
            "latest": latest.path if latest else None,
            "last_total": state.last_total,
        }
