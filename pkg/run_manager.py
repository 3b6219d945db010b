"""Experiment run registry management."""
import math
from datetime import datetime
from typing import Dict, List, Optional

from sqlalchemy.orm import Session

from database import ExperimentRun, RunMetric, SessionLocal


class RunManager:
    """Manages experiment run records and their metrics."""

    def __init__(self, db_session: Session = None):
        self.db = db_session or SessionLocal()

    def start_run(self, command: str, config_digest: str, seed: int, mode: str = None,
                  output_dir: str = None) -> ExperimentRun:
        """Create a run record in the 'running' state."""
        run = ExperimentRun(
            command=command,
            config_digest=config_digest,
            seed=str(seed),
            mode=mode,
            status='running',
            output_dir=output_dir,
        )
        self.db.add(run)
        self.db.commit()
        self.db.refresh(run)
        return run

    def get_run(self, run_id: int) -> ExperimentRun:
        """Get a run by ID."""
        run = self.db.query(ExperimentRun).filter(ExperimentRun.id == run_id).first()
        if not run:
            raise ValueError(f"Run {run_id} not found")
        return run

    def finish_run(self, run_id: int, exit_code: int) -> ExperimentRun:
        """Close a run with its exit code."""
        run = self.get_run(run_id)
        run.exit_code = exit_code
        run.status = 'succeeded' if exit_code == 0 else 'failed'
        run.finished_at = datetime.utcnow()
        self.db.commit()
        self.db.refresh(run)
        return run

    def record_metrics(self, run_id: int, metrics: Dict[str, float]) -> List[RunMetric]:
        """Attach numeric metrics to a run. Non-finite and non-numeric values are skipped."""
        self.get_run(run_id)
        rows = []
        for name, value in sorted(metrics.items()):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                continue
            if not math.isfinite(value):
                continue
            metric = RunMetric(run_id=run_id, name=name, value=float(value))
            self.db.add(metric)
            rows.append(metric)
        self.db.commit()
        return rows

    def get_metrics(self, run_id: int) -> Dict[str, float]:
        """Metrics of a run as a name -> value dict."""
        run = self.get_run(run_id)
        return {m.name: m.value for m in run.metrics}

    def list_runs(self, command: Optional[str] = None, status: Optional[str] = None,
                  limit: int = None) -> List[ExperimentRun]:
        """List runs, newest first, optionally filtered by command and status."""
        query = self.db.query(ExperimentRun)

        if command:
            query = query.filter(ExperimentRun.command == command)

        if status:
            query = query.filter(ExperimentRun.status == status)

        query = query.order_by(ExperimentRun.id.desc())
        if limit:
            query = query.limit(limit)
        return query.all()

    def close(self):
        self.db.close()
