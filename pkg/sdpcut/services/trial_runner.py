from typing import Any, Callable, Dict, List, Optional, Tuple
from dataclasses import dataclass, field
from enum import Enum
from datetime import datetime
from concurrent.futures import ThreadPoolExecutor, as_completed
import logging
import time
import uuid

logger = logging.getLogger(__name__)

TaskKey = Tuple[Any, ...]


class TrialStatus(Enum):
    PENDING = "pending"
    RUNNING = "running"
    COMPLETED = "completed"
    FAILED = "failed"


@dataclass
class TrialTask:
    key: TaskKey
    fn: Callable[[], Any]
    status: TrialStatus = TrialStatus.PENDING
    result: Any = None
    error: Optional[str] = None
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    elapsed_ms: float = 0.0


@dataclass
class TrialJob:
    id: str = field(default_factory=lambda: str(uuid.uuid4()))
    tasks: List[TrialTask] = field(default_factory=list)
    status: TrialStatus = TrialStatus.PENDING
    started_at: Optional[datetime] = None
    completed_at: Optional[datetime] = None
    total_tasks: int = 0
    completed_tasks: int = 0
    failed_tasks: int = 0
    progress_percentage: float = 0.0

    def results(self) -> List[TrialTask]:
        """Finished tasks sorted by key, independent of completion order"""
        return sorted(
            (task for task in self.tasks if task.status in (TrialStatus.COMPLETED, TrialStatus.FAILED)),
            key=lambda task: task.key,
        )


def _execute(task: TrialTask) -> TrialTask:
    task.status = TrialStatus.RUNNING
    task.started_at = datetime.now()
    start = time.perf_counter()
    try:
        task.result = task.fn()
        task.status = TrialStatus.COMPLETED
    except Exception as e:
        task.error = f"{type(e).__name__}: {e}"
        task.status = TrialStatus.FAILED
    task.elapsed_ms = (time.perf_counter() - start) * 1000.0
    task.completed_at = datetime.now()
    return task


class TrialRunner:
    def __init__(self, max_workers: int = 4):
        if max_workers < 1:
            raise ValueError(f"max_workers must be >= 1, got {max_workers}")
        self.max_workers = max_workers
        self.callbacks: Dict[str, List[Callable]] = {
            'on_task_complete': [],
            'on_task_failed': [],
            'on_job_complete': [],
            'on_progress': []
        }

    def register_callback(self, event: str, callback: Callable):
        if event in self.callbacks:
            self.callbacks[event].append(callback)

    def _trigger_callbacks(self, event: str, *args):
        for callback in self.callbacks.get(event, []):
            try:
                callback(*args)
            except Exception as e:
                logger.error(f"Callback error for {event}: {e}")

    def create_job(self, tasks: List[Tuple[TaskKey, Callable[[], Any]]]) -> TrialJob:
        job = TrialJob(tasks=[TrialTask(key=tuple(key), fn=fn) for key, fn in tasks])
        job.total_tasks = len(job.tasks)
        keys = {task.key for task in job.tasks}
        if len(keys) != job.total_tasks:
            raise ValueError("Trial keys must be unique within a job")
        return job

    def run(self, job: TrialJob) -> TrialJob:
        job.status = TrialStatus.RUNNING
        job.started_at = datetime.now()
        logger.info(f"Running job {job.id} with {job.total_tasks} trials on {self.max_workers} workers")

        # callbacks fire on the calling thread
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(_execute, task) for task in job.tasks]
            for future in as_completed(futures):
                task = future.result()
                if task.status == TrialStatus.COMPLETED:
                    job.completed_tasks += 1
                    self._trigger_callbacks('on_task_complete', task, job)
                else:
                    job.failed_tasks += 1
                    logger.error(f"Trial {task.key} failed: {task.error}")
                    self._trigger_callbacks('on_task_failed', task, job)

                job.progress_percentage = ((job.completed_tasks + job.failed_tasks) / job.total_tasks) * 100
                self._trigger_callbacks('on_progress', job)

        job.status = TrialStatus.COMPLETED if job.failed_tasks == 0 else TrialStatus.FAILED
        job.completed_at = datetime.now()
        self._trigger_callbacks('on_job_complete', job)
        logger.info(f"Job {job.id} completed: {job.completed_tasks} success, {job.failed_tasks} failed")
        return job

    def map(self, tasks: List[Tuple[TaskKey, Callable[[], Any]]]) -> TrialJob:
        return self.run(self.create_job(tasks))
