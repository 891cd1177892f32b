"""Prometheus counters for one pipeline run, exported as a text file."""

import time
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

METRICS_FILE = "metrics.prom"


class RunMetrics:
    """
    Per-run metrics on a private registry.

    Timing values vary between runs and are not part of any reproducibility
    guarantee.
    """

    def __init__(self) -> None:
        self.registry = CollectorRegistry()

        # Training
        self.epochs_total = Counter(
            "epochs_total",
            "Total number of training epochs completed",
            ["mode"],
            registry=self.registry,
        )
        self.train_steps_total = Counter(
            "train_steps_total",
            "Total number of optimizer steps",
            ["mode"],
            registry=self.registry,
        )
        self.best_val_dice = Gauge(
            "best_val_dice",
            "Best validation Dice reached",
            ["mode"],
            registry=self.registry,
        )

        # Data and geometry
        self.phantoms_generated_total = Counter(
            "phantoms_generated_total",
            "Total number of phantoms generated",
            registry=self.registry,
        )
        self.sections_failed_total = Counter(
            "sections_failed_total",
            "Centerline points whose cross-section could not be measured",
            registry=self.registry,
        )
        self.mesh_triangles = Gauge(
            "mesh_triangles",
            "Triangle count of the last reconstructed mesh",
            registry=self.registry,
        )

        self.stage_duration_seconds = Histogram(
            "stage_duration_seconds",
            "Pipeline stage duration in seconds",
            ["stage"],
            buckets=[0.1, 1.0, 10.0, 60.0, 600.0, 3600.0],
            registry=self.registry,
        )

    @contextmanager
    def stage(self, name: str) -> Iterator[None]:
        """Time a pipeline stage."""
        start = time.perf_counter()
        try:
            yield
        finally:
            self.stage_duration_seconds.labels(stage=name).observe(time.perf_counter() - start)

    def write(self, run_dir: Path) -> Path:
        """Write metrics.prom into run_dir."""
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / METRICS_FILE
        write_to_textfile(str(path), self.registry)
        return path
