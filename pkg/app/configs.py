from __future__ import annotations

import os

from pydantic_settings import BaseSettings, SettingsConfigDict

BLAS_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
)


class LabSettings(BaseSettings):
    """Process-wide settings read from the environment and `.env`."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="QRELU_LAB_",
        extra="ignore",
    )

    # Caps decode/bootstrap worker pools and BLAS threads; None lets libraries decide
    threads: int | None = None
    log_level: str = "INFO"
    rich_tracebacks: bool = True

    @property
    def workers(self) -> int:
        """Worker count for the lab's own thread pools."""
        if self.threads is not None:
            return max(1, self.threads)
        return min(8, os.cpu_count() or 1)

    def export_blas_threads(self) -> None:
        """Propagate the thread cap to BLAS before numpy is imported."""
        if self.threads is None:
            return
        for name in BLAS_THREAD_VARS:
            os.environ.setdefault(name, str(max(1, self.threads)))


# Module-level singleton
settings = LabSettings()

__all__ = [
    "LabSettings",
    "settings",
]
