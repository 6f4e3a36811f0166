# Simple step logger, optionally backed by a line-delimited run journal
from pathlib import Path
from typing import Optional

from pydantic import BaseModel


class StepLogger:
    def __init__(self, journal: Optional[Path] = None, echo: bool = True):
        self.steps = []
        self.records = []
        self.echo = echo
        self.journal = Path(journal) if journal is not None else None
        if self.journal is not None:
            self.journal.parent.mkdir(parents=True, exist_ok=True)
            self.journal.write_text("")

    def log(self, message: str):
        if self.echo:
            print(f"[STEP] {message}")
        self.steps.append(message)

    def record(self, entry: BaseModel):
        """Append one journal line; flushed immediately so interrupted runs keep it."""
        self.records.append(entry)
        if self.journal is not None:
            with self.journal.open("a") as fh:
                fh.write(entry.model_dump_json() + "\n")

    def get_log(self):
        return self.steps
