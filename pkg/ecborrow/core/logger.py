import os
import tempfile
from datetime import datetime
from typing import Optional

from rich.console import Console
from rich.panel import Panel
from rich.table import Table
from rich.text import Text
from rich.theme import Theme

RUN_THEME = Theme({
    "stage": "bold cyan",
    "step": "bold green",
    "detail": "dim white",
    "error": "bold red",
    "warning": "bold yellow",
})


class RunLogger:
    """
    Human-facing log of one analysis run.
    Generates:
    1. run.log (plain text, timestamped)
    2. session.md (markdown narrative of the stages)
    """
    STAGES = ["GENERATE", "CALIBRATION", "OUTCOME_MODEL", "INFLUENCE",
              "SELECTION", "COMPARISON", "SENSITIVITY", "MONTE_CARLO", "AIC"]

    def __init__(self, out_dir: str, title: str = "ecborrow run", quiet: bool = False):
        self.out_dir = out_dir
        self.title = title
        self.log_file = os.path.join(out_dir, "run.log")
        self.md_file = os.path.join(out_dir, "session.md")
        self.console = Console(theme=RUN_THEME, quiet=quiet)
        self.current_stage: Optional[str] = None
        self._is_writable = True
        self._ensure_dir()
        self._init_md()

    def _ensure_dir(self):
        try:
            os.makedirs(self.out_dir, exist_ok=True)
        except (PermissionError, OSError):
            fallback = os.path.join(tempfile.gettempdir(), "ecborrow", os.path.basename(os.path.abspath(self.out_dir)))
            self.log_file = os.path.join(fallback, "run.log")
            self.md_file = os.path.join(fallback, "session.md")
            try:
                os.makedirs(fallback, exist_ok=True)
            except OSError:
                self._is_writable = False

    def _init_md(self):
        if not self._is_writable: return
        try:
            with open(self.md_file, "w", encoding="utf-8") as f:
                f.write(f"# {self.title}\n\n")
                f.write(f"- **Output**: `{os.path.abspath(self.out_dir)}`\n")
                f.write(f"- **Started**: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}\n\n")
                f.write("---\n\n")
        except OSError:
            self._is_writable = False

    def _write_log(self, message: str, level: str = "INFO"):
        if not self._is_writable: return
        try:
            timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            with open(self.log_file, "a", encoding="utf-8") as f:
                f.write(f"[{timestamp}] [{level}] {message}\n")
        except OSError:
            self._is_writable = False

    def _write_md(self, content: str):
        if not self._is_writable: return
        try:
            with open(self.md_file, "a", encoding="utf-8") as f:
                f.write(content + "\n")
        except OSError:
            self._is_writable = False

    def set_stage(self, stage: str):
        """Enter a pipeline stage."""
        if stage not in self.STAGES:
            stage = "UNKNOWN"
        self.current_stage = stage
        self._write_log(f"--- STAGE: {stage} ---", level="STAGE")
        self._write_md(f"\n## Stage: {stage}\n")
        self.console.print(Panel(Text(f"Stage: {stage}", style="stage"), border_style="cyan", expand=False))

    def log_step(self, step: str, details: Optional[str] = None):
        msg = f"STEP: {step}"
        if details:
            msg += f" ({details})"
        self._write_log(msg)
        md = f"- **{step}**"
        if details:
            md += f": {details}"
        self._write_md(md)
        self.console.print(f"  [step]{step}[/step]")
        if details:
            self.console.print(f"     [detail]{details}[/detail]")

    def log_warning(self, message: str):
        self._write_log(f"WARNING: {message}", level="WARNING")
        self._write_md(f"> **Warning**: {message}\n")
        self.console.print(f"  [warning]{message}[/warning]")

    def log_error(self, error: str):
        self._write_log(f"ERROR: {error}", level="ERROR")
        self._write_md(f"\n#### Error\n> {error}\n")
        self.console.print(f"  [error]ERROR: {error}[/error]")

    def log_success(self, message: str):
        self._write_log(f"SUCCESS: {message}", level="SUCCESS")
        self._write_md(f"\n### Done\n{message}\n")
        self.console.print(f"  [step]{message}[/step]")

    def log_table(self, title: str, frame) -> None:
        """Render a pandas DataFrame to the console and as a markdown table."""
        table = Table(title=title)
        columns = [str(c) for c in frame.columns]
        table.add_column(str(frame.index.name or ""))
        for col in columns:
            table.add_column(col, justify="right")
        for idx, row in frame.iterrows():
            table.add_row(str(idx), *[_fmt(v) for v in row.tolist()])
        self.console.print(table)

        header = "| " + " | ".join([str(frame.index.name or "")] + columns) + " |"
        rule = "|" + "---|" * (len(columns) + 1)
        lines = [header, rule]
        for idx, row in frame.iterrows():
            lines.append("| " + " | ".join([str(idx)] + [_fmt(v) for v in row.tolist()]) + " |")
        self._write_md(f"\n**{title}**\n\n" + "\n".join(lines) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)
