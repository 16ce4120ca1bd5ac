import time
from enum import Enum
from typing import IO, Optional

import click

from src.pubsub import MessageEvent, ProgressEvent

SPINNER_STATES = 4


class Format(Enum):
    STANDARD = 0
    COMMAND = 1
    COMMENT = 2
    ERROR = 3


class StatusMessage:
    """
    Terminal rendering of published messages and progress. Progress lines are rewritten in place and throttled to
    one update per ``flush_time`` seconds.
    """

    def __init__(self, stream: Optional[IO] = None, flush_time: float = 0.5):
        super().__init__()
        self.stream = stream
        self.spinners: dict[str, Spinner] = {}

        self._last_flush = 0.0
        self._flush_time = flush_time

    def receive_message(self, event: MessageEvent):
        func = self.write_line
        match event.title:
            case "standard":
                func = self.write_line
            case "command":
                func = self.write_command
            case "comment":
                func = self.write_comment
            case "error":
                func = self.write_error
        func(event.message)

    def receive_progress(self, event: ProgressEvent):
        spinner = self.spinners.get(event.task)
        if spinner is None:
            spinner = self.spinners[event.task] = Spinner(self, event.task)
        spinner.text = f"{event.task} {event.done}/{event.total}"
        if event.finished:
            spinner.complete()
            del self.spinners[event.task]
        elif self._last_flush + self._flush_time < time.time():
            spinner.spin()

    def write(self, message: str, newline: bool = True) -> None:
        click.echo(message, file=self.stream, nl=newline)

    def write_line(self, message: str, format: Format = Format.STANDARD):
        match format:
            case Format.COMMAND:
                message = f"{click.style('$', fg='cyan')} {message}"
            case Format.COMMENT:
                message = click.style(f"// {message}", dim=True)
            case Format.ERROR:
                message = f"[{click.style('!', fg='red')}] {message}"
        self.write(message)

    def write_command(self, message: str):
        self.write_line(message, Format.COMMAND)

    def write_comment(self, message: str):
        self.write_line(message, Format.COMMENT)

    def write_error(self, message: str):
        self.write_line(message, Format.ERROR)

    def rewrite_line(self, message: str, final: bool = False) -> None:
        self.write(f"\r{message}", newline=final)
        self._last_flush = time.time()


class Spinner:
    def __init__(self, status: StatusMessage, text: str):
        self.status = status
        self.text = text
        self.step = 1

    def spin(self):
        char = ""
        match self.step:
            case 0:
                char = "ok"
            case 1:
                char = "/"
            case 2:
                char = "-"
            case 3:
                char = "\\"
            case 4:
                char = "|"
        finished = self.step == 0
        self.step = (self.step % SPINNER_STATES) + 1
        self.status.rewrite_line(f"[{char}] {self.text}", final=finished)

    def complete(self):
        self.step = 0
        self.spin()
