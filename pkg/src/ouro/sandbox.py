"""Sandboxed execution of agent-written code in a separate process.

Python snippets run under the current interpreter with a socket guard
prepended unless networking is explicitly enabled. Bash commands cannot be
network-guarded the same way; restricted mode therefore refuses them a
network guarantee rather than pretending to provide one.
"""
from __future__ import annotations

import subprocess
import sys
from dataclasses import dataclass

DEFAULT_TIMEOUT = 10.0
MAX_OUTPUT_CHARS = 4000

_NET_GUARD = (
    "import socket as _socket\n"
    "def _no_net(*a, **k):\n"
    "    raise OSError('network access is disabled in this sandbox')\n"
    "_socket.socket = _no_net\n"
    "_socket.create_connection = _no_net\n"
)


@dataclass
class SandboxResult:
    ok: bool
    stdout: str = ""
    stderr: str = ""
    returncode: int | None = None
    timed_out: bool = False

    def summary(self) -> str:
        if self.timed_out:
            return "timed out"
        parts = []
        if self.stdout:
            parts.append(self.stdout.rstrip())
        if self.stderr:
            parts.append(self.stderr.rstrip())
        return "\n".join(parts) if parts else "(no output)"


def _truncate(text: str) -> str:
    if len(text) <= MAX_OUTPUT_CHARS:
        return text
    return text[:MAX_OUTPUT_CHARS] + f"\n[truncated at {MAX_OUTPUT_CHARS} chars]"


def run_code(
    command: str,
    interpreter: str = "python",
    timeout: float = DEFAULT_TIMEOUT,
    allow_network: bool = False,
) -> SandboxResult:
    """Run `command` in a fresh subprocess, capturing stdout/stderr.

    Timeouts and nonzero exits are reported in the result, never raised.
    """
    if interpreter == "python":
        code = command if allow_network else _NET_GUARD + command
        argv = [sys.executable, "-I", "-c", code]
    elif interpreter == "bash":
        argv = ["bash", "-c", command]
    else:
        return SandboxResult(ok=False, stderr=f"unknown interpreter {interpreter!r}")
    try:
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        return SandboxResult(ok=False, timed_out=True, stderr=f"timeout after {timeout}s")
    except OSError as exc:
        return SandboxResult(ok=False, stderr=f"failed to launch: {exc}")
    return SandboxResult(
        ok=proc.returncode == 0,
        stdout=_truncate(proc.stdout),
        stderr=_truncate(proc.stderr),
        returncode=proc.returncode,
    )
