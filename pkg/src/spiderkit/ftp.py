"""Minimal FTP client: log in, pick a transfer mode, fetch one file.

Passive mode only. The command sequence for a download is
``USER, PASS, TYPE, PASV, RETR``.
"""

from __future__ import annotations

import logging
import os
import re
import socket
from enum import Enum
from pathlib import Path
from typing import Optional, Union

logger = logging.getLogger(__name__)

FTP_PORT = 21
DEFAULT_TIMEOUT = 30.0
_PASV_RE = re.compile(r"(\d+),(\d+),(\d+),(\d+),(\d+),(\d+)")


class FtpError(Exception):
    def __init__(self, message: str, reply: Optional[str] = None):
        super().__init__(message)
        self.reply = reply


class FtpNetworkError(FtpError, OSError):
    pass


class FtpAuthError(FtpError):
    pass


class FtpProtocolError(FtpError):
    pass


class FtpFileNotFound(FtpError):
    pass


class FtpStateError(FtpError):
    pass


class UnsupportedModeError(FtpError, ValueError):
    pass


class Mode(str, Enum):
    ASCII = "A"
    BINARY = "I"
    EBCDIC = "E"
    LOCAL = "L"

    @classmethod
    def parse(cls, value: Union[str, "Mode"]) -> "Mode":
        if isinstance(value, Mode):
            return value
        names = {"ascii": cls.ASCII, "a": cls.ASCII, "binary": cls.BINARY, "i": cls.BINARY,
                 "image": cls.BINARY, "ebcdic": cls.EBCDIC, "e": cls.EBCDIC,
                 "local": cls.LOCAL, "l": cls.LOCAL}
        try:
            return names[value.lower()]
        except KeyError:
            raise UnsupportedModeError(f"unknown transfer mode {value!r}") from None


class State(str, Enum):
    DISCONNECTED = "disconnected"
    CONNECTED = "connected"
    LOGGED_IN = "logged_in"


class FtpSession:
    def __init__(self, host: str, port: int = FTP_PORT, timeout: float = DEFAULT_TIMEOUT):
        if not host:
            raise ValueError("host must be non-empty")
        self.host = host
        self.port = port
        self.timeout = timeout
        self.user: Optional[str] = None
        self.mode: Optional[Mode] = None
        self.state = State.DISCONNECTED
        self.welcome: Optional[str] = None
        self._sock: Optional[socket.socket] = None
        self._file = None

    # -- control channel -------------------------------------------------------

    def _send(self, line: str) -> None:
        logger.debug("ftp> %s", "PASS ****" if line.startswith("PASS ") else line)
        try:
            self._sock.sendall(line.encode("latin-1") + b"\r\n")
        except OSError as exc:
            self._drop()
            raise FtpNetworkError(f"control connection failed: {exc}") from exc

    def _readline(self) -> str:
        try:
            line = self._file.readline()
        except OSError as exc:
            self._drop()
            raise FtpNetworkError(f"control connection failed: {exc}") from exc
        if not line:
            self._drop()
            raise FtpNetworkError("server closed the control connection")
        return line.decode("latin-1").rstrip("\r\n")

    def read_reply(self) -> str:
        """One reply; multi-line replies run until the ``code<space>`` line."""
        line = self._readline()
        if line[3:4] == "-":
            code = line[:3]
            lines = [line]
            while True:
                nxt = self._readline()
                lines.append(nxt)
                if nxt[:3] == code and nxt[3:4] != "-":
                    break
            line = "\n".join(lines)
        if len(line) < 3 or not line[:3].isdigit():
            raise FtpProtocolError(f"malformed reply {line!r}", line)
        logger.debug("ftp< %s", line)
        return line

    def command(self, line: str) -> str:
        self._send(line)
        return self.read_reply()

    def _expect(self, reply: str, *codes: str, error=FtpProtocolError) -> str:
        if not reply.startswith(codes):
            raise error(f"unexpected reply {reply!r}", reply)
        return reply

    def _drop(self) -> None:
        for closable in (self._file, self._sock):
            if closable is not None:
                try:
                    closable.close()
                except OSError:
                    pass
        self._file = self._sock = None
        self.state = State.DISCONNECTED

    # -- operations -------------------------------------------------------------

    def connect(self) -> "FtpSession":
        try:
            self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            self._drop()
            raise FtpNetworkError(f"cannot connect to {self.host}:{self.port}: {exc}") from exc
        self._file = self._sock.makefile("rb")
        self.state = State.CONNECTED
        try:
            self.welcome = self._expect(self.read_reply(), "220")
        except FtpError:
            self._drop()
            raise
        return self

    def login(self, user: str = "anonymous", password: str = "") -> "FtpSession":
        if self.state is State.DISCONNECTED:
            raise FtpStateError("not connected")
        try:
            reply = self.command(f"USER {user}")
            if reply.startswith("331"):
                reply = self.command(f"PASS {password}")
            if reply.startswith("530"):
                raise FtpAuthError(f"login refused for {user!r}", reply)
            self._expect(reply, "230", "202")
        except FtpError:
            self.quit()
            raise
        self.user = user
        self.state = State.LOGGED_IN
        return self

    def set_mode(self, mode: Union[str, Mode]) -> "FtpSession":
        mode = Mode.parse(mode)
        if mode not in (Mode.ASCII, Mode.BINARY):
            raise UnsupportedModeError(f"transfer mode {mode.name} is not supported")
        if self.state is not State.LOGGED_IN:
            raise FtpStateError(f"cannot set mode while {self.state.value}")
        self._expect(self.command(f"TYPE {mode.value}"), "200")
        self.mode = mode
        return self

    def _passive(self) -> tuple[str, int]:
        reply = self._expect(self.command("PASV"), "227")
        m = _PASV_RE.search(reply)
        if m is None:
            raise FtpProtocolError(f"cannot parse PASV reply {reply!r}", reply)
        nums = [int(x) for x in m.groups()]
        return ".".join(map(str, nums[:4])), nums[4] * 256 + nums[5]

    def download(self, remote_name: str, local_name: Union[str, Path]) -> int:
        """RETR ``remote_name`` into ``local_name``; returns bytes written.

        ASCII transfers turn CRLF into the local line separator. A missing
        remote file leaves no local file; a broken transfer removes it.
        """
        if self.state is not State.LOGGED_IN:
            raise FtpStateError(f"cannot download while {self.state.value}")
        if self.mode is None:
            self.set_mode(Mode.BINARY)
        local = Path(local_name)
        host, port = self._passive()
        try:
            data = socket.create_connection((host, port), timeout=self.timeout)
        except OSError as exc:
            raise FtpNetworkError(f"cannot open data connection to {host}:{port}: {exc}") from exc
        written = 0
        try:
            reply = self.command(f"RETR {remote_name}")
            if reply.startswith("550"):
                raise FtpFileNotFound(f"remote file not found: {remote_name}", reply)
            self._expect(reply, "150", "125")
            pending_cr = False
            try:
                with open(local, "wb") as out:
                    while True:
                        chunk = data.recv(65536)
                        if not chunk:
                            break
                        if self.mode is Mode.ASCII:
                            if pending_cr:
                                chunk = b"\r" + chunk
                                pending_cr = False
                            if chunk.endswith(b"\r"):
                                chunk, pending_cr = chunk[:-1], True
                            chunk = chunk.replace(b"\r\n", os.linesep.encode())
                        out.write(chunk)
                        written += len(chunk)
                    if pending_cr:
                        out.write(b"\r")
                        written += 1
            except OSError as exc:
                local.unlink(missing_ok=True)
                raise FtpNetworkError(f"data connection failed: {exc}") from exc
            finally:
                data.close()
            done = self.read_reply()
            if not done.startswith(("226", "250")):
                local.unlink(missing_ok=True)
                raise FtpNetworkError(f"transfer of {remote_name} failed: {done!r}", done)
        finally:
            data.close()
        return written

    def quit(self) -> None:
        if self._sock is not None:
            try:
                self.command("QUIT")
            except FtpError:
                pass
        self._drop()

    def __enter__(self) -> "FtpSession":
        return self

    def __exit__(self, *exc) -> None:
        self.quit()


def connect_login(host: str, user: str = "anonymous", password: str = "",
                  port: int = FTP_PORT, timeout: float = DEFAULT_TIMEOUT) -> FtpSession:
    return FtpSession(host, port, timeout).connect().login(user, password)


def set_mode(session: FtpSession, mode: Union[str, Mode]) -> FtpSession:
    return session.set_mode(mode)


def download(session: FtpSession, remote_name: str, local_name: Union[str, Path]) -> int:
    return session.download(remote_name, local_name)
