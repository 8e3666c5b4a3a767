import os

import pytest

from spiderkit import ftp
from spiderkit.testbed import FtpFixture

DATA = os.urandom(65536)


@pytest.fixture
def server():
    fx = FtpFixture({"data.bin": DATA, "notes.txt": b"one\r\ntwo\r\nthree\r\n"},
                    users={"alice": "secret"}).start()
    yield fx
    fx.stop()


def session(fx, user="anonymous", password="me@example.org"):
    host, port = fx.address
    return ftp.connect_login(host, user, password, port=port, timeout=5)


def test_binary_download(server, tmp_path):
    with session(server) as s:
        assert s.welcome.startswith("220-")
        s.set_mode("binary")
        n = s.download("data.bin", tmp_path / "data.bin")
    assert n == len(DATA)
    assert (tmp_path / "data.bin").read_bytes() == DATA
    assert server.verbs() == ["USER", "PASS", "TYPE", "PASV", "RETR", "QUIT"]
    assert server.commands()[2] == "TYPE I"


def test_ascii_translates_line_ends(server, tmp_path):
    with session(server, "alice", "secret") as s:
        ftp.set_mode(s, ftp.Mode.ASCII)
        ftp.download(s, "notes.txt", tmp_path / "notes.txt")
    sep = os.linesep.encode()
    assert (tmp_path / "notes.txt").read_bytes() == sep.join([b"one", b"two", b"three", b""])


def test_default_mode_is_binary(server, tmp_path):
    with session(server) as s:
        s.download("data.bin", tmp_path / "d")
    assert "TYPE I" in server.commands()


def test_missing_file_leaves_nothing(server, tmp_path):
    target = tmp_path / "missing"
    with session(server) as s:
        with pytest.raises(ftp.FtpFileNotFound):
            s.download("nope.bin", target)
    assert not target.exists()


def test_broken_transfer_removes_partial(tmp_path):
    with FtpFixture({"big": DATA}, break_data_after=1000) as fx:
        with session(fx) as s:
            with pytest.raises(ftp.FtpNetworkError):
                s.download("big", tmp_path / "big")
    assert not (tmp_path / "big").exists()


def test_bad_password(server):
    host, port = server.address
    with pytest.raises(ftp.FtpAuthError):
        ftp.connect_login(host, "alice", "wrong", port=port, timeout=5)


def test_password_masked_in_log(server):
    session(server, "alice", "secret").quit()
    assert "secret" not in " ".join(server.commands())


@pytest.mark.parametrize("mode", ["ebcdic", "L"])
def test_unsupported_modes(server, mode):
    with session(server) as s:
        with pytest.raises(ftp.UnsupportedModeError):
            s.set_mode(mode)


def test_unknown_mode_name():
    with pytest.raises(ftp.UnsupportedModeError):
        ftp.Mode.parse("hex")


def test_mode_requires_login(server):
    host, port = server.address
    s = ftp.FtpSession(host, port, timeout=5).connect()
    with pytest.raises(ftp.FtpStateError):
        s.set_mode("binary")
    s.quit()


def test_connect_refused():
    import socket
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    with pytest.raises(ftp.FtpNetworkError):
        ftp.connect_login("127.0.0.1", port=port, timeout=2)
