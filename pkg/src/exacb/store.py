"""Durable result storage.

Keys are slash-separated relative paths. Backends:

* :class:`FilesystemStore` - ``<root>/<key>``, atomic temp-file + rename writes.
* :class:`GitBranchStore` - files on an orphan branch (``exacb.data`` by default),
  one commit per write, built with plumbing commands so neither the working
  tree nor the checked-out branch is touched.
* :class:`ObjectStore` - placeholder for S3-style back ends.

Writes are serialized through a per-store lock file (30 s timeout); reads take
no lock.
"""

from __future__ import annotations

import os
import re
import subprocess
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from filelock import FileLock, Timeout

from .protocol import deserialize_report, parse_timestamp, utc

DEFAULT_BRANCH = "exacb.data"
LOCK_TIMEOUT = 30.0
TRUST_SUFFIX = ".trust"
RAW_SUFFIX = ".raw"

_SEGMENT_RE = re.compile(r"[A-Za-z0-9_.+@=,-]+")


class StoreError(RuntimeError):
    pass


class KeyNotFoundError(StoreError, KeyError):
    def __str__(self):
        return self.args[0] if self.args else "key not found"


class InvalidKeyError(StoreError, ValueError):
    pass


class StoreLockTimeout(StoreError):
    """Another writer held the store lock too long; safe to retry."""

    retryable = True


@dataclass(frozen=True)
class Receipt:
    key: str
    revision: str
    trusted: bool = True


def parse_time_span(span) -> tuple[datetime | None, datetime | None] | None:
    """``["2026-01-01", "2026-04-01"]`` style bounds; empty means unbounded.

    A date-only upper bound covers that whole day.
    """
    if not span:
        return None
    if len(span) != 2:
        raise ValueError(f"time_span needs two bounds, got {len(span)}")

    def bound(text, upper):
        if text in (None, ""):
            return None
        if isinstance(text, datetime):
            return utc(text)
        text = str(text)
        if len(text) == 10:
            day = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
            return day.replace(hour=23, minute=59, second=59) if upper else day
        return parse_timestamp(text)

    return bound(span[0], False), bound(span[1], True)


def check_key(key: str) -> str:
    if not isinstance(key, str) or not key:
        raise InvalidKeyError("key must be a non-empty string")
    if key.startswith("/"):
        raise InvalidKeyError(f"invalid key {key!r}: leading slash")
    for segment in key.split("/"):
        if segment in ("", ".", ".."):
            raise InvalidKeyError(f"invalid key {key!r}: empty, '.' or '..' segment")
        if not _SEGMENT_RE.fullmatch(segment):
            raise InvalidKeyError(f"invalid key {key!r}: bad characters in {segment!r}")
    return key


def is_auxiliary(key: str) -> bool:
    """Trust sidecars and raw attachments are stored next to reports, not listed as them."""
    return key.endswith(TRUST_SUFFIX) or any(
        seg.endswith(RAW_SUFFIX) for seg in key.split("/")[:-1]
    )


class ResultStore:
    backend = "abstract"

    def _write(self, files: Mapping[str, bytes], message: str) -> str:
        raise NotImplementedError

    def _read(self, key: str) -> bytes:
        raise NotImplementedError

    def _keys(self) -> list[str]:
        raise NotImplementedError

    def _lock(self) -> FileLock:
        raise NotImplementedError

    def put_report(
        self, key: str, data: bytes, attachments: Mapping[str, bytes] | None = None
    ) -> Receipt:
        """Store ``data`` at ``key``; attachments go under ``<key>.raw/``."""
        check_key(key)
        files = {key: data}
        for name, blob in (attachments or {}).items():
            files[check_key(f"{key}{RAW_SUFFIX}/{name}")] = blob
        return Receipt(key, self._locked_write(files, f"exacb: record {key}"))

    def inject_external(self, key: str, data: bytes) -> Receipt:
        """Store a third-party report; it must validate and is marked untrusted."""
        check_key(key)
        deserialize_report(data)
        files = {key: data, key + TRUST_SUFFIX: b"trusted=false\n"}
        return Receipt(key, self._locked_write(files, f"exacb: record {key}"), trusted=False)

    def get_report(self, key: str) -> bytes:
        check_key(key)
        return self._read(key)

    def is_trusted(self, key: str) -> bool:
        try:
            marker = self._read(key + TRUST_SUFFIX)
        except KeyNotFoundError:
            return True
        return b"trusted=false" not in marker

    def list_reports(
        self,
        prefix: str = "",
        time_span: tuple[datetime | None, datetime | None] | None = None,
    ) -> list[str]:
        """Sorted report keys starting with ``prefix``.

        With ``time_span`` only reports whose ``experiment.started_at`` lies in
        the closed interval are kept; unreadable reports are skipped.
        """
        keys = sorted(k for k in self._keys() if k.startswith(prefix) and not is_auxiliary(k))
        if time_span is None:
            return keys
        start, end = time_span
        kept = []
        for key in keys:
            try:
                started = deserialize_report(self._read(key)).experiment.started_at
            except ValueError:
                continue
            if (start is None or started >= start) and (end is None or started <= end):
                kept.append(key)
        return kept

    def _locked_write(self, files: Mapping[str, bytes], message: str) -> str:
        try:
            with self._lock():
                return self._write(files, message)
        except Timeout:
            raise StoreLockTimeout(
                f"timed out after {LOCK_TIMEOUT:.0f}s waiting for the store lock"
            ) from None
        except OSError as exc:
            keys = ", ".join(files)
            raise StoreError(f"write of {keys} failed: {exc}") from exc


class FilesystemStore(ResultStore):
    backend = "filesystem"
    LOCK_NAME = ".exacb.lock"

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise StoreError(f"store root {self.root} is not a directory")

    def __repr__(self):
        return f"FilesystemStore({str(self.root)!r})"

    def _lock(self) -> FileLock:
        return FileLock(str(self.root / self.LOCK_NAME), timeout=LOCK_TIMEOUT)

    def _write(self, files: Mapping[str, bytes], message: str) -> str:
        for key, data in files.items():
            target = self.root / key
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-", suffix=".part")
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, target)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return str(self.root / next(iter(files)))

    def _read(self, key: str) -> bytes:
        try:
            return (self.root / key).read_bytes()
        except (FileNotFoundError, IsADirectoryError, NotADirectoryError):
            raise KeyNotFoundError(f"not found: {key}") from None

    def _keys(self) -> list[str]:
        keys = []
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = [d for d in dirnames if not d.startswith(".")]
            rel = Path(dirpath).relative_to(self.root)
            for name in filenames:
                if name.startswith("."):
                    continue
                keys.append((rel / name).as_posix())
        return keys


class GitBranchStore(ResultStore):
    """Results as files on an orphan branch of a git repository (work tree or bare)."""

    backend = "git_orphan_branch"

    def __init__(self, root: str | Path, branch: str = DEFAULT_BRANCH):
        self.root = Path(root)
        self.branch = branch
        self.ref = f"refs/heads/{branch}"
        try:
            git_dir = self._git("rev-parse", "--absolute-git-dir").decode().strip()
        except (StoreError, FileNotFoundError) as exc:
            raise StoreError(f"{self.root} is not a git repository: {exc}") from None
        self.git_dir = Path(git_dir)

    def __repr__(self):
        return f"GitBranchStore({str(self.root)!r}, branch={self.branch!r})"

    def _git(self, *args: str, input: bytes | None = None, env: dict | None = None) -> bytes:
        proc = subprocess.run(
            ["git", *args],
            cwd=self.root,
            input=input,
            env=env,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
        if proc.returncode != 0:
            raise StoreError(
                f"git {' '.join(args)} failed: {proc.stderr.decode(errors='replace').strip()}"
            )
        return proc.stdout

    def _lock(self) -> FileLock:
        return FileLock(str(self.git_dir / "exacb-store.lock"), timeout=LOCK_TIMEOUT)

    def head(self) -> str | None:
        try:
            return self._git("rev-parse", "--verify", "--quiet", self.ref).decode().strip()
        except StoreError:
            return None

    def _commit_env(self, index_file: str) -> dict[str, str]:
        env = dict(os.environ, GIT_INDEX_FILE=index_file)
        try:
            self._git("config", "user.email")
        except StoreError:
            env.setdefault("GIT_AUTHOR_NAME", "exacb")
            env.setdefault("GIT_AUTHOR_EMAIL", "exacb@localhost")
            env.setdefault("GIT_COMMITTER_NAME", "exacb")
            env.setdefault("GIT_COMMITTER_EMAIL", "exacb@localhost")
        return env

    def _write(self, files: Mapping[str, bytes], message: str) -> str:
        parent = self.head()
        with tempfile.TemporaryDirectory() as tmp:
            env = self._commit_env(os.path.join(tmp, "index"))
            if parent:
                self._git("read-tree", parent, env=env)
            else:
                self._git("read-tree", "--empty", env=env)
            for key, data in files.items():
                blob = self._git("hash-object", "-w", "--stdin", input=data).decode().strip()
                self._git("update-index", "--add", "--cacheinfo", f"100644,{blob},{key}", env=env)
            tree = self._git("write-tree", env=env).decode().strip()
            args = ["commit-tree", tree, "-m", message]
            if parent:
                args += ["-p", parent]
            commit = self._git(*args, env=env).decode().strip()
        # compare-and-swap against the parent we built on
        self._git("update-ref", self.ref, commit, parent or "0" * 40)
        return commit

    def _read(self, key: str) -> bytes:
        if self.head() is None:
            raise KeyNotFoundError(f"not found: {key}")
        try:
            return self._git("cat-file", "blob", f"{self.ref}:{key}")
        except StoreError:
            raise KeyNotFoundError(f"not found: {key}") from None

    def _keys(self) -> list[str]:
        if self.head() is None:
            return []
        out = self._git("ls-tree", "-r", "-z", "--name-only", self.ref)
        return [k for k in out.decode().split("\0") if k]

    def history(self) -> list[str]:
        """Commit messages on the branch, oldest first."""
        if self.head() is None:
            return []
        out = self._git("log", "--reverse", "--format=%s", self.ref)
        return out.decode().splitlines()


class ObjectStore(ResultStore):
    """S3-style object storage; the interface is fixed but no client ships yet."""

    backend = "object"

    def __init__(self, url: str):
        self.url = url

    def _unavailable(self, *args, **kwargs):
        raise NotImplementedError(f"object storage backend is not implemented ({self.url})")

    _write = _read = _keys = _lock = _unavailable


def open_store(backend: str, root: str | Path, branch: str = DEFAULT_BRANCH) -> ResultStore:
    if backend == "filesystem":
        return FilesystemStore(root)
    if backend in ("git", GitBranchStore.backend):
        return GitBranchStore(root, branch)
    if backend == "object":
        return ObjectStore(str(root))
    raise ValueError(f"unknown store backend {backend!r}")


# function-style aliases


def put_report(store: ResultStore, key: str, data: bytes) -> Receipt:
    return store.put_report(key, data)


def get_report(store: ResultStore, key: str) -> bytes:
    return store.get_report(key)


def list_reports(store: ResultStore, key_prefix: str = "", time_span=None) -> list[str]:
    return store.list_reports(key_prefix, time_span)


def inject_external(store: ResultStore, key: str, data: bytes) -> Receipt:
    return store.inject_external(key, data)


def iter_reports(store: ResultStore, keys: Iterable[str]):
    """Yield ``(key, report)`` pairs, skipping documents that fail validation."""
    for key in keys:
        try:
            yield key, deserialize_report(store.get_report(key))
        except ValueError:
            continue
