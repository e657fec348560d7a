"""The world syscalls act upon: virtual filesystem, fd table, scratch store.

All eleven hooked syscalls are implemented against an in-memory tree.
Errors are encoded as negative return values, never exceptions, matching
the convention that a blocked or failing syscall returns a
syscall-dependent errno.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .errors import MalformedManifestLine
from .model import SyscallEvent

ENOENT = -2
EBADF = -9
EACCES = -13
EEXIST = -17
ENOTEMPTY = -39

# Default error per syscall when a chain is disrupted or a call is
# blocked without an explicit errno.  getpid/getuid cannot fail and
# fall back to the true context value (handled in errno_default).
ERRNO_TABLE = {
    "open": EACCES,
    "mkdir": EACCES,
    "rmdir": EACCES,
    "unlink": EACCES,
    "execve": EACCES,
    "read": EBADF,
    "write": EBADF,
    "getdents": EBADF,
    "close": EBADF,
}


def errno_default(ev: SyscallEvent) -> int:
    if ev.syscall == "getpid":
        return ev.ctx.pid
    if ev.syscall == "getuid":
        return ev.ctx.uid
    return ERRNO_TABLE[ev.syscall]


def normalize_path(path: str) -> str:
    """Collapse duplicate separators and resolve '.'/'..'; absolute only."""
    if not path.startswith("/"):
        path = "/" + path
    parts = []
    for part in path.split("/"):
        if part in ("", "."):
            continue
        if part == "..":
            if parts:
                parts.pop()
            continue
        parts.append(part)
    return "/" + "/".join(parts)


def parent_of(path: str) -> str:
    if path == "/":
        return "/"
    return path.rsplit("/", 1)[0] or "/"


class VirtualFS:
    """In-memory tree of directories and regular files.

    Invariants: "/" always exists and is a directory; no path is both a
    file and a directory; every entry's parent directory exists.
    """

    def __init__(self):
        self.dirs = {"/"}
        self.files = {}  # path -> bytes

    def is_dir(self, path: str) -> bool:
        return normalize_path(path) in self.dirs

    def is_file(self, path: str) -> bool:
        return normalize_path(path) in self.files

    def exists(self, path: str) -> bool:
        return self.is_dir(path) or self.is_file(path)

    def mkdirs(self, path: str) -> None:
        """Create a directory and any missing parents."""
        path = normalize_path(path)
        if path in self.files:
            raise ValueError(f"{path} exists as a file")
        while path not in self.dirs:
            self.dirs.add(path)
            path = parent_of(path)

    def put_file(self, path: str, content: bytes) -> None:
        path = normalize_path(path)
        if path in self.dirs:
            raise ValueError(f"{path} exists as a directory")
        self.mkdirs(parent_of(path))
        self.files[path] = bytes(content)

    def read_file(self, path: str) -> "bytes | None":
        content = self.files.get(normalize_path(path))
        return None if content is None else bytes(content)

    def listdir(self, path: str) -> list:
        """Immediate children of a directory, sorted for determinism."""
        path = normalize_path(path)
        prefix = path if path.endswith("/") else path + "/"
        names = set()
        for p in list(self.dirs) + list(self.files):
            if p != path and p.startswith(prefix):
                names.add(p[len(prefix):].split("/", 1)[0])
        return sorted(names)

    def digest(self) -> str:
        """Stable hash over the whole tree (paths, kinds, contents)."""
        h = hashlib.sha256()
        for d in sorted(self.dirs):
            h.update(b"D\x00" + d.encode() + b"\x00")
        for f in sorted(self.files):
            h.update(b"F\x00" + f.encode() + b"\x00")
            h.update(self.files[f])
            h.update(b"\x00")
        return h.hexdigest()

    def check_invariants(self) -> None:
        assert "/" in self.dirs
        for p in self.files:
            assert p not in self.dirs, f"{p} is both file and dir"
            assert parent_of(p) in self.dirs, f"orphan file {p}"
        for d in self.dirs:
            assert parent_of(d) in self.dirs, f"orphan dir {d}"


def vfs_from_manifest(manifest: bytes) -> VirtualFS:
    """Build a VFS from a line-based manifest.

    Lines are ``D <path>`` or ``F <path> <byte-length> <fill-hex|@text>``.
    Missing parents are created as directories.
    """
    vfs = VirtualFS()
    text = manifest.decode("utf-8") if isinstance(manifest, (bytes, bytearray)) else manifest
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        fields = line.split(maxsplit=3)
        if fields[0] == "D":
            if len(fields) != 2:
                raise MalformedManifestLine(n, f"bad directory line: {raw!r}")
            vfs.mkdirs(fields[1])
        elif fields[0] == "F":
            if len(fields) != 4:
                raise MalformedManifestLine(n, f"bad file line: {raw!r}")
            _, path, length_s, spec = fields
            try:
                length = int(length_s)
            except ValueError:
                raise MalformedManifestLine(n, f"bad length {length_s!r}") from None
            if spec.startswith("@"):
                content = spec[1:].encode("utf-8")
                if len(content) != length:
                    raise MalformedManifestLine(
                        n, f"inline content is {len(content)} bytes, declared {length}")
            else:
                try:
                    fill = bytes([int(spec, 16)])
                except ValueError:
                    raise MalformedManifestLine(n, f"bad fill byte {spec!r}") from None
                content = fill * length
            vfs.put_file(path, content)
        else:
            raise MalformedManifestLine(n, f"unknown record type {fields[0]!r}")
    return vfs


class FdTable:
    """Open-descriptor table; fds allocated from 3 upward, never reused."""

    def __init__(self):
        self.entries = {}  # fd -> [path, offset, mode]
        self.next_fd = 3

    def alloc(self, path: str, mode: str) -> int:
        fd = self.next_fd
        self.next_fd += 1
        self.entries[fd] = [path, 0, mode]
        return fd

    def get(self, fd):
        return self.entries.get(fd)

    def close(self, fd) -> bool:
        return self.entries.pop(fd, None) is not None

    def path_of(self, fd) -> "str | None":
        e = self.entries.get(fd)
        return e[0] if e else None


class ScratchStore:
    """Unbounded key/value cells backing counters, registers, and jumps.

    Reading an unset key yields integer 0.
    """

    def __init__(self):
        self.cells = {}

    def get(self, key: str):
        return self.cells.get(key, 0)

    def set(self, key: str, value) -> None:
        self.cells[key] = value


@dataclass
class SandboxState:
    """One evaluation stream's world: VFS, fds, store, sinks, diagnostics."""

    vfs: VirtualFS = field(default_factory=VirtualFS)
    fds: FdTable = field(default_factory=FdTable)
    store: ScratchStore = field(default_factory=ScratchStore)
    sinks: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    log_count: int = 0
    last_read: bytes = b""
    last_getdents: list = field(default_factory=list)
    clock: "object" = None  # callable -> ISO-8601 str; defaults to UTC now

    def timestamp(self) -> str:
        if self.clock is not None:
            return self.clock()
        return datetime.now(timezone.utc).isoformat(timespec="microseconds")

    def diag(self, kind: str, detail: str) -> None:
        self.diagnostics.append({"kind": kind, "detail": detail})


def exec_syscall(sandbox: SandboxState, ev: SyscallEvent) -> int:
    """Execute the original (unhooked) syscall against the sandbox.

    Returns a non-negative result or a negative errno; never raises for
    runtime conditions.  getdents leaves the entry list in
    ``sandbox.last_getdents`` and read leaves data in ``sandbox.last_read``
    (the side channels the replay harness observes).
    """
    vfs, fds = sandbox.vfs, sandbox.fds
    name, args = ev.syscall, ev.args

    if name == "open":
        path, mode = normalize_path(str(args[0])), str(args[1])
        if mode == "r":
            if not vfs.is_file(path):
                return ENOENT
            return fds.alloc(path, "r")
        if mode in ("w", "creat"):
            if vfs.is_dir(path) or not vfs.is_dir(parent_of(path)):
                return ENOENT
            if path not in vfs.files:
                vfs.files[path] = b""
            else:
                vfs.files[path] = b""  # truncate
            return fds.alloc(path, "w")
        return ENOENT

    if name == "close":
        return 0 if fds.close(args[0]) else EBADF

    if name == "read":
        fd, count = args
        entry = fds.get(fd)
        if entry is None or entry[2] != "r":
            return EBADF
        path, offset, _ = entry
        content = vfs.files.get(path, b"")
        data = bytes(content[offset:offset + int(count)])
        entry[1] = offset + len(data)
        sandbox.last_read = data
        return len(data)

    if name == "write":
        fd, payload = args
        entry = fds.get(fd)
        if entry is None or entry[2] != "w":
            return EBADF
        length = int(payload)
        path, offset, _ = entry
        content = vfs.files.get(path, b"")
        if not isinstance(content, bytearray):
            content = bytearray(content)
            vfs.files[path] = content
        if offset >= len(content):
            content.extend(b"\x00" * (offset - len(content) + length))
        else:
            content[offset:offset + length] = b"\x00" * length
        entry[1] = offset + length
        return length

    if name == "unlink":
        path = normalize_path(str(args[0]))
        if path in vfs.files:
            del vfs.files[path]
            return 0
        return ENOENT

    if name == "mkdir":
        path = normalize_path(str(args[0]))
        if vfs.exists(path):
            return EEXIST
        if not vfs.is_dir(parent_of(path)):
            return ENOENT
        vfs.dirs.add(path)
        return 0

    if name == "rmdir":
        path = normalize_path(str(args[0]))
        if path not in vfs.dirs or path == "/":
            return ENOENT
        if vfs.listdir(path):
            return ENOTEMPTY
        vfs.dirs.discard(path)
        return 0

    if name == "getdents":
        path = normalize_path(str(args[0]))
        if path not in vfs.dirs:
            return ENOENT
        entries = vfs.listdir(path)
        sandbox.last_getdents = entries
        return len(entries)

    if name == "execve":
        path = normalize_path(str(args[0]))
        sandbox.diag("execve", f"{path} argv={args[1]!r}")
        return 0 if vfs.is_file(path) else ENOENT

    if name == "getpid":
        return ev.ctx.pid

    if name == "getuid":
        return ev.ctx.uid

    raise AssertionError(f"unreachable syscall {name}")


def append_to_vfs_file(vfs: VirtualFS, path: str, data: bytes) -> None:
    """Direct append used by the VFS log sink (bypasses the hook layer)."""
    path = normalize_path(path)
    vfs.mkdirs(parent_of(path))
    vfs.files[path] = vfs.files.get(path, b"") + data
