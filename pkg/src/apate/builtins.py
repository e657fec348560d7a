"""Standard library of conditions and actions, plus the builtin registry.

Conditions return exactly 0 or 1.  Actions return an integer status:
0 for success, nonzero to disrupt the chain.  The registry exposes each
builtin's kind and parameter signature so the compiler can check arity
and types.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

from .errors import UnknownBuiltin
from .logsink import LogRecord, format_record
from .sandbox import exec_syscall, errno_default, normalize_path

COMPARISONS = {
    "==": operator.eq,
    "!=": operator.ne,
    ">": operator.gt,
    "<": operator.lt,
    ">=": operator.ge,
    "<=": operator.le,
}

CTX_FIELDS = ("pid", "uid", "ssid")


class WildcardPattern:
    """Literal string with an optional single trailing '*'.

    ``P*`` matches any string starting with P; a pattern without '*'
    matches only exact equality.  '*' alone matches everything.
    """

    __slots__ = ("text", "prefix", "has_tail_star")

    def __init__(self, text: str):
        star_count = text.count("*")
        if star_count > 1 or (star_count == 1 and not text.endswith("*")):
            raise ValueError(f"'*' allowed only once, in final position: {text!r}")
        self.text = text
        self.has_tail_star = text.endswith("*")
        self.prefix = text[:-1] if self.has_tail_star else text

    def matches(self, s: str) -> bool:
        if self.has_tail_star:
            return s.startswith(self.prefix)
        return s == self.prefix

    def __repr__(self):
        return f"WildcardPattern({self.text!r})"


def _as_str(value) -> str:
    if isinstance(value, (bytes, bytearray)):
        return value.decode("utf-8", errors="replace")
    return str(value)


# --- condition implementations -----------------------------------------
# Signature: fn(ev, sandbox, params) -> 0 | 1

def _c_always_true(ev, sandbox, params):
    return 1


def _c_testforpname(ev, sandbox, params):
    return 1 if WildcardPattern(params[0]).matches(ev.ctx.parent_pname) else 0


def _c_testforselfpname(ev, sandbox, params):
    return 1 if WildcardPattern(params[0]).matches(ev.ctx.pname) else 0


def _c_testforparam(ev, sandbox, params):
    index, pattern = params
    if index < 0 or index >= len(ev.args):
        sandbox.diag("ArgIndexOutOfRange",
                     f"testforparam index {index} on {ev.syscall}")
        return 0
    return 1 if WildcardPattern(pattern).matches(_as_str(ev.args[index])) else 0


def _c_testforuid(ev, sandbox, params):
    op, value = params
    return 1 if COMPARISONS[op](ev.ctx.uid, value) else 0


def _c_ctxfield_cmp(ev, sandbox, params):
    fieldname, op, value = params
    return 1 if COMPARISONS[op](getattr(ev.ctx, fieldname), value) else 0


def _c_file_keyword(ev, sandbox, params):
    path, keyword = params
    content = sandbox.vfs.read_file(path)
    if content is None:
        sandbox.diag("MissingFile", f"file_keyword: {path}")
        return 0
    return 1 if keyword.encode("utf-8") in content else 0


def _c_store_cmp(ev, sandbox, params):
    key, op, value = params
    return 1 if COMPARISONS[op](sandbox.store.get(key), value) else 0


def _c_testforfdpath(ev, sandbox, params):
    index, pattern = params
    if index < 0 or index >= len(ev.args):
        sandbox.diag("ArgIndexOutOfRange",
                     f"testforfdpath index {index} on {ev.syscall}")
        return 0
    path = sandbox.fds.path_of(ev.args[index])
    if path is None:
        return 0
    return 1 if WildcardPattern(pattern).matches(path) else 0


# --- condition specializers ----------------------------------------------
# Guard compilation binds parameters once; these return (ev, sandbox)
# closures with patterns pre-parsed and comparison operators resolved, so
# the per-event hot path is a single call.  Behavior is identical to the
# generic fn above, diagnostics included.

def _s_always_true(params):
    return lambda ev, sandbox: 1


def _s_testforpname(params):
    matches = WildcardPattern(params[0]).matches
    return lambda ev, sandbox: 1 if matches(ev.ctx.parent_pname) else 0


def _s_testforselfpname(params):
    matches = WildcardPattern(params[0]).matches
    return lambda ev, sandbox: 1 if matches(ev.ctx.pname) else 0


def _s_testforparam(params):
    index, pattern = params
    matches = WildcardPattern(pattern).matches

    def run(ev, sandbox):
        if index < 0 or index >= len(ev.args):
            sandbox.diag("ArgIndexOutOfRange",
                         f"testforparam index {index} on {ev.syscall}")
            return 0
        return 1 if matches(_as_str(ev.args[index])) else 0
    return run


def _s_testforuid(params):
    cmp, value = COMPARISONS[params[0]], params[1]
    return lambda ev, sandbox: 1 if cmp(ev.ctx.uid, value) else 0


def _s_ctxfield_cmp(params):
    fieldname, op, value = params
    cmp = COMPARISONS[op]
    return lambda ev, sandbox: 1 if cmp(getattr(ev.ctx, fieldname), value) else 0


def _s_store_cmp(params):
    key, op, value = params
    cmp = COMPARISONS[op]
    return lambda ev, sandbox: 1 if cmp(sandbox.store.get(key), value) else 0


def _s_testforfdpath(params):
    index, pattern = params
    matches = WildcardPattern(pattern).matches

    def run(ev, sandbox):
        if index < 0 or index >= len(ev.args):
            sandbox.diag("ArgIndexOutOfRange",
                         f"testforfdpath index {index} on {ev.syscall}")
            return 0
        path = sandbox.fds.path_of(ev.args[index])
        if path is None:
            return 0
        return 1 if matches(path) else 0
    return run


_SPECIALIZERS = {
    "always_true": _s_always_true,
    "testforpname": _s_testforpname,
    "testforselfpname": _s_testforselfpname,
    "testforparam": _s_testforparam,
    "testforuid": _s_testforuid,
    "ctxfield_cmp": _s_ctxfield_cmp,
    "store_cmp": _s_store_cmp,
    "testforfdpath": _s_testforfdpath,
}


def specialize(name: str, params) -> "object | None":
    """Parameter-bound closure for a condition, or None to use fn."""
    maker = _SPECIALIZERS.get(name)
    return maker(params) if maker else None


# --- action implementations --------------------------------------------
# Signature: fn(ev, sandbox, ctx, params) -> status int
# ctx is the engine's per-event evaluation state (result slot, flags).

def _a_manipulateparam(ev, sandbox, ctx, params):
    index, pattern_text, replacement = params
    if index < 0 or index >= len(ev.args):
        return 1  # chain disruption
    pattern = WildcardPattern(pattern_text)
    value = _as_str(ev.args[index])
    if not pattern.matches(value):
        return 0
    if pattern.has_tail_star:
        rest = value[len(pattern.prefix):]
        if replacement.endswith("/") and rest.startswith("/"):
            rest = rest.lstrip("/")
        new = replacement + rest
    else:
        new = replacement
    ev.args[index] = new
    return 0


def _a_log(ev, sandbox, ctx, params):
    rec = LogRecord(ts=sandbox.timestamp(), seq=ev.seq, pid=ev.ctx.pid,
                    uid=ev.ctx.uid, syscall=ev.syscall, args=list(ev.args),
                    result=ctx.result)
    line = format_record(rec)
    for sink in sandbox.sinks:
        try:
            sink.emit(line)
        except Exception as exc:  # sink failure must not alter behavior
            sandbox.diag("SinkFailure", repr(exc))
    sandbox.log_count += 1
    return 0


def _a_call_orig(ev, sandbox, ctx, params):
    ctx.result = exec_syscall(sandbox, ev)
    ctx.invoked = True
    return 0


def _a_block(ev, sandbox, ctx, params):
    ctx.blocked = True
    ctx.invoked = True
    ctx.result = params[0] if params else errno_default(ev)
    return 0


def _a_jump(ev, sandbox, ctx, params):
    ctx.jump_target = params[0]
    return 0


def _a_store_set(ev, sandbox, ctx, params):
    key, value = params
    sandbox.store.set(key, value)
    return 0


def _a_store_add(ev, sandbox, ctx, params):
    key, delta = params
    current = sandbox.store.get(key)
    if not isinstance(current, int):
        return 1  # adding to a string-valued cell disrupts the chain
    sandbox.store.set(key, current + delta)
    return 0


def _a_filter_dirents(ev, sandbox, ctx, params):
    pattern = WildcardPattern(params[0])
    kept = [n for n in sandbox.last_getdents if not pattern.matches(n)]
    removed = len(sandbox.last_getdents) - len(kept)
    sandbox.last_getdents = kept
    if removed and ctx.result >= 0:
        ctx.result = max(ctx.result - removed, 0)
    return 0


# --- registry -----------------------------------------------------------

@dataclass(frozen=True)
class BuiltinSpec:
    name: str
    kind: str          # "condition" | "action"
    sig: tuple         # param kinds; a trailing kind ending in '?' is optional
    fn: "object"


def _spec(name, kind, sig, fn):
    return name, BuiltinSpec(name, kind, sig, fn)


REGISTRY = dict([
    _spec("always_true", "condition", (), _c_always_true),
    _spec("testforpname", "condition", ("pattern",), _c_testforpname),
    _spec("testforselfpname", "condition", ("pattern",), _c_testforselfpname),
    _spec("testforparam", "condition", ("int", "pattern"), _c_testforparam),
    _spec("testforuid", "condition", ("cmp", "int"), _c_testforuid),
    _spec("ctxfield_cmp", "condition", ("field", "cmp", "int"), _c_ctxfield_cmp),
    _spec("file_keyword", "condition", ("str", "str"), _c_file_keyword),
    _spec("store_cmp", "condition", ("str", "cmp", "int"), _c_store_cmp),
    _spec("testforfdpath", "condition", ("int", "pattern"), _c_testforfdpath),
    _spec("manipulateparam", "action", ("int", "pattern", "str"), _a_manipulateparam),
    _spec("log", "action", (), _a_log),
    _spec("call_orig", "action", (), _a_call_orig),
    _spec("block", "action", ("int?",), _a_block),
    _spec("jump", "action", ("int",), _a_jump),
    _spec("store_set", "action", ("str", "any"), _a_store_set),
    _spec("store_add", "action", ("str", "int"), _a_store_add),
    _spec("filter_dirents", "action", ("pattern",), _a_filter_dirents),
])


def lookup(name: str) -> BuiltinSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownBuiltin(f"unknown builtin {name!r}") from None


def check_params(name: str, params) -> "str | None":
    """Validate params against a builtin's signature.

    Returns an error message or None.  Used by the compiler and at
    program load so bad programs never reach the engine.
    """
    spec = lookup(name)
    required = [k for k in spec.sig if not k.endswith("?")]
    if not (len(required) <= len(params) <= len(spec.sig)):
        want = (f"{len(required)}" if len(required) == len(spec.sig)
                else f"{len(required)}..{len(spec.sig)}")
        return f"{name} takes {want} params, got {len(params)}"
    for kind, value in zip(spec.sig, params):
        kind = kind.rstrip("?")
        if kind == "int" and not isinstance(value, int):
            return f"{name}: expected integer, got {value!r}"
        if kind in ("str", "pattern", "cmp", "field") and not isinstance(value, str):
            return f"{name}: expected string, got {value!r}"
        if kind == "pattern":
            try:
                WildcardPattern(value)
            except ValueError as exc:
                return f"{name}: {exc}"
        if kind == "cmp" and value not in COMPARISONS:
            return f"{name}: bad comparison {value!r}"
        if kind == "field" and value not in CTX_FIELDS:
            return f"{name}: bad context field {value!r}"
    return None


def rewrite_loop_hazard(params) -> bool:
    """True when a manipulateparam replacement re-matches its own pattern."""
    _, pattern_text, replacement = params
    try:
        return WildcardPattern(pattern_text).matches(replacement)
    except ValueError:
        return False
