"""Core data model: events, conditions, rules, and compiled programs.

A condition block combines two child truth values d and e with an
operator code f (2 = AND, 4 = OR) via the arithmetic test
``(d + e) * f >= 4``.  Rules pair one condition block (the guard) with
an ordered action chain and an exit flag; a rule chain is evaluated
first to last until a fired rule carries the exit flag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

OP_AND = 2
OP_OR = 4

# The eleven hooked syscalls and their argument arities.
SYSCALL_ARITY = {
    "open": 2,       # (path, mode)
    "close": 1,      # (fd)
    "read": 2,       # (fd, count)
    "write": 2,      # (fd, byte-length)
    "unlink": 1,     # (path)
    "execve": 2,     # (path, argv-string)
    "getpid": 0,
    "getuid": 0,
    "mkdir": 1,      # (path)
    "rmdir": 1,      # (path)
    "getdents": 1,   # (dirpath)
}

SYSCALLS = tuple(SYSCALL_ARITY)


@dataclass
class TaskContext:
    """Identity of the task issuing a syscall."""

    pid: int
    uid: int
    ssid: int
    pname: str
    parent_pname: str

    def __post_init__(self):
        if self.pid < 1 or self.uid < 0 or self.ssid < 0:
            raise ValueError("pid >= 1, uid >= 0, ssid >= 0 required")
        if not self.pname or not self.parent_pname:
            raise ValueError("pname and parent_pname must be non-empty")


@dataclass
class SyscallEvent:
    """One intercepted syscall invocation.

    ``args`` is mutable: manipulating actions rewrite it in place and
    later rules, actions, and the original syscall observe the rewrite.
    """

    seq: int
    syscall: str
    args: list
    ctx: TaskContext

    def __post_init__(self):
        if self.syscall not in SYSCALL_ARITY:
            raise ValueError(f"unknown syscall {self.syscall!r}")
        if len(self.args) != SYSCALL_ARITY[self.syscall]:
            raise ValueError(
                f"{self.syscall} takes {SYSCALL_ARITY[self.syscall]} args, "
                f"got {len(self.args)}"
            )


@dataclass(frozen=True)
class Condition:
    """Leaf predicate: a registered builtin applied to literal params.

    The neutral always-true condition is spelled with builtin name
    ``always_true`` and no params.
    """

    builtin_name: str
    params: tuple = ()


ALWAYS_TRUE = Condition("always_true", ())


@dataclass(frozen=True)
class ConditionBlock:
    """Binary node over conditions / nested blocks.

    Evaluates to 1 exactly when ``(d + e) * op_code >= 4`` where d and e
    are the child results.  Both children are always evaluated; there is
    no short-circuit, so condition counts are deterministic.
    """

    left: "Condition | ConditionBlock"
    right: "Condition | ConditionBlock"
    op_code: int

    def __post_init__(self):
        if self.op_code not in (OP_AND, OP_OR):
            raise ValueError("op_code must be 2 (AND) or 4 (OR)")

    def leaf_count(self) -> int:
        total = 0
        for child in (self.left, self.right):
            if isinstance(child, ConditionBlock):
                total += child.leaf_count()
            else:
                total += 1
        return total


@dataclass(frozen=True)
class Action:
    """One atomic action: builtin name plus literal params.

    Execution returns an integer status; 0 means success, any nonzero
    status disrupts the enclosing chain.
    """

    builtin_name: str
    params: tuple = ()


@dataclass(frozen=True)
class ActionChain:
    """Ordered, non-empty list of actions with disrupt-on-error semantics."""

    actions: tuple

    def __post_init__(self):
        if len(self.actions) < 1:
            raise ValueError("action chain must contain at least one action")


@dataclass(frozen=True)
class Rule:
    """Guard + action chain + exit flag; ``name`` is kept for serialization."""

    name: str
    guard: ConditionBlock
    actions: ActionChain
    exit_flag: int = 0
    span: str = "-"


@dataclass(frozen=True)
class RuleChain:
    """Ordered rules, evaluated first to last."""

    name: str
    rules: tuple


@dataclass
class RuleProgram:
    """Compiled, immutable binding of rule chains to syscall names.

    ``bindings`` preserves source order; at most one chain per syscall.
    """

    chains: dict = field(default_factory=dict)          # name -> RuleChain
    bindings: list = field(default_factory=list)        # [(syscall, chain name)]
    version: int = 1

    def chain_for(self, syscall: str) -> "RuleChain | None":
        for sc, name in self.bindings:
            if sc == syscall:
                return self.chains[name]
        return None

    def bound_syscalls(self):
        return [sc for sc, _ in self.bindings]


EMPTY_PROGRAM = RuleProgram()


@dataclass
class Disposition:
    """Observable outcome of dispatching one event."""

    seq: int
    syscall: str
    matched_rules: list = field(default_factory=list)
    result: int = 0
    blocked: bool = False
    manipulated_args: list = field(default_factory=list)
    conditions_evaluated: int = 0

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "syscall": self.syscall,
            "matched_rules": list(self.matched_rules),
            "result": self.result,
            "blocked": self.blocked,
            "args": list(self.manipulated_args),
            "conditions": self.conditions_evaluated,
        }
