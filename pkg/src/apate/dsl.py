"""Compiler for the .apate configuration language.

Pipeline: tokenize -> parse -> analyze -> lower.  The language has three
statement forms:

    define c1,c2 as condition
    let cb1 be {(c1("mysql") && c2(0;"/var/lib/mysql/*"))}
    bind rc1 to sy1

Blocks hold one of three bodies: a condition expression (&&/|| over
invocations, && binds tighter), a rule (guard ``->`` action list), or a
rule chain (comma-separated rule names, ':' marks the exit rule).
Invocation arguments are separated by ';' as in the original sources;
',' is accepted as an alias.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import builtins as bi
from .errors import (ApateSyntaxError, ArityError, DuplicateBind,
                     IllegalCharacter, SemanticError, TypeMismatch,
                     UndefinedName, UnterminatedString)
from .model import (Action, ActionChain, ALWAYS_TRUE, Condition,
                    ConditionBlock, OP_AND, OP_OR, Rule, RuleChain,
                    RuleProgram, SYSCALL_ARITY)

KEYWORDS = ("define", "as", "let", "be", "bind", "to")
TYPE_KEYWORDS = ("condition", "rule", "action", "conditionblock",
                 "rulechain", "syscall")


@dataclass
class Token:
    type: str       # KW IDENT STRING INT PUNCT EOF
    value: object
    line: int
    col: int


@dataclass
class SourceUnit:
    text: str
    filename: str = "<input>"


# --- lexer ---------------------------------------------------------------

_STRING_ESCAPES = {'"': '"', "\\": "\\", "/": "/", "n": "\n", "t": "\t",
                   "r": "\r", "b": "\b", "f": "\f"}


def tokenize(src: SourceUnit) -> list:
    text, filename = src.text, src.filename
    tokens = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k=1):
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            advance()
            continue
        if ch == "\\" and i + 1 < n and text[i + 1] == "\n":
            # physical-line continuation: acts as whitespace here
            advance(2)
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                advance()
            continue
        start_line, start_col = line, col
        if ch == '"':
            advance()
            buf = []
            while True:
                if i >= n or text[i] == "\n":
                    raise UnterminatedString("unterminated string literal",
                                             filename, start_line, start_col)
                c = text[i]
                if c == '"':
                    advance()
                    break
                if c == "\\":
                    if i + 1 < n and text[i + 1] == "\n":
                        # continuation inside a string splices out the
                        # newline and the next line's indentation
                        advance(2)
                        while i < n and text[i] in " \t":
                            advance()
                        continue
                    if i + 1 < n and text[i + 1] in _STRING_ESCAPES:
                        buf.append(_STRING_ESCAPES[text[i + 1]])
                        advance(2)
                        continue
                    if i + 1 < n and text[i + 1] == "u":
                        if i + 6 <= n:
                            try:
                                buf.append(chr(int(text[i + 2:i + 6], 16)))
                                advance(6)
                                continue
                            except ValueError:
                                pass
                        raise IllegalCharacter("bad \\u escape", filename, line, col)
                    raise IllegalCharacter(f"bad escape \\{text[i + 1:i + 2]}",
                                           filename, line, col)
                buf.append(c)
                advance()
            tokens.append(Token("STRING", "".join(buf), start_line, start_col))
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("INT", int(text[i:j]), start_line, start_col))
            advance(j - i)
            continue
        if ch == "-":
            if i + 1 < n and text[i + 1] == ">":
                tokens.append(Token("PUNCT", "->", start_line, start_col))
                advance(2)
                continue
            if i + 1 < n and text[i + 1].isdigit():
                j = i + 1
                while j < n and text[j].isdigit():
                    j += 1
                tokens.append(Token("INT", int(text[i:j]), start_line, start_col))
                advance(j - i)
                continue
            raise IllegalCharacter("stray '-'", filename, start_line, start_col)
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            tokens.append(Token("KW" if word in KEYWORDS else "IDENT",
                                word, start_line, start_col))
            advance(j - i)
            continue
        if ch in "{}(),;:":
            tokens.append(Token("PUNCT", ch, start_line, start_col))
            advance()
            continue
        if ch == "&" and i + 1 < n and text[i + 1] == "&":
            tokens.append(Token("PUNCT", "&&", start_line, start_col))
            advance(2)
            continue
        if ch == "|" and i + 1 < n and text[i + 1] == "|":
            tokens.append(Token("PUNCT", "||", start_line, start_col))
            advance(2)
            continue
        raise IllegalCharacter(f"illegal character {ch!r}",
                               filename, start_line, start_col)
    tokens.append(Token("EOF", None, line, col))
    return tokens


# --- AST ------------------------------------------------------------------

@dataclass
class Define:
    names: list
    typekw: str
    line: int = 0


@dataclass
class Let:
    name: str
    rhs: object
    line: int = 0


@dataclass
class BindStmt:
    chain: str
    syscall: str
    line: int = 0


@dataclass
class NameRef:
    name: str


@dataclass
class Call:
    name: str
    args: list
    line: int = 0


@dataclass
class BinOp:
    op: str  # "&&" | "||"
    left: object
    right: object


@dataclass
class CondBlockExpr:
    expr: object  # Call | BinOp


@dataclass
class RuleExpr:
    guard: object  # NameRef | CondBlockExpr
    actions: list  # [Call]


@dataclass
class ChainExpr:
    items: list  # [(exit: bool, name: str)]


@dataclass
class Ast:
    statements: list
    filename: str = "<input>"


class Parser:
    def __init__(self, tokens, filename="<input>"):
        self.tokens = tokens
        self.filename = filename
        self.pos = 0

    def peek(self, offset=0) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def next(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.type != "EOF":
            self.pos += 1
        return tok

    def error(self, expected, tok=None):
        tok = tok or self.peek()
        got = "end of input" if tok.type == "EOF" else repr(tok.value)
        raise ApateSyntaxError(f"expected {expected}, got {got}",
                               self.filename, tok.line, tok.col)

    def expect(self, type_, value=None) -> Token:
        tok = self.peek()
        if tok.type != type_ or (value is not None and tok.value != value):
            self.error(value if value is not None else type_.lower())
        return self.next()

    def parse(self) -> Ast:
        statements = []
        while self.peek().type != "EOF":
            statements.append(self.statement())
        if not statements:
            self.error("at least one statement")
        return Ast(statements, self.filename)

    def statement(self):
        tok = self.peek()
        if tok.type == "KW" and tok.value == "define":
            return self.define()
        if tok.type == "KW" and tok.value == "let":
            return self.let()
        if tok.type == "KW" and tok.value == "bind":
            return self.bind()
        self.error("define, let, or bind")

    def define(self) -> Define:
        kw = self.expect("KW", "define")
        names = [self.expect("IDENT").value]
        while self.peek().value == ",":
            self.next()
            names.append(self.expect("IDENT").value)
        self.expect("KW", "as")
        tok = self.expect("IDENT")
        if tok.value not in TYPE_KEYWORDS:
            raise ApateSyntaxError(
                f"unknown type {tok.value!r} (expected one of {', '.join(TYPE_KEYWORDS)})",
                self.filename, tok.line, tok.col)
        return Define(names, tok.value, kw.line)

    def let(self) -> Let:
        kw = self.expect("KW", "let")
        name = self.expect("IDENT").value
        self.expect("KW", "be")
        return Let(name, self.rhs(), kw.line)

    def bind(self) -> BindStmt:
        kw = self.expect("KW", "bind")
        chain = self.expect("IDENT").value
        self.expect("KW", "to")
        syscall = self.expect("IDENT").value
        return BindStmt(chain, syscall, kw.line)

    def rhs(self):
        tok = self.peek()
        if tok.value == "{" and tok.type == "PUNCT":
            return self.block()
        if tok.type == "IDENT":
            if self.peek(1).value == "(":
                return self.invocation()
            return NameRef(self.next().value)
        self.error("identifier, builtin call, or block")

    def block(self):
        self.expect("PUNCT", "{")
        body = self.block_body()
        self.expect("PUNCT", "}")
        return body

    def block_body(self):
        tok = self.peek()
        if tok.value == ":":
            return self.chainexpr()
        if tok.value == "{":
            return self.ruleexpr()
        if tok.value == "(":
            return CondBlockExpr(self.condexpr())
        if tok.type == "IDENT":
            nxt = self.peek(1).value
            if nxt == "->":
                return self.ruleexpr()
            if nxt == "(":
                return CondBlockExpr(self.condexpr())
            return self.chainexpr()
        self.error("condition expression, rule, or chain")

    def condexpr(self):
        node = self.condand()
        while self.peek().value == "||":
            self.next()
            node = BinOp("||", node, self.condand())
        return node

    def condand(self):
        node = self.condterm()
        while self.peek().value == "&&":
            self.next()
            node = BinOp("&&", node, self.condterm())
        return node

    def condterm(self):
        tok = self.peek()
        if tok.value == "(":
            self.next()
            node = self.condexpr()
            self.expect("PUNCT", ")")
            return node
        if tok.type == "IDENT":
            return self.invocation()
        self.error("'(' or condition invocation")

    def invocation(self) -> Call:
        name_tok = self.expect("IDENT")
        self.expect("PUNCT", "(")
        args = []
        if self.peek().value != ")":
            args.append(self.arg())
            while self.peek().value in (";", ","):
                self.next()
                args.append(self.arg())
        self.expect("PUNCT", ")")
        return Call(name_tok.value, args, name_tok.line)

    def arg(self):
        tok = self.peek()
        if tok.type in ("STRING", "INT"):
            return self.next().value
        self.error("string or integer literal")

    def ruleexpr(self) -> RuleExpr:
        tok = self.peek()
        if tok.value == "{":
            self.next()
            guard = CondBlockExpr(self.condexpr())
            self.expect("PUNCT", "}")
        else:
            guard = NameRef(self.expect("IDENT").value)
        self.expect("PUNCT", "->")
        actions = [self.invocation()]
        while self.peek().value == ",":
            self.next()
            actions.append(self.invocation())
        return RuleExpr(guard, actions)

    def chainexpr(self) -> ChainExpr:
        items = [self.chainitem()]
        while self.peek().value == ",":
            self.next()
            items.append(self.chainitem())
        return ChainExpr(items)

    def chainitem(self):
        exit_flag = False
        if self.peek().value == ":":
            self.next()
            exit_flag = True
        return (exit_flag, self.expect("IDENT").value)


def parse(tokens, filename="<input>") -> Ast:
    return Parser(tokens, filename).parse()


# --- analysis -------------------------------------------------------------

@dataclass
class TypedProgram:
    filename: str
    conditions: dict = field(default_factory=dict)  # var -> (builtin, frozen|None)
    actions: dict = field(default_factory=dict)
    blocks: dict = field(default_factory=dict)      # var -> condexpr AST
    rules: dict = field(default_factory=dict)       # var -> (guard AST, [(builtin, params)], line)
    chain_defs: dict = field(default_factory=dict)  # var -> [(exit, rule var)]
    syscalls: dict = field(default_factory=dict)    # var -> canonical name
    binds: list = field(default_factory=list)       # [(syscall name, chain var)]
    warnings: list = field(default_factory=list)


def _normalize_syscall(name: str) -> "str | None":
    bare = name[4:] if name.startswith("sys_") else name
    return bare if bare in SYSCALL_ARITY else None


class Analyzer:
    def __init__(self, ast: Ast, registry=None):
        self.ast = ast
        self.registry = registry if registry is not None else bi.REGISTRY
        self.declared = {}   # name -> typekw
        self.used = set()
        self.out = TypedProgram(ast.filename)

    def err(self, cls, message, line):
        raise cls(message, self.ast.filename, line, 1)

    def analyze(self) -> TypedProgram:
        for stmt in self.ast.statements:
            if isinstance(stmt, Define):
                for name in stmt.names:
                    if name in self.declared:
                        self.err(SemanticError, f"{name!r} already defined", stmt.line)
                    self.declared[name] = stmt.typekw
        for stmt in self.ast.statements:
            if isinstance(stmt, Let):
                self.let(stmt)
        for stmt in self.ast.statements:
            if isinstance(stmt, BindStmt):
                self.bind(stmt)
        for name in self.declared:
            if name not in self.used and name not in self._assigned():
                self.out.warnings.append(f"{name!r} defined but never assigned")
            elif name not in self.used:
                self.out.warnings.append(f"{name!r} assigned but never used")
        return self.out

    def _assigned(self):
        out = self.out
        return (set(out.conditions) | set(out.actions) | set(out.blocks)
                | set(out.rules) | set(out.chain_defs) | set(out.syscalls))

    def let(self, stmt: Let):
        name, rhs = stmt.name, stmt.rhs
        if name not in self.declared:
            self.err(UndefinedName, f"{name!r} not defined", stmt.line)
        if name in self._assigned():
            self.err(SemanticError, f"{name!r} assigned twice", stmt.line)
        typekw = self.declared[name]
        if typekw in ("condition", "action"):
            self.let_builtin_alias(name, typekw, rhs, stmt.line)
        elif typekw == "conditionblock":
            if not isinstance(rhs, CondBlockExpr):
                self.err(TypeMismatch,
                         f"{name!r} is a conditionblock; expected a condition "
                         f"expression block", stmt.line)
            self.check_condexpr(rhs.expr)
            self.out.blocks[name] = rhs.expr
        elif typekw == "rule":
            if not isinstance(rhs, RuleExpr):
                self.err(TypeMismatch,
                         f"{name!r} is a rule; expected {{guard->actions}}", stmt.line)
            self.out.rules[name] = (*self.check_ruleexpr(rhs, stmt.line), stmt.line)
        elif typekw == "rulechain":
            if not isinstance(rhs, ChainExpr):
                self.err(TypeMismatch,
                         f"{name!r} is a rulechain; expected {{rule,rule,...}}",
                         stmt.line)
            for _, rname in rhs.items:
                if self.declared.get(rname) != "rule":
                    self.err(TypeMismatch, f"{rname!r} is not a rule", stmt.line)
                self.used.add(rname)
            self.out.chain_defs[name] = rhs.items
        elif typekw == "syscall":
            if not isinstance(rhs, NameRef):
                self.err(TypeMismatch, f"{name!r} is a syscall; expected a "
                         f"syscall name", stmt.line)
            canonical = _normalize_syscall(rhs.name)
            if canonical is None:
                self.err(UndefinedName, f"unknown syscall {rhs.name!r}", stmt.line)
            self.out.syscalls[name] = canonical

    def let_builtin_alias(self, name, typekw, rhs, line):
        table = self.out.conditions if typekw == "condition" else self.out.actions
        if isinstance(rhs, NameRef):
            spec = self.registry.get(rhs.name)
            if spec is None:
                self.err(UndefinedName, f"unknown builtin {rhs.name!r}", line)
            if spec.kind != typekw:
                self.err(TypeMismatch,
                         f"{rhs.name!r} is a {spec.kind} builtin, but {name!r} "
                         f"is declared as {typekw}", line)
            table[name] = (rhs.name, None)
        elif isinstance(rhs, Call):
            spec = self.registry.get(rhs.name)
            if spec is None:
                self.err(UndefinedName, f"unknown builtin {rhs.name!r}", line)
            if spec.kind != typekw:
                self.err(TypeMismatch,
                         f"{rhs.name!r} is a {spec.kind} builtin, but {name!r} "
                         f"is declared as {typekw}", line)
            err = bi.check_params(rhs.name, tuple(rhs.args))
            if err:
                self.err(ArityError, err, line)
            table[name] = (rhs.name, tuple(rhs.args))
        else:
            self.err(TypeMismatch,
                     f"{name!r} is a {typekw}; expected a builtin name", line)

    def resolve_invocation(self, call: Call, want_kind: str):
        """Resolve a call to (builtin_name, params); checks kind and params."""
        frozen = None
        if call.name in (self.out.conditions if want_kind == "condition"
                         else self.out.actions):
            table = (self.out.conditions if want_kind == "condition"
                     else self.out.actions)
            builtin, frozen = table[call.name]
            self.used.add(call.name)
        elif call.name in self.declared:
            self.err(TypeMismatch,
                     f"{call.name!r} is a {self.declared[call.name]}, "
                     f"not a {want_kind}", call.line)
        elif call.name in self.registry:
            spec = self.registry[call.name]
            if spec.kind != want_kind:
                self.err(TypeMismatch,
                         f"{call.name!r} is a {spec.kind}, not a {want_kind}",
                         call.line)
            builtin = call.name
        else:
            self.err(UndefinedName, f"unknown name {call.name!r}", call.line)
        if frozen is not None:
            if call.args:
                self.err(ArityError,
                         f"{call.name!r} already carries parameters; call it "
                         f"with no arguments", call.line)
            params = frozen
        else:
            params = tuple(call.args)
            err = bi.check_params(builtin, params)
            if err:
                self.err(ArityError, err, call.line)
        return builtin, params

    def check_condexpr(self, node):
        if isinstance(node, BinOp):
            self.check_condexpr(node.left)
            self.check_condexpr(node.right)
        elif isinstance(node, Call):
            self.resolve_invocation(node, "condition")
        else:
            raise AssertionError(f"bad condexpr node {node!r}")

    def check_ruleexpr(self, rx: RuleExpr, line):
        if isinstance(rx.guard, NameRef):
            if self.declared.get(rx.guard.name) != "conditionblock":
                self.err(TypeMismatch,
                         f"rule guard {rx.guard.name!r} is not a conditionblock",
                         line)
            self.used.add(rx.guard.name)
        else:
            self.check_condexpr(rx.guard.expr)
        actions = []
        blocked = False
        for call in rx.actions:
            builtin, params = self.resolve_invocation(call, "action")
            if builtin == "block":
                blocked = True
            elif builtin == "call_orig" and blocked:
                self.err(SemanticError,
                         "call_orig after block is contradictory", call.line)
            if builtin == "manipulateparam" and bi.rewrite_loop_hazard(params):
                self.out.warnings.append(
                    f"line {call.line}: manipulateparam replacement re-matches "
                    f"its own pattern (rewrite loop hazard)")
            actions.append((builtin, params))
        return rx.guard, actions

    def bind(self, stmt: BindStmt):
        if stmt.chain not in self.out.chain_defs:
            self.err(UndefinedName, f"{stmt.chain!r} is not a rulechain",
                     stmt.line)
        self.used.add(stmt.chain)
        if stmt.syscall in self.out.syscalls:
            syscall = self.out.syscalls[stmt.syscall]
            self.used.add(stmt.syscall)
        else:
            syscall = _normalize_syscall(stmt.syscall)
            if syscall is None:
                self.err(UndefinedName, f"unknown syscall {stmt.syscall!r}",
                         stmt.line)
        if any(sc == syscall for sc, _ in self.out.binds):
            self.err(DuplicateBind,
                     f"syscall {syscall!r} already has a bound rulechain",
                     stmt.line)
        self.out.binds.append((syscall, stmt.chain))


def analyze(ast: Ast, registry=None) -> TypedProgram:
    return Analyzer(ast, registry).analyze()


# --- lowering ---------------------------------------------------------------

def _lower_condexpr(node, typed: TypedProgram):
    if isinstance(node, BinOp):
        return ConditionBlock(_lower_condexpr(node.left, typed),
                              _lower_condexpr(node.right, typed),
                              OP_AND if node.op == "&&" else OP_OR)
    builtin, params = _resolved(node, typed, "condition")
    return Condition(builtin, params)


def _resolved(call: Call, typed: TypedProgram, kind: str):
    table = typed.conditions if kind == "condition" else typed.actions
    if call.name in table:
        builtin, frozen = table[call.name]
        return builtin, frozen if frozen is not None else tuple(call.args)
    return call.name, tuple(call.args)


def _lower_guard(guard, typed: TypedProgram) -> ConditionBlock:
    if isinstance(guard, NameRef):
        node = _lower_condexpr(typed.blocks[guard.name], typed)
    else:
        node = _lower_condexpr(guard.expr, typed)
    if isinstance(node, Condition):
        # single condition embedded via the neutral always-true partner
        node = ConditionBlock(node, ALWAYS_TRUE, OP_AND)
    return node


def compile_typed(typed: TypedProgram) -> RuleProgram:
    base_rules = {}
    for name, (guard, actions, line) in typed.rules.items():
        chain_actions = ActionChain(tuple(Action(b, p) for b, p in actions))
        base_rules[name] = Rule(name, _lower_guard(guard, typed), chain_actions,
                                0, f"{typed.filename}:{line}")
    chains = {}
    for cname, items in typed.chain_defs.items():
        members = []
        for exit_flag, rname in items:
            rule = base_rules[rname]
            members.append(Rule(rule.name, rule.guard, rule.actions,
                                1 if exit_flag else 0, rule.span))
        chains[cname] = RuleChain(cname, tuple(members))
    return RuleProgram(chains=chains, bindings=list(typed.binds))


def compile_source(text: str, filename: str = "<input>", registry=None):
    """Full pipeline; returns (RuleProgram, warnings)."""
    ast = parse(tokenize(SourceUnit(text, filename)), filename)
    typed = analyze(ast, registry)
    return compile_typed(typed), typed.warnings


# --- pretty printer ----------------------------------------------------------

def _arg_src(value) -> str:
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    return str(value)


def _call_src(call: Call) -> str:
    return f"{call.name}({';'.join(_arg_src(a) for a in call.args)})"


def _condexpr_src(node) -> str:
    if isinstance(node, BinOp):
        return f"({_condexpr_src(node.left)} {node.op} {_condexpr_src(node.right)})"
    return _call_src(node)


def _rhs_src(rhs) -> str:
    if isinstance(rhs, NameRef):
        return rhs.name
    if isinstance(rhs, Call):
        return _call_src(rhs)
    if isinstance(rhs, CondBlockExpr):
        return "{" + _condexpr_src(rhs.expr) + "}"
    if isinstance(rhs, RuleExpr):
        guard = (rhs.guard.name if isinstance(rhs.guard, NameRef)
                 else "{" + _condexpr_src(rhs.guard.expr) + "}")
        actions = ",".join(_call_src(c) for c in rhs.actions)
        return "{" + guard + "->" + actions + "}"
    if isinstance(rhs, ChainExpr):
        items = ",".join((":" if ex else "") + name for ex, name in rhs.items)
        return "{" + items + "}"
    raise AssertionError(f"bad rhs {rhs!r}")


def pretty_print(ast: Ast) -> str:
    lines = []
    for stmt in ast.statements:
        if isinstance(stmt, Define):
            lines.append(f"define {','.join(stmt.names)} as {stmt.typekw}")
        elif isinstance(stmt, Let):
            lines.append(f"let {stmt.name} be {_rhs_src(stmt.rhs)}")
        elif isinstance(stmt, BindStmt):
            lines.append(f"bind {stmt.chain} to {stmt.syscall}")
    return "\n".join(lines) + "\n"
