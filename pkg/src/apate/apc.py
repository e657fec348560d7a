"""Canonical serialized form of a compiled rule program (.apc files).

Text format, UTF-8, one record per line, tab-separated fields:

    APATE-RP 1
    COND   <cid>  <builtin>  <params-json>
    ACTION <aid>  <builtin>  <params-json>
    RULE   <name> <guard>    <aid,aid,...>  <span>
    CHAIN  <name> <[:]rule,[:]rule,...>
    BIND   <syscall> <chain>

Guards are s-expressions over condition ids: ``c0`` or ``(& c0 (| c1 c2))``.
A ':' prefix on a chain member marks the exit flag.  Serialization is
canonical: identical programs produce identical bytes and
``serialize(deserialize(x)) == x``.
"""

from __future__ import annotations

import dataclasses
import json

from .errors import BadMagic, CorruptRecord, UnsupportedVersion
from .model import (Action, ActionChain, Condition, ConditionBlock, Rule,
                    RuleChain, RuleProgram, SYSCALL_ARITY, OP_AND, OP_OR)

MAGIC = "APATE-RP"
VERSION = 1


def _params_json(params) -> str:
    return json.dumps(list(params), separators=(",", ":"), ensure_ascii=False)


def _params_load(text):
    return tuple(json.loads(text))


def serialize(prog: RuleProgram) -> bytes:
    conds = {}    # (builtin, params) -> cid
    cond_lines = []
    acts = {}
    act_lines = []
    rule_lines = []
    rule_seen = {}

    def cond_id(c: Condition) -> str:
        key = (c.builtin_name, c.params)
        if key not in conds:
            cid = f"c{len(conds)}"
            conds[key] = cid
            cond_lines.append(f"COND\t{cid}\t{c.builtin_name}\t{_params_json(c.params)}")
        return conds[key]

    def guard_expr(node) -> str:
        if isinstance(node, Condition):
            return cond_id(node)
        op = "&" if node.op_code == OP_AND else "|"
        return f"({op} {guard_expr(node.left)} {guard_expr(node.right)})"

    def action_id(a: Action) -> str:
        key = (a.builtin_name, a.params)
        if key not in acts:
            aid = f"a{len(acts)}"
            acts[key] = aid
            act_lines.append(f"ACTION\t{aid}\t{a.builtin_name}\t{_params_json(a.params)}")
        return acts[key]

    def emit_rule(rule: Rule) -> None:
        body = (guard_expr(rule.guard),
                ",".join(action_id(a) for a in rule.actions.actions),
                rule.span)
        if rule.name in rule_seen:
            if rule_seen[rule.name] != body:
                raise ValueError(f"rule name {rule.name!r} used with different bodies")
            return
        rule_seen[rule.name] = body
        rule_lines.append(f"RULE\t{rule.name}\t{body[0]}\t{body[1]}\t{body[2]}")

    chain_lines = []
    for name, chain in prog.chains.items():
        for rule in chain.rules:
            emit_rule(rule)
        members = ",".join((":" if r.exit_flag else "") + r.name for r in chain.rules)
        chain_lines.append(f"CHAIN\t{name}\t{members}")

    bind_lines = [f"BIND\tsys_{sc}\t{cn}" for sc, cn in prog.bindings]

    lines = [f"{MAGIC} {VERSION}"]
    lines += cond_lines + act_lines + rule_lines + chain_lines + bind_lines
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_guard(expr: str, conds: dict, line_no: int):
    tokens = expr.replace("(", " ( ").replace(")", " ) ").split()
    pos = 0

    def parse():
        nonlocal pos
        if pos >= len(tokens):
            raise CorruptRecord(line_no, "truncated guard expression")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            if pos >= len(tokens) or tokens[pos] not in ("&", "|"):
                raise CorruptRecord(line_no, "expected & or | in guard")
            op = OP_AND if tokens[pos] == "&" else OP_OR
            pos += 1
            left = parse()
            right = parse()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise CorruptRecord(line_no, "missing ')' in guard")
            pos += 1
            return ConditionBlock(left, right, op)
        if tok in conds:
            return conds[tok]
        raise CorruptRecord(line_no, f"unknown condition id {tok!r}")

    node = parse()
    if pos != len(tokens):
        raise CorruptRecord(line_no, "trailing tokens in guard expression")
    if isinstance(node, Condition):
        raise CorruptRecord(line_no, "guard must be a condition block")
    return node


def deserialize(data: bytes) -> RuleProgram:
    text = data.decode("utf-8")
    lines = text.splitlines()
    if not lines:
        raise BadMagic("empty file")
    header = lines[0].split(" ")
    if len(header) != 2 or header[0] != MAGIC:
        raise BadMagic(f"bad header {lines[0]!r}")
    if header[1] != str(VERSION):
        raise UnsupportedVersion(f"unsupported format version {header[1]}")

    conds = {}
    acts = {}
    rules = {}      # name -> (guard, aids, span)
    chains = {}
    bindings = []

    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split("\t")
        tag = fields[0]
        try:
            if tag == "COND":
                _, cid, builtin, params = fields
                conds[cid] = Condition(builtin, _params_load(params))
            elif tag == "ACTION":
                _, aid, builtin, params = fields
                acts[aid] = Action(builtin, _params_load(params))
            elif tag == "RULE":
                _, name, guard_s, aids, span = fields
                guard = _parse_guard(guard_s, conds, line_no)
                try:
                    actions = tuple(acts[a] for a in aids.split(","))
                except KeyError as exc:
                    raise CorruptRecord(line_no, f"unknown action id {exc}") from None
                rules[name] = (guard, ActionChain(actions), span)
            elif tag == "CHAIN":
                _, name, members = fields
                built = []
                for member in members.split(","):
                    exit_flag = 1 if member.startswith(":") else 0
                    rname = member.lstrip(":")
                    if rname not in rules:
                        raise CorruptRecord(line_no, f"unknown rule {rname!r}")
                    guard, actions, span = rules[rname]
                    built.append(Rule(rname, guard, actions, exit_flag, span))
                chains[name] = RuleChain(name, tuple(built))
            elif tag == "BIND":
                _, syscall, chain_name = fields
                if syscall.startswith("sys_"):
                    syscall = syscall[4:]
                if syscall not in SYSCALL_ARITY:
                    raise CorruptRecord(line_no, f"unknown syscall {syscall!r}")
                if chain_name not in chains:
                    raise CorruptRecord(line_no, f"unknown chain {chain_name!r}")
                bindings.append((syscall, chain_name))
            else:
                raise CorruptRecord(line_no, f"unknown record type {tag!r}")
        except ValueError as exc:
            raise CorruptRecord(line_no, str(exc)) from None

    return RuleProgram(chains=chains, bindings=bindings, version=VERSION)
