import pytest

from apate.model import Condition, SyscallEvent, TaskContext
from apate.sandbox import SandboxState

# The worked mysql-redirect example program, verbatim (including line
# continuations and comments) so the lexer handles the real layout.
MYSQL_EXAMPLE = '''define c1,c2,c3 as condition
define r1,r2 as rule
define a1,a2 as action
define cb1 as conditionblock
define rc1 as rulechain
define sy1 as syscall

let c1 be testforpname
let c2 be testforparam
let c3 be testforuid
let a1 be manipulateparam
let a2 be log
let sy1 be sys_open

let cb1 be {(c1("mysql") && c2(0;"/var/\\
   lib/mysql/*"))}

let r1 be {cb1->a1(0;"/var/lib/mysql/*" \\
  ;"/honey/mysql/")}
let r2 be {{c3(">",0)}->a2()}
let rc1 be {r2,:r1} // :defines exit

bind rc1 to sy1
'''

TRUE_LEAF = Condition("testforuid", (">=", 0))
FALSE_LEAF = Condition("testforuid", ("<", 0))


def make_ctx(pid=100, uid=1000, ssid=1, pname="bash", parent_pname="sshd"):
    return TaskContext(pid=pid, uid=uid, ssid=ssid, pname=pname,
                       parent_pname=parent_pname)


_seq = [0]


def make_event(syscall, *args, ctx=None, seq=None):
    if seq is None:
        _seq[0] += 1
        seq = _seq[0]
    return SyscallEvent(seq=seq, syscall=syscall, args=list(args),
                        ctx=ctx or make_ctx())


@pytest.fixture
def sandbox():
    return SandboxState()


@pytest.fixture
def ctx():
    return make_ctx()
