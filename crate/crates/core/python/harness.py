# Sandbox host for one generated heuristic.
#
# Protocol (newline-delimited JSON on stdin/stdout):
#   first line  -> {"code", "fn", "arity", "allowed", "memory_bytes", "static_scan"}
#   reply       <- {"ok": true} | {"ok": false, "kind", "detail"}
#   then        -> {"call_id", "fn", "args"}
#   reply       <- {"call_id", "ok": true, "result"} | {"call_id", "ok": false, "kind", "detail"}
#
# stdout of user code is redirected to stderr so it cannot corrupt the
# protocol stream.

import ast
import builtins
import importlib
import inspect
import json
import math
import os
import resource
import sys

_proto = os.fdopen(os.dup(1), "w", buffering=1)
os.dup2(2, 1)


def send(obj):
    _proto.write(json.dumps(obj, allow_nan=False) + "\n")
    _proto.flush()


DENIED_NAMES = {
    "open", "eval", "exec", "compile", "__import__", "getattr", "setattr",
    "delattr", "globals", "locals", "vars", "input", "breakpoint",
    "memoryview", "exit", "quit", "help", "classmethod", "staticmethod",
    "super", "type", "object", "dir",
}

# attribute names that reach files, processes or interpreter internals
DENIED_ATTRS = {
    "save", "savez", "savez_compressed", "savetxt", "load", "loadtxt",
    "genfromtxt", "fromfile", "tofile", "memmap", "fromregex", "DataSource",
    "ctypeslib", "ctypes", "lib", "dump", "dumps", "os", "sys", "testing",
    "f2py", "distutils", "system", "popen", "builtins", "modules",
}


class Denied(Exception):
    pass


class BadShape(Exception):
    pass


def scan(tree, allowed):
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            for alias in node.names:
                if alias.name.split(".")[0] not in allowed:
                    raise Denied(f"line {node.lineno}: import of '{alias.name}' is not allowed")
        elif isinstance(node, ast.ImportFrom):
            if node.level or (node.module or "").split(".")[0] not in allowed:
                raise Denied(f"line {node.lineno}: import from '{node.module}' is not allowed")
        elif isinstance(node, ast.Name):
            if node.id in DENIED_NAMES or node.id.startswith("__"):
                raise Denied(f"line {node.lineno}: use of '{node.id}' is not allowed")
        elif isinstance(node, ast.Attribute):
            if node.attr.startswith("_") or node.attr in DENIED_ATTRS:
                raise Denied(f"line {node.lineno}: attribute '{node.attr}' is not allowed")


_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
_DENIED_EVENT_PREFIXES = ("socket.", "subprocess.", "os.system", "os.exec", "os.fork", "os.posix_spawn",
                          "os.spawn", "os.kill", "os.remove", "os.unlink", "os.rename", "os.rmdir", "os.mkdir",
                          "os.chmod", "os.truncate", "shutil.", "ctypes.", "pty.")


def audit(event, args):
    # runtime guard that holds even when the static scan is off
    if event == "open":
        mode, flags = args[1], args[2]
        if (isinstance(mode, str) and any(c in mode for c in "wax+")) or (isinstance(flags, int) and flags & _WRITE_FLAGS):
            raise Denied(f"write access to '{args[0]}' is not allowed")
    elif event.startswith(_DENIED_EVENT_PREFIXES):
        raise Denied(f"'{event}' is not allowed")


def make_builtins(allowed):
    real_import = builtins.__import__

    def guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
        if level != 0 or name.split(".")[0] not in allowed:
            raise Denied(f"import of '{name}' is not allowed")
        return real_import(name, globals, locals, fromlist, level)

    safe = {k: getattr(builtins, k) for k in dir(builtins) if not k.startswith("_") and k not in DENIED_NAMES}
    safe["__import__"] = guarded_import
    safe["__build_class__"] = builtins.__build_class__
    return safe


def to_arg(value, np):
    if isinstance(value, list):
        arr = np.asarray(value)
        if arr.dtype != object:
            return arr
    return value


def to_plain(x, np):
    if np is not None and isinstance(x, np.ndarray):
        return to_plain(x.tolist(), None)
    if np is not None and isinstance(x, np.generic):
        return to_plain(x.item(), None)
    if isinstance(x, bool):
        return x
    if isinstance(x, int):
        return x
    if isinstance(x, float):
        if not math.isfinite(x):
            raise BadShape("non-finite number in result")
        return x
    if isinstance(x, (list, tuple)):
        return [to_plain(v, np) for v in x]
    if hasattr(x, "tolist"):
        return to_plain(x.tolist(), np)
    raise BadShape(f"unsupported result type {type(x).__name__}")


def describe(exc):
    tb = exc.__traceback__
    line = None
    while tb is not None:
        if tb.tb_frame.f_code.co_filename == "<heuristic>":
            line = tb.tb_lineno
        tb = tb.tb_next
    where = f"line {line}: " if line is not None else ""
    return f"{where}{type(exc).__name__}: {exc}"


def arity_ok(fn, arity):
    try:
        sig = inspect.signature(fn)
    except (TypeError, ValueError):
        return True
    required = 0
    maximum = 0
    for p in sig.parameters.values():
        if p.kind == p.VAR_POSITIONAL:
            maximum = 1 << 30
        elif p.kind in (p.POSITIONAL_ONLY, p.POSITIONAL_OR_KEYWORD):
            maximum += 1
            if p.default is p.empty:
                required += 1
        elif p.kind == p.KEYWORD_ONLY and p.default is p.empty:
            return False
    return required <= arity <= maximum


def main():
    cfg = json.loads(sys.stdin.readline())
    allowed = set(cfg["allowed"])
    for name in sorted(allowed):
        try:
            importlib.import_module(name)
        except Exception:
            pass
    np = sys.modules.get("numpy")

    mem = int(cfg.get("memory_bytes") or 0)
    if mem > 0:
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
    resource.setrlimit(resource.RLIMIT_FSIZE, (0, 0))

    code = cfg["code"]
    fn_name = cfg["fn"]
    try:
        tree = ast.parse(code, "<heuristic>")
    except SyntaxError as e:
        send({"ok": False, "kind": "syntax", "detail": f"line {e.lineno}: {e.msg}"})
        return
    if cfg.get("static_scan", True):
        try:
            scan(tree, allowed)
        except Denied as e:
            send({"ok": False, "kind": "protocol", "detail": f"denied: {e}"})
            return

    sys.addaudithook(audit)
    env = {"__builtins__": make_builtins(allowed), "__name__": "heuristic"}
    try:
        exec(compile(tree, "<heuristic>", "exec"), env)
    except Denied as e:
        send({"ok": False, "kind": "protocol", "detail": f"denied: {e}"})
        return
    except BaseException as e:
        send({"ok": False, "kind": "runtime", "detail": describe(e)})
        return
    fn = env.get(fn_name)
    if not callable(fn):
        send({"ok": False, "kind": "protocol", "detail": f"no function named '{fn_name}'"})
        return
    if not arity_ok(fn, int(cfg["arity"])):
        send({"ok": False, "kind": "protocol", "detail": f"'{fn_name}' does not accept {cfg['arity']} positional arguments"})
        return
    send({"ok": True})

    for line in sys.stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        call_id = req.get("call_id")
        try:
            args = [to_arg(a, np) for a in req["args"]]
            result = to_plain(fn(*args), np)
            send({"call_id": call_id, "ok": True, "result": result})
        except BadShape as e:
            send({"call_id": call_id, "ok": False, "kind": "bad_shape", "detail": str(e)})
        except Denied as e:
            send({"call_id": call_id, "ok": False, "kind": "protocol", "detail": f"denied: {e}"})
        except BaseException as e:
            send({"call_id": call_id, "ok": False, "kind": "runtime", "detail": describe(e)})


if __name__ == "__main__":
    main()
