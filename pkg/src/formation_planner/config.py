"""Plain-text ``key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Vectors are comma separated,
lists of vectors are separated by ``;``. Unknown keys are rejected so that a
typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses


class ConfigError(ValueError):
    """Malformed configuration; ``lineno`` points at the offending line."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


def parse_kv(text, source=None):
    """Return ``{key: (raw_value, lineno)}`` preserving file order."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno, source)
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, source)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        out[key] = (value, lineno)
    return out


def fmt_float(x):
    return repr(float(x))


def parse_float(raw):
    return float(raw)


def parse_int(raw):
    return int(raw, 0)


def parse_bool(raw):
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def fmt_bool(x):
    return "true" if x else "false"


def parse_vec(raw):
    return tuple(float(v) for v in raw.split(",") if v.strip())


def fmt_vec(v):
    return ", ".join(fmt_float(x) for x in v)


def parse_int_list(raw):
    return tuple(int(v, 0) for v in raw.split(",") if v.strip())


def fmt_int_list(v):
    return ", ".join(str(int(x)) for x in v)


def parse_vec_list(raw):
    return tuple(parse_vec(chunk) for chunk in raw.split(";") if chunk.strip())


def fmt_vec_list(vs):
    return "; ".join(fmt_vec(v) for v in vs)


def parse_str(raw):
    return raw


def fmt_str(x):
    return str(x)


FLOAT = (parse_float, fmt_float)
INT = (parse_int, str)
BOOL = (parse_bool, fmt_bool)
VEC = (parse_vec, fmt_vec)
VEC_LIST = (parse_vec_list, fmt_vec_list)
INT_LIST = (parse_int_list, fmt_int_list)
STR = (parse_str, fmt_str)


def load_fields(entries, schema, source=None):
    """Convert raw entries with ``schema = {key: (parse, fmt)}``."""
    values = {}
    for key, (raw, lineno) in entries.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r}", lineno, source)
        parse = schema[key][0]
        try:
            values[key] = parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno, source) from None
    return values


def dump_fields(values, schema):
    lines = []
    for key, (_, fmt) in schema.items():
        if key in values and values[key] is not None:
            lines.append(f"{key} = {fmt(values[key])}")
    return "\n".join(lines) + "\n"


def flat_fields(obj, prefix=""):
    """Flatten a (possibly nested) dataclass into dotted keys."""
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            out.update(flat_fields(value, prefix + f.name + "."))
        else:
            out[prefix + f.name] = value
    return out
