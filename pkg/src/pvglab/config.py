"""Flat sectioned config files: a small typed key=value format.

The format is a strict subset of TOML: ``[section]`` headers, one
``key = value`` per line, values typed as booleans (true/false),
integers, floats, or double-quoted strings.  Unknown sections or keys
are rejected with their full path so experiment files stay honest.
"""

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError

# schema: section -> key -> (type, default)
SCHEMAS = {
    "run": {
        "seed": (int, 0),
        "out": (str, ""),
        "quiet": (bool, False),
    },
    "train": {
        "task": (str, "bec"),
        "mode": (str, "pvg"),
        "tokens": (int, 16),
        "restrict_channel": (bool, True),
        "grid": (int, 10),
        "width": (int, 100),
        "batch_size": (int, 2000),
        "prover_lr": (float, 3e-4),
        "verifier_lr": (float, 3e-4),
        "verifier_steps": (int, 5),
        "max_steps": (int, 2000),
        "label_smoothing": (float, 0.05),
        "temperature": (float, 1.0),
        "adaptive": (bool, False),
        "accuracy_threshold": (float, 0.75),
        "streak_length": (int, 20),
        "max_prover_steps": (int, 15),
        "snapshot_every": (int, 10),
        "pretrain_steps": (int, 0),
        "stop_on_robust": (bool, True),
        "eval_every": (int, 25),
        "eval_size": (int, 4000),
        "target_recall": (float, 1.0),
        "target_precision": (float, 1.0),
        "collab_precision_max": (float, 0.0),
    },
    "eval": {
        "checkpoint": (str, ""),
        "eval_size": (int, 10_000),
        "retrain_steps": (int, 500),
        "retrain_batch": (int, 500),
        "retrain_lr": (float, 3e-4),
    },
    "bec_analytic": {
        "mode": (str, "simultaneous"),
        "lam": (float, 0.1),
        "lr": (float, 0.05),
        "steps": (int, 100_000),
        "tol": (float, 1e-6),
        "inits": (int, 1),
        "init_a": (float, 0.5),
        "init_b": (float, 0.5),
    },
    "classify": {
        "grid_resolution": (float, 0.01),
        "tolerance": (float, 1e-6),
    },
    "report": {},
}


@dataclass
class RunConfig:
    sections: dict = field(default_factory=dict)
    digest: str = ""

    def get(self, section: str, key: str):
        if section not in SCHEMAS or key not in SCHEMAS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        if section in self.sections and key in self.sections[section]:
            return self.sections[section][key]
        return SCHEMAS[section][key][1]

    def section(self, name: str) -> dict:
        out = {key: default for key, (_, default) in SCHEMAS[name].items()}
        out.update(self.sections.get(name, {}))
        return out


def _parse_value(raw: str, path: str):
    raw = raw.strip()
    if raw in ("true", "false"):
        return raw == "true"
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{path}: cannot parse value {raw!r}") from None


def parse_config(text: str) -> RunConfig:
    sections: dict = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current not in SCHEMAS:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        schema = SCHEMAS[current]
        if key not in schema:
            raise ConfigError(f"{current}.{key}: unknown key")
        value = _parse_value(raw, f"{current}.{key}")
        want, _ = schema[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or (want is not bool and isinstance(value, bool)):
            raise ConfigError(
                f"{current}.{key}: expected {want.__name__}, got {type(value).__name__}"
            )
        sections[current][key] = value
    digest = hashlib.sha256(canonical_text(sections).encode()).hexdigest()[:16]
    return RunConfig(sections=sections, digest=digest)


def canonical_text(sections: dict) -> str:
    lines = []
    for sec in sorted(sections):
        lines.append(f"[{sec}]")
        for key in sorted(sections[sec]):
            value = sections[sec][key]
            if isinstance(value, bool):
                rendered = "true" if value else "false"
            elif isinstance(value, str):
                rendered = f'"{value}"'
            else:
                rendered = repr(value)
            lines.append(f"{key} = {rendered}")
    return "\n".join(lines)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
