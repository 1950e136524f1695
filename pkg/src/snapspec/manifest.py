"""Flat key=value run manifests.

Every CLI command drops one of these next to its main artifact. The file
records the resolved arguments (after any config-file defaults were applied),
the root seed, and the tool version, so the exact command can be replayed
later and reproduce the artifact byte for byte.
"""

import os

from . import __version__


def format_value(value):
    """Canonical text form; round-trips through read_manifest."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_manifest(path, command, params):
    """Write command + tool_version + sorted params as key=value lines.

    None values are omitted (an unset optional flag). Keys must be plain
    identifiers; values must be single-line.
    """
    lines = [f"command={command}", f"tool_version={__version__}"]
    for key in sorted(params):
        value = params[key]
        if value is None:
            continue
        if not key.replace("_", "").isalnum():
            raise ValueError(f"bad manifest key: {key!r}")
        text = format_value(value)
        if "\n" in text:
            raise ValueError(f"manifest value for {key!r} spans lines")
        lines.append(f"{key}={text}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    """Parse back into a dict of strings. Requires the command header."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    entries = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            entries[key] = value
    if "command" not in entries:
        raise ValueError(f"{path}: missing command entry")
    return entries


def manifest_path_for(artifact_path):
    """Manifest sits beside the artifact: <artifact>.manifest.txt."""
    return str(artifact_path) + ".manifest.txt"


def parse_flag_value(text):
    """Interpret a manifest/config string as bool, int, float, or str."""
    low = text.strip().lower()
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text
