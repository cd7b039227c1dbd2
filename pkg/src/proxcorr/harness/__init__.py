"""Declarative experiment runner: config files in, CSV/JSON tables (and optional figures) out."""

from pathlib import Path

CONFIG_DIR = Path(__file__).parent / "configs"


def bundled_config(name):
    """Path of a config shipped with the package, e.g. ``bundled_config("ns1_alpha2.cfg")``."""
    path = CONFIG_DIR / name
    if not path.exists():
        raise FileNotFoundError(f"no bundled config {name!r}; have {sorted(p.name for p in CONFIG_DIR.glob('*.cfg'))}")
    return path
