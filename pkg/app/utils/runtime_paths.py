import os
import sys


def get_base_path() -> str:
    """Return the project root holding configs/ and app/, PyInstaller-safe."""
    try:
        return getattr(sys, '_MEIPASS', os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..')))
    except Exception:
        return os.path.abspath(os.path.join(os.path.dirname(__file__), '..', '..'))


def get_definitions_path(filename: str) -> str:
    """Path of a bundled file under app/definitions/."""
    return os.path.join(os.path.dirname(__file__), '..', 'definitions', filename)


def get_config_dir() -> str:
    """Directory holding default_config.json.

    The environment variable HEAT_CONTROL_CONFIG_DIR overrides the bundled location.
    """
    env_override = os.environ.get('HEAT_CONTROL_CONFIG_DIR')
    if env_override and env_override.strip():
        return os.path.abspath(env_override)
    return os.path.join(get_base_path(), 'configs')


def ensure_output_dir(path: str) -> str:
    """Create the output directory if needed and return its absolute path."""
    out_dir = os.path.abspath(path)
    os.makedirs(out_dir, exist_ok=True)
    return out_dir
