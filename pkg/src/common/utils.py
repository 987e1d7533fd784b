import os
from pathlib import Path
from typing import Optional, Union

import dotenv


def get_env(env_name: str, default: Optional[str] = None) -> str:
    """
    Read an environment variable, falling back to `default` when it is unset or empty.
    :param env_name: the name of the environment variable
    :param default: the value used when the variable is missing
    :return: the value of the environment variable
    :raises KeyError: the variable is unset and there is no default
    :raises ValueError: the variable is empty and there is no default
    """
    value = os.environ.get(env_name)
    if value is None:
        if default is None:
            raise KeyError(f"{env_name} not defined and no default value is present!")
        return default
    if not value:
        if default is None:
            raise ValueError(f"{env_name} is empty and no default value is present!")
        return default
    return value


def load_envs(env_file: Optional[str] = '.env') -> None:
    """
    Export the variables of `env_file` (PROJECT_ROOT, OUTPUT_FOLDER) into the environment,
    overriding what is already set. hydra reads OUTPUT_FOLDER through ${oc.env:...}.
    """
    dotenv.load_dotenv(dotenv_path=env_file, override=True)


def resolve_path(path: Union[str, Path], base_dir: Optional[Path] = None) -> Path:
    """Relative paths are taken against `base_dir` (usually the folder of a scenario file)."""
    path = Path(path).expanduser()
    if base_dir is not None and not path.is_absolute():
        return Path(base_dir) / path
    return path


load_envs()

PROJECT_ROOT: Path = Path(get_env("PROJECT_ROOT", str(Path(__file__).resolve().parents[2])))
