import atexit
import dataclasses
import functools
import hashlib
import inspect
import json
import os
import sys
import tempfile
import urllib.parse
from datetime import timedelta
from functools import wraps
from typing import Any, List, Optional, Union

import draccus
import fsspec
from draccus import parse
from fsspec import AbstractFileSystem

from dwlab.utils.datetime_utils import encode_timedelta, parse_timedelta


JsonAtom = Union[str, int, float, bool, None]


def register_codecs():
    draccus.decode.register(timedelta, parse_timedelta)
    draccus.encode.register(timedelta, encode_timedelta)


register_codecs()


def register_enum_codec(enum_cls):
    """Config files and flags spell enum members by value ("per_task"). Member names are accepted as well."""

    def _decode(raw):
        if isinstance(raw, enum_cls):
            return raw
        try:
            return enum_cls(raw)
        except ValueError:
            pass
        try:
            return enum_cls[raw]
        except KeyError:
            choices = ", ".join(m.value for m in enum_cls)
            raise ValueError(f"{raw!r} is not a valid {enum_cls.__name__}; expected one of {choices}") from None

    draccus.decode.register(enum_cls, _decode)
    draccus.encode.register(enum_cls, lambda member: member.value)
    return enum_cls


_PACKAGE_CONFIG_DIR = os.path.join(os.path.dirname(__file__), "config")
# in dev mode the configs live at the repo root rather than inside the package
_REPO_CONFIG_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "config"))
DEFAULT_CONFIG_DIR = _PACKAGE_CONFIG_DIR if os.path.isdir(_PACKAGE_CONFIG_DIR) else _REPO_CONFIG_DIR

_CONFIG_SUFFIXES = ["", ".yaml", ".yml", ".json"]


def main(fn=None, *, args: Optional[List[str]] = None, config_dir: Optional[str] = DEFAULT_CONFIG_DIR):
    """
    Like draccus.wrap but can handle config paths that are urls loadable by fsspec, and config files in JSON.
    Only the first arg of the wrapped function is config-ified.

    :param args: the args to parse. If None, will use sys.argv[1:]
    :param config_dir: the directory to look for configs in (if the path does not exist already). If None, will only
        use the current working directory
    """

    if fn is None:
        return functools.partial(main, args=args, config_dir=config_dir)

    _cmdline_args = args
    if args is None:
        _cmdline_args = sys.argv[1:]

    @wraps(fn)
    def wrapper_inner(*args, **kwargs):
        cfg = parse_config(config_class(fn), _cmdline_args, config_dir=config_dir)
        response = fn(cfg, *args, **kwargs)
        return response

    return wrapper_inner


def config_class(fn) -> type:
    """The annotated type of the first argument of `fn`."""
    argspec = inspect.getfullargspec(fn)
    return argspec.annotations[argspec.args[0]]


def parse_config(cls: type, args: List[str], config_dir: Optional[str] = DEFAULT_CONFIG_DIR):
    """Parses `args` (which may carry --config <path-or-url>) into an instance of `cls`."""
    config_path, cmdline_args = _maybe_get_config_path_and_cmdline_args(args)
    config_path = _resolve_config_path(config_path, config_dir)
    return parse(config_class=cls, config_path=config_path, args=cmdline_args)


def config_hash(cfg: Any) -> str:
    """Stable hash of a config dataclass: sha256 over its sorted JSON encoding."""
    encoded = draccus.encode(cfg)
    return hashlib.sha256(json.dumps(encoded, sort_keys=True).encode("utf-8")).hexdigest()


def config_to_dict(cfg: Any) -> dict:
    if not dataclasses.is_dataclass(cfg):
        raise TypeError(f"expected a dataclass, got {type(cfg)}")
    return draccus.encode(cfg)


def _resolve_config_path(config_path: Optional[str], config_dir: Optional[str]) -> Optional[str]:
    if config_path is None:
        return None

    paths_to_check = [f"{config_path}{suffix}" for suffix in _CONFIG_SUFFIXES]
    if config_dir is not None:
        paths_to_check.extend([os.path.join(config_dir, p) for p in list(paths_to_check)])

    for path in paths_to_check:
        if os.path.exists(path):
            return path

    # let draccus produce the error message
    return config_path


def _maybe_get_config_path_and_cmdline_args(args: List[str]):
    """
    We want to accept ... --config_path <config> ... where config could be a path or url.
    If URL, we need to download it and save it to a temp file. We then want to remove --config_path
    from the cmdline args so that draccus doesn't try to load it as a config path and return it separately here
    along with the modified cmdline args.
    """
    if "--config_path" not in args and "--config" not in args:
        return None, args
    else:
        try:
            config_path_index = args.index("--config_path")
        except ValueError:
            config_path_index = args.index("--config")

        config_path = args[config_path_index + 1]

        if urllib.parse.urlparse(config_path).scheme:
            fs: AbstractFileSystem
            fs, fs_path = fsspec.core.url_to_fs(config_path)
            suffix = os.path.splitext(fs_path)[1] or ".yaml"
            temp_file = tempfile.NamedTemporaryFile(prefix="config", suffix=suffix, delete=False)
            atexit.register(lambda: os.unlink(temp_file.name))
            fs.get(fs_path, temp_file.name)
            config_path = temp_file.name

        args = args.copy()
        del args[config_path_index]
        del args[config_path_index]
        return config_path, args
