#!/usr/bin/env python3

# configCli.py
"""
Interactive problem editor.

Settings are edited in a candidate configuration, validated into a problem on
commit and become the running configuration. 'run' optimizes the running
problem, 'save' keeps the running configuration for the next session.
"""
import copy
import getpass
import json
import logging
import os
import socket
from typing import Any, Dict, List, Optional, Tuple

from prompt_toolkit import PromptSession
from prompt_toolkit.document import Document
from prompt_toolkit.history import FileHistory
from prompt_toolkit.validation import ValidationError
from cli_common import (AutoSuggestFromTree, CommandValidator, TreeCompleter, check_tag_value,
                        setup_keybindings, step, tag_child)
from fem import FEError
from grid import GridError, parse_dims
from optimizer import OptimizationError
from problem import ProblemError, ProblemSpec, load_problem, save_problem
from renderers.density_image import ExportError
from runner import LOG_FORMAT, benchmark_table, report_table, run
from support import SupportError, benchmark_detection

logger = logging.getLogger(__name__)

# Get the directory where the script is located
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
CONFIG_SAVE_PATH = os.path.join(SCRIPT_DIR, "problem-config.json")

DEFAULT_MODE = "both"

# Shell keyword -> (problem field, converter)
PROBLEM_FIELDS = {
    "volume-fraction": ("volume_fraction", float),
    "filter-radius": ("filter_radius", float),
    "overhang-angle": ("overhang_angle", float),
    "penalization": ("penalization", float),
    "solver": ("solver", str),
    "seed": ("seed", int),
    "dims": ("dims", lambda text: [int(v) for v in text.lower().split("x")]),
}


class ConfigError(Exception):
    """Base class for configuration related errors."""
    pass


class PathNotFoundError(ConfigError):
    """Raised when a configuration path is not found."""
    pass


def load_saved_config(path: str = CONFIG_SAVE_PATH) -> Dict:
    """Load the saved configuration from disk."""
    if os.path.exists(path):
        try:
            with open(path) as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            logger.warning(f"Ignoring saved configuration {path}: invalid JSON - {e}")
        except OSError as e:
            logger.warning(f"Ignoring saved configuration {path}: {e}")
    return {}


def save_current_config(config_dict: Dict, path: str = CONFIG_SAVE_PATH) -> None:
    try:
        with open(path, "w") as f:
            json.dump(config_dict, f, indent=2)
        print(f"Configuration saved to {path}")
    except OSError as e:
        print(f"Failed to save configuration: {e}")


def load_commands_json() -> Dict:
    """Load the command tree and graft the configuration schema under set and delete."""
    try:
        with open(os.path.join(SCRIPT_DIR, "commands.json")) as f:
            commands = json.load(f)
        with open(os.path.join(SCRIPT_DIR, "config.json")) as f:
            config_schema = json.load(f)
    except FileNotFoundError as e:
        logger.error(f"Required JSON file not found - {e.filename}")
        raise
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON format in command files - {e}")
        raise
    commands["set"].update(copy.deepcopy(config_schema))
    commands["delete"].update(copy.deepcopy(config_schema))
    return commands


def parse_config_command(command: str, root: Dict) -> Tuple[Dict, str]:
    """
    Turn 'set a b <value>' into the nested path dict {'a': {'b': {'<value>': {}}}}.

    Raises:
        ValidationError: unknown keyword, invalid tag value or a set without value
    """
    action, *path_parts = command.split()
    config_dict: Dict = {}
    current = config_dict
    node = root.get(action, {})
    for part in path_parts:
        if isinstance(node.get(part), dict):
            node = node[part]
        else:
            entry = tag_child(node)
            if not entry:
                raise ValidationError(message=f"Unknown keyword '{part}'.", cursor_position=command.find(part))
            check_tag_value(entry[1], part, command)
            node = entry[1]
        current[part] = {}
        current = current[part]

    if action == "set" and node.get("type") != "tagNode":
        raise ValidationError(message="Incomplete command: a value is required.", cursor_position=len(command))
    return config_dict, action


def update_config_dict(existing: Dict, new: Dict, schema: Optional[Dict] = None) -> None:
    """
    Merge the path dict new into existing. A value under a single-valued tag
    replaces the value set before it.
    """
    for key, value in new.items():
        node = step(schema, key) if schema else None
        if node and node.get("type") == "tagNode" and not node.get("multi") and key not in existing:
            existing.clear()
        if value is None:
            existing.pop(key, None)
            continue
        child = existing.setdefault(key, {})
        if child is None:
            child = existing[key] = {}
        if value:
            update_config_dict(child, value, node)


def _paths(config: Dict, prefix: Optional[List[str]] = None) -> List[Tuple[List[str], Any]]:
    """Leaf paths of a path dict; a None value marks a deletion."""
    prefix = prefix or []
    paths = []
    for key, value in config.items():
        path = prefix + [key]
        if value is None or not value:
            paths.append((path, value))
        else:
            paths.extend(_paths(value, path))
    return paths


def _get(config: Dict, path: List[str]) -> Optional[Any]:
    current = config
    for part in path:
        if not isinstance(current, dict) or part not in current:
            return None
        current = current[part]
    return current


def _remove(config: Dict, path: List[str]) -> bool:
    *parents, last = path
    parent = _get(config, parents) if parents else config
    if not isinstance(parent, dict) or last not in parent:
        return False
    del parent[last]
    # drop emptied parents
    for depth in range(len(parents), 0, -1):
        holder = _get(config, parents[:depth - 1]) if depth > 1 else config
        if holder.get(parents[depth - 1]) == {}:
            del holder[parents[depth - 1]]
        else:
            break
    return True


def merge_candidate(running: Dict, candidate: Dict, schema: Dict) -> Dict:
    """Running configuration with the candidate deletions and additions applied."""
    merged = copy.deepcopy(running)
    for path, value in _paths(candidate):
        if value is None:
            _remove(merged, path)
    additions = copy.deepcopy(candidate)
    for path, value in _paths(candidate):
        if value is None:
            _remove(additions, path)
    update_config_dict(merged, additions, schema)
    return merged


def handle_delete_command(running: Dict, candidate: Dict, parsed_command: Dict) -> None:
    """
    Raises:
        PathNotFoundError: path is neither in the candidate nor in the running configuration
    """
    path = [p for p, _ in _paths(parsed_command)][0]
    if _get(candidate, path) is not None:
        _remove(candidate, path)
        return
    if _get(running, path) is None:
        raise PathNotFoundError(f"Cannot delete - path {' '.join(path)} does not exist in either configuration")
    current = candidate
    for part in path[:-1]:
        if current.get(part) is None:
            current[part] = {}
        current = current[part]
    current[path[-1]] = None


def dict_to_set_commands(config_dict: Dict, show_deletions: bool = False) -> List[str]:
    commands = []
    for path, value in _paths(config_dict):
        if value is None:
            if show_deletions:
                commands.append(f"delete {' '.join(path)}")
        else:
            commands.append(f"set {' '.join(path)}")
    return commands


def _values(config: Dict, *path: str) -> List[str]:
    node = _get(config, list(path))
    return list(node) if isinstance(node, dict) else []


def config_to_problem(config: Dict) -> Tuple[str, Dict[str, Any]]:
    """
    Map the shell configuration onto a preset name and load_problem overrides.

    Raises:
        ConfigError: no preset selected
    """
    presets = _values(config, "problem", "preset")
    if not presets:
        raise ConfigError("No problem selected: set problem preset <name>")
    overrides: Dict[str, Any] = {}
    for keyword, (field_name, convert) in PROBLEM_FIELDS.items():
        values = _values(config, "problem", keyword)
        if values:
            overrides[field_name] = convert(values[0])
    directions = _values(config, "problem", "direction")
    if directions:
        overrides["directions"] = directions
    max_iters = _values(config, "problem", "max-iters")
    if max_iters:
        overrides["schedule"] = {"max_iters": int(max_iters[0])}
    return presets[0], overrides


def build_problem(config: Dict) -> ProblemSpec:
    preset, overrides = config_to_problem(config)
    return load_problem(preset, overrides)


def run_options(config: Dict, spec: ProblemSpec) -> Tuple[str, str]:
    mode = (_values(config, "output", "mode") or [DEFAULT_MODE])[0]
    out_dir = (_values(config, "output", "directory") or [os.path.join("runs", spec.name)])[0]
    return mode, out_dir


def handle_commit(running: Dict, candidate: Dict, schema: Dict) -> None:
    if not candidate:
        print("\nNo changes to commit")
        return
    merged = merge_candidate(running, candidate, schema)
    try:
        spec = build_problem(merged)
    except (ConfigError, ProblemError, GridError) as e:
        print(f"Error during commit:\n{e}")
        return
    running.clear()
    running.update(merged)
    candidate.clear()
    print(f"\nCommit successful - running problem is {spec.name} ({spec.dims}, vf {spec.volume_fraction})")


def handle_run(running: Dict) -> None:
    try:
        spec = build_problem(running)
        mode, out_dir = run_options(running, spec)
        print(f"\nRunning {spec.name} in mode {mode}, artifacts in {out_dir}\n")
        report = run(spec, mode, out_dir)
    except (ConfigError, ProblemError, GridError) as e:
        print(f"Error: {e}")
        return
    except (FEError, OptimizationError, SupportError, ExportError) as e:
        print(f"Run failed: {e}")
        return
    print(report_table(report))


def handle_benchmark(dims_text: str) -> None:
    try:
        result = benchmark_detection(parse_dims(dims_text))
    except (GridError, SupportError) as e:
        print(f"Benchmark failed: {e}")
        return
    print(benchmark_table([result]))


def show_subtree(parts: List[str], running: Dict, candidate: Dict, schema: Dict) -> None:
    print("\nShowing Configuration:\n")
    if len(parts) >= 2 and parts[1] == "commands":
        show_type = parts[2] if len(parts) > 2 else "candidate"
        if show_type == "running":
            print("Running configuration:")
            commands = dict_to_set_commands(running)
        else:
            print("Candidate configuration (uncommitted changes):")
            commands = dict_to_set_commands(candidate, show_deletions=True)
        print("\n".join(commands) if commands else "No configuration commands found.")
        return
    if len(parts) == 2 and parts[1] in ("running", "candidate"):
        print(f"{parts[1].capitalize()} configuration (raw format):")
        print(json.dumps(running if parts[1] == "running" else candidate, indent=2))
        return
    if len(parts) == 2 and parts[1] == "resolved":
        try:
            print(json.dumps(build_problem(running).to_dict(), indent=2))
        except (ConfigError, ProblemError, GridError) as e:
            print(f"Error: {e}")
        return

    merged = merge_candidate(running, candidate, schema)
    node = _get(merged, parts[1:]) if len(parts) > 1 else merged
    if node is None:
        print(f"No configuration found for: {' '.join(parts[1:])}")
        return
    print(json.dumps(node, indent=2))


def compare_configs(running: Dict, candidate: Dict, as_commands: bool = False) -> None:
    print("\nConfiguration Differences:\n")
    if not candidate:
        print("No changes to commit (candidate configuration is empty)")
        return

    if as_commands:
        deleted = [f"- delete {' '.join(p)}" for p, v in _paths(candidate) if v is None and _get(running, p) is not None]
        added = [f"+ set {' '.join(p)}" for p, v in _paths(candidate) if v is not None and _get(running, p) is None]
        if deleted:
            print("Changes that will be deleted:")
            print("\n".join(deleted))
        if deleted and added:
            print()
        if added:
            print("Changes that will be added:")
            print("\n".join(added))
        if not (added or deleted):
            print("No changes found")
        return

    def format_dict(d: Dict, indent: int = 0) -> List[str]:
        lines = []
        for k, v in d.items():
            if v is None:
                lines.append(f"{'  ' * indent}- {k}")
            elif not v:
                lines.append(f"{'  ' * indent}+ {k}")
            else:
                lines.append(f"{'  ' * indent}{k}:")
                lines.extend(format_dict(v, indent + 1))
        return lines

    print("Candidate configuration changes:")
    print("\n".join(format_dict(candidate)) or "No changes found")


def refresh_trees(commands: Dict, running: Dict, candidate: Dict) -> None:
    """Offer the configured values as keywords under delete and show."""
    configured = merge_candidate(running, candidate, commands["set"])
    for action in ("delete", "show"):
        _graft(commands[action], configured, commands["set"])


def _graft(tree: Dict, config: Dict, schema: Optional[Dict]) -> None:
    for key, value in config.items():
        node = step(schema, key) if schema else None
        target = tree.setdefault(key, {"type": "node", "description": (node or {}).get("description", "")})
        if isinstance(value, dict):
            _graft(target, value, node)


def create_prompt_session(commands: Dict) -> PromptSession:
    return PromptSession(
        completer=TreeCompleter(commands),
        key_bindings=setup_keybindings(commands),
        complete_while_typing=False,
        auto_suggest=AutoSuggestFromTree(commands),
        history=FileHistory(os.path.expanduser("~/.topopt_history"))
    )


def execute(user_input: str, commands: Dict, running: Dict, candidate: Dict) -> None:
    """Execute one shell line against the running and candidate configurations."""
    parts = user_input.split()
    action = parts[0]
    schema = commands["set"]
    if action not in commands:
        raise ValidationError(message=f"Unknown command '{action}'.", cursor_position=0)
    CommandValidator(commands).validate(Document(user_input))

    if action == "commit":
        handle_commit(running, candidate, schema)
    elif action == "discard":
        candidate.clear()
        print("\nDiscarded all uncommitted changes")
    elif action == "save":
        if len(parts) == 3 and parts[1] == "problem":
            try:
                save_problem(build_problem(running), parts[2])
                print(f"Problem saved to {parts[2]}")
            except (ConfigError, ProblemError, GridError, OSError) as e:
                print(f"Error: {e}")
        else:
            save_current_config(running)
    elif action == "run":
        handle_run(running)
    elif action == "benchmark":
        if len(parts) < 2:
            raise ValidationError(message="Usage: benchmark NXxNY[xNZ]", cursor_position=len(user_input))
        handle_benchmark(parts[1])
    elif action == "compare":
        compare_configs(running, candidate, as_commands=len(parts) > 1 and parts[1] == "commands")
    elif action == "show":
        show_subtree(parts, running, candidate, schema)
    elif action in ("set", "delete"):
        parsed_command, _ = parse_config_command(user_input, commands)
        if action == "set":
            update_config_dict(candidate, parsed_command, schema)
        else:
            handle_delete_command(running, candidate, parsed_command)
    refresh_trees(commands, running, candidate)


def main() -> None:
    commands = load_commands_json()
    session = create_prompt_session(commands)
    running = load_saved_config()
    candidate: Dict = {}
    refresh_trees(commands, running, candidate)

    print("Entering configuration mode (type 'exit' to quit, use '?' to list options)\n")
    prompt_str = f"{getpass.getuser()}@{socket.gethostname()}# "
    while True:
        try:
            raw_input = session.prompt(prompt_str)
            for user_input in raw_input.strip().splitlines():
                user_input = user_input.strip()
                if not user_input:
                    continue
                if user_input == "exit":
                    raise EOFError()
                try:
                    execute(user_input, commands, running, candidate)
                except ValidationError as ve:
                    print(f"\n{ve.message}\n")
                except ConfigError as e:
                    print(f"\nError: {e}\n")
        except KeyboardInterrupt:
            session.default_buffer.reset(Document())
            continue
        except EOFError:
            break


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
    main()
