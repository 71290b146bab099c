#!/usr/bin/env python3

# cli_common.py
"""Completion, suggestion, validation and key bindings shared by the problem shell."""
import os
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from prompt_toolkit.application.run_in_terminal import run_in_terminal
from prompt_toolkit.auto_suggest import AutoSuggest, Suggestion
from prompt_toolkit.completion import Completer, Completion
from prompt_toolkit.document import Document
from prompt_toolkit.key_binding import KeyBindings
from prompt_toolkit.validation import ValidationError, Validator
from tabulate import tabulate

from suggestors import suggestors
from validators import make_enum_validator, validators


def tag_child(node: Dict[str, Any]) -> Optional[Tuple[str, Dict[str, Any]]]:
    """Return the (placeholder, node) of the tagNode child of node, if any."""
    return next(((k, v) for k, v in node.items()
                 if isinstance(v, dict) and v.get("type") == "tagNode"), None)


def step(node: Dict[str, Any], part: str) -> Optional[Dict[str, Any]]:
    """Follow one word down the command tree: a keyword first, else the tag value slot."""
    if part in node and isinstance(node[part], dict):
        return node[part]
    entry = tag_child(node)
    return entry[1] if entry else None


def walk(root: Dict[str, Any], parts: List[str]) -> Optional[Dict[str, Any]]:
    node = root
    for part in parts:
        node = step(node, part)
        if node is None:
            return None
    return node


def tag_validator(tag_node: Dict[str, Any]) -> Optional[Callable[[Any], bool]]:
    name = tag_node.get("validator")
    if not name:
        return None
    if name == "enum":
        return make_enum_validator(tag_node.get("enum-values", []))
    return validators.get(name)


def check_tag_value(tag_node: Dict[str, Any], value: str, text: str) -> None:
    """
    Raises:
        ValidationError: value fails the validator named by the tag node
    """
    validator_fn = tag_validator(tag_node)
    if validator_fn and not validator_fn(value):
        kind = tag_node["validator"].replace("-", " ")
        raise ValidationError(message=f"'{value}' is not a valid {kind}.",
                              cursor_position=max(text.find(value), 0))


def suggestions_for(tag_node: Dict[str, Any]) -> List[str]:
    name = tag_node.get("suggestor")
    if name not in suggestors:
        return []
    return list(suggestors[name](*tag_node.get("suggestor_args", [])))


class AutoSuggestFromTree(AutoSuggest):
    """Suggests the common completion of static keywords at the cursor."""

    def __init__(self, root: Dict[str, Any]):
        self.root = root

    def get_suggestion(self, buffer: Any, document: Document) -> Optional[Suggestion]:
        parts = document.text.strip().split()
        if not parts:
            return None
        *base_parts, last_part = parts
        node = walk(self.root, base_parts)
        if not node:
            return None

        candidates = [k for k, v in node.items()
                      if isinstance(v, dict) and v.get("type") != "tagNode" and k.startswith(last_part)]
        common_prefix = os.path.commonprefix(candidates) if candidates else ""
        if common_prefix and common_prefix != last_part:
            return Suggestion(common_prefix[len(last_part):])
        return None


class TreeCompleter(Completer):
    """Completes keywords from the command tree and tag values from suggestors."""

    def __init__(self, tree: Dict[str, Any]):
        self.tree = tree

    def get_completions(self, document: Document, complete_event: Any) -> Iterator[Completion]:
        text = document.text_before_cursor
        parts = text.strip().split()
        is_mid_token = bool(parts) and not text.endswith(" ")
        last_word = parts[-1] if is_mid_token else ""
        node = walk(self.tree, parts[:-1] if is_mid_token else parts)
        if not isinstance(node, dict):
            return

        for key, val in node.items():
            if not isinstance(val, dict):
                continue
            if val.get("type") == "tagNode":
                try:
                    options = suggestions_for(val)
                except Exception:
                    yield Completion(text=f"<error: {val.get('suggestor')}>", start_position=0)
                    continue
                for option in options:
                    if option.startswith(last_word):
                        yield Completion(text=option, start_position=-len(last_word))
            elif key.startswith(last_word):
                yield Completion(text=key, start_position=-len(last_word), display_meta=val.get("description", ""))


class CommandValidator(Validator):
    """Checks every tag value typed so far against its named validator."""

    def __init__(self, root: Dict[str, Any]):
        self.root = root

    def validate(self, document: Document) -> None:
        node = self.root
        for part in document.text.strip().split():
            if isinstance(node.get(part), dict):
                node = node[part]
                continue
            entry = tag_child(node)
            if not entry:
                break
            check_tag_value(entry[1], part, document.text)
            node = entry[1]


def _completion_rows(node: Dict[str, Any]) -> List[List[str]]:
    rows = [["<enter>", "Execute the current command"]] if "command" in node else []
    for key, val in node.items():
        if not isinstance(val, dict):
            continue
        rows.append([key, val.get("description", "")])
        if val.get("type") == "tagNode" and "suggestor" in val:
            try:
                rows.extend([s, ""] for s in suggestions_for(val))
            except Exception as e:
                rows.append([f"<error calling {val['suggestor']}>", str(e)])
    return rows


def print_possible_completions(path: List[str], root: Dict[str, Any]) -> None:
    node = walk(root, path)
    rows = _completion_rows(node) if isinstance(node, dict) else []
    if not rows:
        print("No completions found.\n")
        return
    print("\nPossible completions:\n")
    print("  " + tabulate(rows, tablefmt="plain").replace("\n", "\n  "))


def setup_keybindings(commands_json: Dict[str, Any]) -> KeyBindings:
    """'?' lists the options at the cursor, tab completes or lists them."""
    bindings = KeyBindings()

    @bindings.add('?', eager=True)
    def show_possible(event):
        parts = event.app.current_buffer.text.strip().split()
        run_in_terminal(lambda: print_possible_completions(parts, commands_json))

    @bindings.add('tab')
    def autocomplete(event):
        buffer = event.app.current_buffer
        text = buffer.text
        parts = text.strip().split()
        if not parts:
            return

        is_mid_token = not text.endswith(" ")
        last_token = parts[-1] if is_mid_token else ""
        node = walk(commands_json, parts[:-1] if is_mid_token else parts)
        if not node:
            return

        matches = [r[0] for r in _completion_rows(node)
                   if not r[0].startswith('<') and r[0].startswith(last_token)]
        if matches:
            common_prefix = os.path.commonprefix(matches)
            completion = matches[0] + " " if len(matches) == 1 else common_prefix
            if len(matches) == 1 or (common_prefix and common_prefix != last_token):
                if is_mid_token:
                    buffer.delete_before_cursor(len(last_token))
                buffer.insert_text(completion)
                return

        run_in_terminal(lambda: print_possible_completions(parts, commands_json))

    return bindings
