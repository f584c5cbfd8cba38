"""Deterministic scripted chat backend.

Prompts built by the pipeline embed a ``CONTEXT-JSON: {...}`` line holding
the structured facts the model is asked about. A live LLM reads it as part
of the prompt; this backend parses it and answers from fixed templates, so
whole runs are reproducible without any model. Every answer is a pure
function of (request, seed).
"""

from __future__ import annotations

import json
import re

from ._util import normalize_name, stable_hash
from .errors import TransportError

CONTEXT_MARKER = "CONTEXT-JSON:"

CONTAINER_WORDS = (
    "box",
    "bin",
    "bucket",
    "cabinet",
    "dishwasher",
    "microwave",
    "oven",
    "refrigerator",
    "safe",
    "storagefurniture",
    "storage furniture",
    "trashcan",
    "trash can",
    "washingmachine",
    "washing machine",
)


def extract_context(messages) -> dict | None:
    """Pull the CONTEXT-JSON payload out of the last message that has one."""
    for _, content in reversed(list(messages)):
        idx = content.find(CONTEXT_MARKER)
        if idx >= 0:
            line = content[idx + len(CONTEXT_MARKER):].splitlines()[0].strip()
            try:
                return json.loads(line)
            except json.JSONDecodeError:
                return None
    return None


def _is_containerish(name: str) -> bool:
    n = normalize_name(name)
    return any(w in n for w in CONTAINER_WORDS)


def _joint_with_states(joints, a: str, b: str):
    for j in joints:
        states = [s.lower() for s in j.get("states", [])]
        if a in states and b in states:
            return j
    return None


def _proposal_store(name: str, category: str) -> str:
    return (
        f"Task Name: store the {name} safely\n"
        f"Explanation: A {name} left within easy reach can cause cuts, spills, "
        f"or poisoning, especially around children.\n"
        f"Description: A {name} lies unattended on the floor of the room. The robot "
        f"needs to pick up the {name} and put it into a storage box so it is out of reach.\n"
        f"Auxiliary Items: storage box\n"
        f"Articulations: none\n"
        f"Category: {category}\n"
    )


def _proposal_table(name: str) -> str:
    return (
        f"Task Name: move the {name} onto the table\n"
        f"Explanation: A {name} on the floor is a tripping and contamination hazard.\n"
        f"Description: A {name} lies on the floor near the seating area. The robot "
        f"must pick it up and set it onto the table so the floor stays clear.\n"
        f"Auxiliary Items: table\n"
        f"Articulations: none\n"
        f"Category: hygiene_management\n"
    )


def _proposal_close(name: str, joint_id: str) -> str:
    return (
        f"Task Name: close the {name}\n"
        f"Explanation: An open {name} lets dirt, moisture, or curious children "
        f"reach the contents.\n"
        f"Description: The {name} stands open and unattended. The robot must push "
        f"it shut so that the {name} is fully closed.\n"
        f"Auxiliary Items: none\n"
        f"Articulations: {joint_id}: open -> closed\n"
        f"Category: child_safety\n"
    )


def _proposal_turnoff(name: str, joint_id: str, with_bowl: bool) -> str:
    if with_bowl:
        desc = (
            f"A bowl of soup sits inside the {name} while the {name} keeps "
            f"running. The robot must switch the {name} off at its control."
        )
        aux = "bowl of soup"
    else:
        desc = (
            f"The {name} is still running with nobody around. The robot must "
            f"switch the {name} off at its control."
        )
        aux = "none"
    return (
        f"Task Name: turn off the {name}\n"
        f"Explanation: A {name} left running unattended wastes energy and can "
        f"overheat or flood.\n"
        f"Description: {desc}\n"
        f"Auxiliary Items: {aux}\n"
        f"Articulations: {joint_id}: on -> off\n"
        f"Category: household_hazards\n"
    )


AUX_DESCRIPTIONS = {
    "storage box": "a sturdy storage box with a lid used to hold loose household items",
    "table": "a low wooden table with a flat top surface for holding objects",
    "bowl of soup": "a ceramic bowl filled with warm soup",
}


class OfflineChatBackend:
    """Template-driven stand-in for a chat model."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, messages) -> str:
        ctx = extract_context(messages)
        if ctx is None:
            raise TransportError("offline chat backend needs a CONTEXT-JSON block")
        kind = ctx.get("kind")
        handler = getattr(self, f"_handle_{kind}", None)
        if handler is None:
            raise TransportError(f"offline chat backend: unknown request kind {kind!r}")
        return handler(ctx)

    # -- brainstorming ----------------------------------------------------

    def _handle_propose(self, ctx: dict) -> str:
        target = ctx["target"]
        name = normalize_name(target["name"])
        joints = target.get("articulations", [])
        key = "|".join(
            [
                str(self.seed),
                ctx.get("role", ""),
                target.get("asset_id", name),
                str(ctx.get("round", 0)),
                str(ctx.get("slot", 0)),
                str(len(ctx.get("prior_tasks", []))),
            ]
        )
        h = stable_hash(key)
        options = [
            _proposal_store(name, "household_hazards" if h % 2 else "child_safety"),
            _proposal_table(name),
        ]
        oc = _joint_with_states(joints, "open", "closed")
        if oc is not None:
            options.append(_proposal_close(name, oc["joint_id"]))
        onoff = _joint_with_states(joints, "on", "off")
        if onoff is not None:
            options.append(
                _proposal_turnoff(name, onoff["joint_id"], with_bowl=_is_containerish(name))
            )
        prior = {normalize_name(t) for t in ctx.get("prior_tasks", [])}
        # Prefer a template whose task name is not already on the table.
        start = h % len(options)
        for off in range(len(options)):
            text = options[(start + off) % len(options)]
            task_name = text.splitlines()[0].split(":", 1)[1].strip()
            if normalize_name(task_name) not in prior:
                return text
        return options[start]

    # -- retrieval --------------------------------------------------------

    def _handle_auxiliary_queries(self, ctx: dict) -> str:
        blocks = []
        for item in ctx.get("auxiliary_items", []):
            norm = normalize_name(item)
            desc = AUX_DESCRIPTIONS.get(norm, f"a common household {norm}")
            blocks.append(f"Name: {norm}\nDescription: {desc}")
        return "\n\n".join(blocks) + ("\n" if blocks else "")

    # -- scene configuration ----------------------------------------------

    def _handle_assign_sizes(self, ctx: dict) -> str:
        lines = []
        for item in ctx["items"]:
            name = normalize_name(item["name"])
            h = stable_hash(f"{self.seed}|size|{name}")
            if "table" in name:
                size = 1.0 + (h % 40) / 100.0
            elif _is_containerish(name):
                size = 0.40 + (h % 25) / 100.0
            else:
                size = 0.08 + (h % 25) / 100.0
            lines.append(f"{item['instance_id']}: {size:.2f} m")
        return "\n".join(lines) + "\n"

    # -- detection --------------------------------------------------------

    def _handle_detect(self, ctx: dict) -> str:
        entries = ctx["instances"]
        targets = [e for e in entries if e.get("role") == "target"]
        aux_names = {normalize_name(e["name"]) for e in entries if e.get("role") != "target"}
        primary: list[tuple[str, str]] = []
        for e in targets:
            name = normalize_name(e["name"])
            states = {normalize_name(s) for s in e.get("joint_states", {}).values()}
            if "on" in states:
                primary.append(
                    (f"the {name} has been left running unattended", f"turn off the {name}")
                )
            elif "open" in states:
                primary.append(
                    (f"the {name} stands open and unattended", f"close the {name}")
                )
            elif "storage box" in aux_names:
                primary.append(
                    (
                        f"the {name} lying on the floor can cause injury",
                        f"store the {name} in the storage box so it is out of reach",
                    )
                )
            elif "table" in aux_names:
                primary.append(
                    (
                        f"the {name} on the floor is in the way",
                        f"move the {name} onto the table so the floor stays clear",
                    )
                )
            else:
                primary.append(
                    (
                        f"the {name} is out of place",
                        f"pick up the {name} and put it away",
                    )
                )
        distractors = [
            ("the floor may be dusty", "sweep the floor and empty the trash"),
            ("the room air may be stale", "open a window to ventilate the room"),
        ]
        h = stable_hash(f"{self.seed}|detect|" + "|".join(sorted(e["name"] for e in entries)))
        candidates = list(primary)
        if h % 4 == 0 and candidates:
            # Occasionally let a distractor outrank the real issue.
            candidates = [distractors[0]] + candidates
        candidates += distractors
        k = ctx.get("k_max", 3)
        out = []
        for i, (prob, sol) in enumerate(candidates[:k], start=1):
            out.append(f"{i}. Problem: {prob}\n   Solution: {sol}")
        return "\n".join(out) + "\n"

    # -- skill learning ---------------------------------------------------

    def _resolve(self, name: str, instances) -> str:
        norm = normalize_name(name)
        for inst in instances:
            if normalize_name(inst["name"]) == norm:
                return inst["instance_id"]
        for inst in instances:
            n = normalize_name(inst["name"])
            if norm in n or n in norm:
                return inst["instance_id"]
        return norm.replace(" ", "_")

    def _handle_decompose(self, ctx: dict) -> str:
        solution = normalize_name(ctx["solution"])
        instances = ctx["instances"]

        def joint_for(inst_id: str, goal_state: str) -> str:
            for inst in instances:
                if inst["instance_id"] == inst_id:
                    for j in inst.get("articulations", []):
                        if goal_state in [s.lower() for s in j.get("states", [])]:
                            return j["joint_id"]
            return "joint"

        m = re.search(r"store the (.+?) in (?:a |the )?([a-z ]+?)(?: so\b.*)?$", solution)
        if m:
            a = self._resolve(m.group(1), instances)
            b = self._resolve(m.group(2), instances)
            return (
                f"1. approach {a}\n2. grasp {a}\n3. move_to {b} interior\n4. release\n"
            )
        m = re.search(
            r"(?:move|place|put) the (.+?) (?:onto|on) (?:a |the )?([a-z ]+?)(?: so\b.*)?$",
            solution,
        )
        if m:
            a = self._resolve(m.group(1), instances)
            b = self._resolve(m.group(2), instances)
            return f"1. approach {a}\n2. grasp {a}\n3. move_to {b} top\n4. release\n"
        m = re.search(r"close the ([a-z ]+?)(?: so\b.*)?$", solution)
        if m:
            a = self._resolve(m.group(1), instances)
            return f"1. approach {a}\n2. set_joint {a} {joint_for(a, 'closed')} closed\n"
        m = re.search(r"turn off the ([a-z ]+?)(?: at\b.*| so\b.*)?$", solution)
        if m:
            a = self._resolve(m.group(1), instances)
            return f"1. approach {a}\n2. set_joint {a} {joint_for(a, 'off')} off\n"
        m = re.search(r"pick up the (.+?)(?: and| so\b.*|$)", solution)
        if m:
            a = self._resolve(m.group(1), instances)
            return f"1. approach {a}\n2. grasp {a}\n3. move_to lift\n4. release\n"
        raise TransportError(f"offline decompose: unrecognized solution {solution!r}")

    def _handle_select_method(self, ctx: dict) -> str:
        verb = ctx.get("verb", "")
        if verb == "set_joint":
            return "reinforcement_learning\n"
        return "primitive_motion_planning\n"

    def _handle_judge_match(self, ctx: dict) -> str:
        cand = normalize_name(ctx["candidate"])
        truth = normalize_name(ctx["truth"])

        def verb_class(text: str) -> str:
            for cls, words in (
                ("store", ("store", "put away", "place in", "put in")),
                ("support", ("onto", "on the table", "place on", "move on")),
                ("close", ("close", "shut")),
                ("off", ("turn off", "switch off")),
                ("pick", ("pick up",)),
            ):
                if any(w in text for w in words):
                    return cls
            return "other"

        same_verb = verb_class(cand) == verb_class(truth) != "other"
        cand_tokens = set(re.findall(r"[a-z]{4,}", cand))
        truth_tokens = set(re.findall(r"[a-z]{4,}", truth))
        overlap = bool(cand_tokens & truth_tokens)
        return "yes\n" if (same_verb and overlap) else "no\n"
