"""Generate the bundled asset manifest.

Emits src/anomalykit/data/partnet_subset.jsonl: the 44-category, 2193-asset
target pool (category counts mirror the PartNet-Mobility subset stats the
catalog is modeled on) plus a small auxiliary pool of surrounding objects.
Fully deterministic; re-running reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "anomalykit" / "data" / "partnet_subset.jsonl"

CATEGORY_COUNTS = {
    "Bottle": 57, "Box": 28, "Bucket": 36, "Camera": 37, "Cart": 61,
    "Chair": 81, "Clock": 31, "CoffeeMachine": 54, "Dishwasher": 48,
    "Dispenser": 57, "Display": 37, "Door": 36, "Eyeglasses": 65, "Fan": 81,
    "FoldingChair": 26, "Globe": 61, "Kettle": 29, "Keyboard": 37,
    "KitchenPot": 25, "Knife": 44, "Lamp": 45, "Laptop": 55, "Microwave": 16,
    "Mouse": 14, "Oven": 30, "Pen": 48, "Phone": 18, "Pliers": 25,
    "Printer": 29, "Refrigerator": 44, "Remote": 49, "Safe": 30,
    "Scissors": 47, "Stapler": 23, "StorageFurniture": 346, "Suitcase": 24,
    "Table": 101, "Toaster": 25, "Toilet": 69, "TrashCan": 70, "USB": 51,
    "WashingMachine": 17, "Window": 58, "Lighter": 28,
}

# Categories with an openable part (lid, door, cap, blade, hinge).
OPENABLE = {
    "Bottle": "cap", "Box": "lid", "Dishwasher": "door", "Door": "hinge",
    "Eyeglasses": "hinge", "FoldingChair": "hinge", "Kettle": "lid",
    "KitchenPot": "lid", "Knife": "blade", "Laptop": "lid",
    "Lighter": "lid", "Microwave": "door", "Oven": "door", "Pen": "cap",
    "Pliers": "hinge", "Refrigerator": "door", "Safe": "door",
    "Scissors": "hinge", "Stapler": "hinge", "StorageFurniture": "door",
    "Suitcase": "lid", "Toilet": "lid", "TrashCan": "lid",
    "WashingMachine": "door", "Window": "sash",
}

# Categories with a power or flow control.
SWITCHABLE = {
    "CoffeeMachine", "Dishwasher", "Dispenser", "Display", "Fan", "Kettle",
    "Lamp", "Microwave", "Oven", "Printer", "Toaster", "WashingMachine",
}

DESCRIPTION_HINTS = {
    "Bottle": "a capped bottle for holding liquids",
    "Box": "a box with a hinged lid for loose items",
    "Bucket": "a deep bucket with a carrying handle",
    "Camera": "a handheld camera with a lens",
    "Cart": "a wheeled cart for moving goods",
    "Chair": "a chair with a backrest",
    "Clock": "a clock with a readable face",
    "CoffeeMachine": "a countertop coffee machine",
    "Dishwasher": "a dishwasher with a front-opening door",
    "Dispenser": "a pump dispenser for soap or lotion",
    "Display": "a flat display screen",
    "Door": "a hinged interior door",
    "Eyeglasses": "a pair of folding eyeglasses",
    "Fan": "an electric fan with rotating blades",
    "FoldingChair": "a collapsible folding chair",
    "Globe": "a rotating desk globe",
    "Kettle": "an electric kettle with a lid",
    "Keyboard": "a computer keyboard",
    "KitchenPot": "a cooking pot with a lid",
    "Knife": "a folding knife with a sharp blade",
    "Lamp": "a lamp with a switch",
    "Laptop": "a laptop computer with a folding lid",
    "Microwave": "a microwave oven with a door and controls",
    "Mouse": "a computer mouse",
    "Oven": "a kitchen oven with a door",
    "Pen": "a pen with a removable cap",
    "Phone": "a telephone handset",
    "Pliers": "a pair of pliers with hinged jaws",
    "Printer": "a desktop printer",
    "Refrigerator": "a refrigerator with a door",
    "Remote": "a handheld remote control",
    "Safe": "a lockable safe with a heavy door",
    "Scissors": "a pair of scissors with hinged blades",
    "Stapler": "a desk stapler",
    "StorageFurniture": "a storage cabinet with doors and shelves",
    "Suitcase": "a travel suitcase with a lid",
    "Table": "a table with a flat top",
    "Toaster": "a two-slot toaster",
    "Toilet": "a toilet with a hinged lid",
    "TrashCan": "a trash can with a lid",
    "USB": "a usb flash drive",
    "WashingMachine": "a washing machine with a door",
    "Window": "a window with a sliding sash",
    "Lighter": "a flip-top lighter",
}

AUXILIARIES = [
    ("storage box", "a sturdy storage box with a hinged lid for keeping household items"),
    ("plastic storage bin", "a stackable plastic storage bin for organizing clutter"),
    ("lockable storage chest", "a lockable storage chest that keeps items out of reach"),
    ("table", "a wooden table with a flat top for holding objects"),
    ("side table", "a small side table placed next to seating"),
    ("soup bowl", "a ceramic bowl for serving warm soup"),
    ("cereal bowl", "a deep bowl for cereal and snacks"),
    ("serving tray", "a flat serving tray with raised edges"),
    ("wicker basket", "a woven wicker basket for laundry or toys"),
    ("floor mat", "a rubber floor mat that prevents slipping"),
    ("wall shelf", "a mounted wall shelf for books and decor"),
    ("flower vase", "a glass flower vase with a narrow neck"),
    ("plant pot", "a clay plant pot with drainage holes"),
    ("desk organizer", "a desk organizer with compartments for supplies"),
    ("step stool", "a folding step stool for reaching high places"),
    ("coat rack", "a standing coat rack with hooks"),
    ("waste basket", "a small waste basket for paper scraps"),
    ("cutting board", "a wooden cutting board for food preparation"),
    ("drying rack", "a collapsible drying rack for dishes"),
    ("toy chest", "a padded toy chest sized for a child's room"),
]


def camel_to_words(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", " ", name).lower()


def articulations_for(category: str) -> list[dict]:
    arts = []
    if category in OPENABLE:
        arts.append({
            "joint_id": OPENABLE[category],
            "kind": "revolute",
            "states": ["open", "closed"],
            "default_state": "closed",
        })
    if category in SWITCHABLE:
        arts.append({
            "joint_id": "power",
            "kind": "binary_toggle",
            "states": ["on", "off"],
            "default_state": "off",
        })
    return arts


def main():
    lines = [json.dumps({"schema_version": 1}, sort_keys=True)]
    for category in sorted(CATEGORY_COUNTS):
        words = camel_to_words(category)
        arts = articulations_for(category)
        for i in range(CATEGORY_COUNTS[category]):
            record = {
                "asset_id": f"{category.lower()}_{i:04d}",
                "category": category,
                "name": words,
                "description": f"{DESCRIPTION_HINTS[category]} (model {i})",
                "articulations": arts,
                "source": "target_pool",
            }
            lines.append(json.dumps(record, sort_keys=True))
    for i, (name, description) in enumerate(AUXILIARIES):
        record = {
            "asset_id": f"aux_{i:04d}",
            "category": "Auxiliary",
            "name": name,
            "description": description,
            "articulations": [],
            "source": "auxiliary_pool",
        }
        lines.append(json.dumps(record, sort_keys=True))
    OUT.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines) - 1} assets to {OUT}")


if __name__ == "__main__":
    main()
