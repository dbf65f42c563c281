"""Shared fixtures: a demo fleet and mock rule tables used across tests."""

from dexter.strategy import RobotSkill, RobotSpec


def demo_fleet() -> list[RobotSpec]:
    return [
        RobotSpec(
            "fdrone1",
            "fire_extinguishing_drone",
            (RobotSkill("refill_water", 5.0), RobotSkill("spray_water", 4.0)),
            2.0,
            "water tank is empty in the beginning",
        ),
        RobotSpec(
            "fcart1",
            "fire_extinguishing_cart",
            (
                RobotSkill("use_extinguisher", 6.0),
                RobotSkill("refill_water", 5.0),
                RobotSkill("spray_water", 4.0),
            ),
            1.0,
        ),
        RobotSpec(
            "odrone1",
            "operating_drone",
            (RobotSkill("lift_access", 4.0), RobotSkill("lift_transfer", 3.0)),
            2.0,
            "has flexible arm and hand",
        ),
        RobotSpec(
            "tcart1",
            "transporting_cart",
            (RobotSkill("secure_victim", 3.0), RobotSkill("move_to_station", 6.0)),
            1.0,
            "transports people or items",
        ),
    ]


FIRE_WATER_STRATEGY = {
    "strategy_id": "small_fire-water",
    "task_type": "small_fire",
    "subtasks": [
        {
            "index": 1,
            "robot_type": "fire_extinguishing_drone",
            "action": "refill_water",
            "target": "water",
            "dependencies": [],
        },
        {
            "index": 2,
            "robot_type": "fire_extinguishing_drone",
            "action": "spray_water",
            "target": "@task",
            "dependencies": [1],
            "done_by_same_robot_as": 1,
        },
    ],
}

RESCUE_STRATEGY = {
    "strategy_id": "mild_injury-rescue",
    "task_type": "mild_injury",
    "subtasks": [
        {
            "index": 0,
            "robot_type": "transporting_cart",
            "action": "secure_victim",
            "target": "@task",
            "dependencies": [],
        },
        {
            "index": 1,
            "robot_type": "operating_drone",
            "action": "lift_access",
            "target": "@task",
            "dependencies": [],
        },
        {
            "index": 2,
            "robot_type": "operating_drone",
            "action": "lift_transfer",
            "target": "@task",
            "dependencies": [0, 1],
        },
        {
            "index": 3,
            "robot_type": "transporting_cart",
            "action": "move_to_station",
            "target": "rescue_station",
            "dependencies": [2],
            "done_by_same_robot_as": 0,
        },
    ],
}


def fire_water_rules() -> dict:
    """Mock table for a small-fire scene with a water reservoir."""
    return {
        "rules": [
            {
                "stage": "context_analysis",
                "tasks": "small_fire",
                "resources": "water",
                "output": {
                    "tasks": ["small_fire"],
                    "resources": ["water"],
                    "filtered_history": [],
                },
            },
            {
                "stage": "meta_policy",
                "tasks": "small_fire",
                "resources": "water",
                "output": {
                    "rules": [
                        {
                            "condition": "a fire is detected and water is available",
                            "directive": "refill water tanks first, then spray water on the fire",
                        }
                    ]
                },
            },
            {
                "stage": "subtask_guide",
                "tasks": "small_fire",
                "resources": "water",
                "output": {
                    "outlines": [
                        {
                            "task_type": "small_fire",
                            "steps": [
                                "refill water tank at the reservoir",
                                "spray water on the fire",
                            ],
                            "robot_types": ["fire_extinguishing_drone"],
                            "precedence_notes": "refill strictly before spray",
                        }
                    ]
                },
            },
            {
                "stage": "subtask_sequences",
                "tasks": "small_fire",
                "resources": "water",
                "output": {"strategies": [FIRE_WATER_STRATEGY]},
            },
        ]
    }
