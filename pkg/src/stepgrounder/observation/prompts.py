"""Prompt templates rendered verbatim; goldens pin the exact bytes.

Step texts are substituted exactly as provided, with no escaping.
"""

from __future__ import annotations

from ..core import TaskSpec
from .labels import index_to_label, option_labels

NONE_OPTION_TEXT = "none of the above"

VSG_TEMPLATE = """You are watching a video segment of someone attempting to {goal}.

What is the main action being performed in this exact moment?

Options:
{options}

Answer with only the letter label of the correct option (e.g., A, B, ..., Z, AA, AB, etc.), with no extra text."""

NEXT_STEP_TEMPLATE = """You are watching a video segment of someone attempting to {goal}.

What is the most likely next step in the sequence?

Options:
{options}

Answer with only the letter label of the correct option (e.g., A, B, ..., Z, AA, AB, etc.), with no extra text."""

PROGRESS_TEMPLATE = """You are watching a short video clip.

The goal of the person in the video is: {goal}

The specific action of interest is: {step}

Rate how far along this action is in terms of execution progress, using a scale from 0 to 9:
- 0 = the action is not present in this clip
- 1 = the action is just beginning or about to begin
- 5 = the action is halfway complete
- 9 = the action is just finishing or about to finish

Respond with a single number from 0 to 9. Do not include any other text."""

PREREQUISITE_TEMPLATE = """You are performing the task: {goal}

Is the following step strictly required before another?

Prerequisite candidate: {prerequisite}
Target step: {step}

Answer "Yes" if the target step cannot be completed correctly without first completing the prerequisite step. Otherwise, answer "No".

Answer:"""

BINARY_VSG_TEMPLATE = """You are watching a video segment of someone attempting to {goal}.

Is the person currently performing the action: "{step}"?

Answer with "Yes" or "No" only."""


def render_options(task: TaskSpec) -> str:
    """One "<label>. <step>" line per step, then the "none" option."""
    lines = [f"{index_to_label(i)}. {text}" for i, text in enumerate(task.steps)]
    lines.append(f"{index_to_label(task.num_steps)}. {NONE_OPTION_TEXT}")
    return "\n".join(lines)


def vsg_option_labels(task: TaskSpec) -> list[str]:
    """Labels for the S steps plus the trailing "none" option."""
    return option_labels(task.num_steps + 1)


def build_vsg_prompt(task: TaskSpec) -> str:
    return VSG_TEMPLATE.format(goal=task.goal, options=render_options(task))


def build_next_step_prompt(task: TaskSpec) -> str:
    return NEXT_STEP_TEMPLATE.format(goal=task.goal, options=render_options(task))


def build_progress_prompt(task: TaskSpec, step_index: int) -> str:
    return PROGRESS_TEMPLATE.format(goal=task.goal, step=task.steps[step_index])


def build_prereq_prompt(task: TaskSpec, step_index: int, prerequisite_index: int) -> str:
    return PREREQUISITE_TEMPLATE.format(
        goal=task.goal,
        step=task.steps[step_index],
        prerequisite=task.steps[prerequisite_index],
    )


def build_binary_vsg_prompt(task: TaskSpec, step_index: int) -> str:
    return BINARY_VSG_TEMPLATE.format(goal=task.goal, step=task.steps[step_index])
