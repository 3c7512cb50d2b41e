"""Shared builders for tests: play scripted actions through an environment."""

from evoforge.actions import Action, ActionType
from evoforge.judgment import Step, Trajectory


def click(env, screen, wid):
    return Action(ActionType.CLICK, point=env.widget_center(screen, wid))


def play(env, actions, task_id="", goal=None, max_steps=50):
    state = env.reset(max_steps)
    steps = []
    for a in actions:
        steps.append(Step(env.observe(state), a))
        state = env.step(state, a)
    return Trajectory("task", tuple(steps), env.observe(state), task_id=task_id,
                      goal=None if goal is None else goal.to_dict(), env=env.name)


# criterion -> (passed, detail); filled by test_acceptance, printed by conftest
ACCEPTANCE = {}


def record(criterion, passed, detail):
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
