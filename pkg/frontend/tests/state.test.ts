import { describe, expect, it } from 'vitest';

import type { ServerSessionView, TriageResultDto } from '../src/api';
import {
  canSubmit,
  gaugeGeometry,
  inputPlaceholder,
  systemTurnFromResult,
  turnsFromServer,
  viewFromServer,
} from '../src/state';

function result(overrides: Partial<TriageResultDto> = {}): TriageResultDto {
  return {
    label: 'clear',
    sigma: { value: 0.0, estimator: 'context_sampling', h: 4 },
    skill: 'robot.pick_and_place(red block, blue bowl)',
    skill_lines: null,
    explanation: null,
    question: null,
    transcript: '',
    ...overrides,
  };
}

function serverView(overrides: Partial<ServerSessionView> = {}): ServerSessionView {
  return {
    session_id: 's1',
    scene_summary: 'objects: red block, blue bowl',
    robot_type: 'tabletop',
    input_state: 'awaiting_command',
    goal: null,
    rounds_used: 0,
    history: [],
    pending_question: null,
    last_result: null,
    epsilon: 0.25,
    ...overrides,
  };
}

describe('systemTurnFromResult', () => {
  it('marks clear results with no feasibility row', () => {
    const turn = systemTurnFromResult(result(), 0.25);
    expect(turn.label).toBe('clear');
    expect(turn.feasibility).toBeNull();
    expect(turn.skill).toContain('pick_and_place');
  });

  it('ambiguous results passed the feasibility check', () => {
    const turn = systemTurnFromResult(
      result({ label: 'ambiguous', skill: null, question: 'Which bowl?', explanation: 'R' }),
      0.25,
    );
    expect(turn.feasibility).toBe('yes');
    expect(turn.question).toBe('Which bowl?');
  });

  it('infeasible results failed it', () => {
    const turn = systemTurnFromResult(
      result({ label: 'infeasible', skill: null, explanation: 'cannot walk' }),
      0.25,
    );
    expect(turn.feasibility).toBe('no');
    expect(turn.reason).toBe('cannot walk');
  });
});

describe('turnsFromServer', () => {
  it('renders an empty session as no turns', () => {
    expect(turnsFromServer(serverView())).toEqual([]);
  });

  it('replays goal, question/answer history, and the latest result', () => {
    const view = serverView({
      goal: 'pick the block and put in the bowl',
      history: [{ question: 'Which block?', answer: 'the red block' }],
      last_result: result(),
      input_state: 'terminal',
    });
    const turns = turnsFromServer(view);
    expect(turns.map((t) => t.kind)).toEqual(['user', 'system', 'user', 'system']);
    expect(turns[0]).toMatchObject({ role: 'command', text: 'pick the block and put in the bowl' });
    expect(turns[1]).toMatchObject({ question: 'Which block?' });
    expect(turns[2]).toMatchObject({ role: 'answer', text: 'the red block' });
    expect(turns[3]).toMatchObject({ label: 'clear' });
  });

  it('is a pure projection: same server view, same turns', () => {
    const view = serverView({ goal: 'g', last_result: result() });
    expect(turnsFromServer(view)).toEqual(turnsFromServer(view));
  });
});

describe('viewFromServer', () => {
  it('carries the input state and pending question through', () => {
    const view = viewFromServer(
      serverView({
        goal: 'stack all blocks',
        input_state: 'awaiting_answer',
        pending_question: 'Which corner?',
        last_result: result({ label: 'ambiguous', skill: null, question: 'Which corner?' }),
      }),
    );
    expect(view.inputState).toBe('awaiting_answer');
    expect(view.pendingQuestion).toBe('Which corner?');
    expect(view.busy).toBe(false);
  });
});

describe('gaugeGeometry', () => {
  it('places the epsilon marker inside the gauge', () => {
    const { fillFraction, markerFraction } = gaugeGeometry(0.5, 0.25);
    expect(fillFraction).toBeGreaterThan(markerFraction);
    expect(fillFraction).toBeLessThanOrEqual(1);
    expect(markerFraction).toBeGreaterThan(0);
  });

  it('degenerates gracefully at sigma = 0', () => {
    const { fillFraction, markerFraction } = gaugeGeometry(0, 0.25);
    expect(fillFraction).toBe(0);
    expect(markerFraction).toBeGreaterThan(0);
  });

  it('is linear in sigma below the span', () => {
    const a = gaugeGeometry(0.2, 1.0);
    const b = gaugeGeometry(0.4, 1.0);
    expect(b.fillFraction / a.fillFraction).toBeCloseTo(2, 10);
  });
});

describe('input gating', () => {
  it('labels the input per state', () => {
    expect(inputPlaceholder('awaiting_command')).toBe('your command');
    expect(inputPlaceholder('awaiting_answer')).toBe('your answer');
    expect(inputPlaceholder('terminal')).toBe('session finished');
  });

  it('never accepts input in the wrong state', () => {
    const awaitingAnswer = viewFromServer(serverView({ input_state: 'awaiting_answer' }));
    expect(canSubmit(awaitingAnswer, 'command')).toBe(false);
    expect(canSubmit(awaitingAnswer, 'answer')).toBe(true);

    const awaitingCommand = viewFromServer(serverView());
    expect(canSubmit(awaitingCommand, 'command')).toBe(true);
    expect(canSubmit(awaitingCommand, 'answer')).toBe(false);

    const terminal = viewFromServer(serverView({ input_state: 'terminal' }));
    expect(canSubmit(terminal, 'command')).toBe(false);
    expect(canSubmit(terminal, 'answer')).toBe(false);
  });

  it('rejects everything while a mutation is in flight', () => {
    const view = { ...viewFromServer(serverView()), busy: true };
    expect(canSubmit(view, 'command')).toBe(false);
    expect(canSubmit(view, 'answer')).toBe(false);
  });
});
