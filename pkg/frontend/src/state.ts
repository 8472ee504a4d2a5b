// Pure projection of the server session into what the console renders.
// No classification logic lives here: every label, sigma, reason, and
// question shown originated from a server response.

import type { ServerSessionView, TriageResultDto } from './api';

export type InputState = 'awaiting_command' | 'awaiting_answer' | 'terminal';

export interface UserTurn {
  kind: 'user';
  role: 'command' | 'answer';
  text: string;
}

export interface SystemTurn {
  kind: 'system';
  label: TriageResultDto['label'];
  sigma: number;
  epsilon: number;
  feasibility: 'yes' | 'no' | null; // F: resolved by the cascade for uncertain goals
  reason: string | null; //            R: generated explanation
  question: string | null; //          Q: pending clarifying question
  skill: string | null;
}

export type ChatTurn = UserTurn | SystemTurn;

export interface SessionView {
  sessionId: string;
  sceneSummary: string;
  robotType: string;
  epsilon: number;
  turns: ChatTurn[];
  inputState: InputState;
  pendingQuestion: string | null;
  busy: boolean; //  one in-flight mutation per session; input disabled while true
  error: string | null;
}

export function systemTurnFromResult(
  result: TriageResultDto,
  epsilon: number,
): SystemTurn {
  let feasibility: SystemTurn['feasibility'] = null;
  if (result.label === 'infeasible') feasibility = 'no';
  if (result.label === 'ambiguous') feasibility = 'yes';
  return {
    kind: 'system',
    label: result.label,
    sigma: result.sigma.value,
    epsilon,
    feasibility,
    reason: result.explanation,
    question: result.question,
    skill: result.skill,
  };
}

/** Rebuild the full chat from the server view alone (pure projection). */
export function turnsFromServer(view: ServerSessionView): ChatTurn[] {
  const turns: ChatTurn[] = [];
  if (view.goal !== null) {
    turns.push({ kind: 'user', role: 'command', text: view.goal });
  }
  for (const { question, answer } of view.history) {
    turns.push({
      kind: 'system',
      label: 'ambiguous',
      sigma: NaN, // intermediate sigmas are not retained by the server view
      epsilon: view.epsilon,
      feasibility: 'yes',
      reason: null,
      question,
      skill: null,
    });
    turns.push({ kind: 'user', role: 'answer', text: answer });
  }
  if (view.last_result) {
    turns.push(systemTurnFromResult(view.last_result, view.epsilon));
  }
  return turns;
}

export function viewFromServer(view: ServerSessionView): SessionView {
  return {
    sessionId: view.session_id,
    sceneSummary: view.scene_summary,
    robotType: view.robot_type,
    epsilon: view.epsilon,
    turns: turnsFromServer(view),
    inputState: view.input_state,
    pendingQuestion: view.pending_question,
    busy: false,
    error: null,
  };
}

/** Fraction of the gauge width filled by sigma, with the epsilon marker. */
export function gaugeGeometry(
  sigma: number,
  epsilon: number,
): { fillFraction: number; markerFraction: number } {
  const span = Math.max(sigma, epsilon) * 1.25 || 1;
  return {
    fillFraction: Math.min(sigma / span, 1),
    markerFraction: Math.min(epsilon / span, 1),
  };
}

export function inputPlaceholder(state: InputState): string {
  if (state === 'awaiting_answer') return 'your answer';
  if (state === 'terminal') return 'session finished';
  return 'your command';
}

/** Client-side guard mirroring the server's 409 rules. */
export function canSubmit(view: SessionView, role: 'command' | 'answer'): boolean {
  if (view.busy) return false;
  if (role === 'command') return view.inputState === 'awaiting_command';
  return view.inputState === 'awaiting_answer';
}
