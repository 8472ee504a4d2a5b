// DOM rendering. The view object is the single source of truth; render()
// replaces the chat and input area wholesale, so the screen is always a
// function of the last server response.

import type { SessionView, SystemTurn } from './state';
import { canSubmit, gaugeGeometry, inputPlaceholder } from './state';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderGauge(turn: SystemTurn): HTMLElement {
  const gauge = el('div', 'gauge');
  gauge.setAttribute('data-testid', 'sigma-gauge');
  const { fillFraction, markerFraction } = gaugeGeometry(turn.sigma, turn.epsilon);
  const fill = el('div', 'gauge-fill');
  fill.style.width = `${(Number.isNaN(fillFraction) ? 0 : fillFraction) * 100}%`;
  const marker = el('div', 'gauge-marker');
  marker.style.left = `${markerFraction * 100}%`;
  marker.title = `epsilon = ${turn.epsilon}`;
  gauge.append(fill, marker);
  const caption = el(
    'span',
    'gauge-caption',
    Number.isNaN(turn.sigma) ? 'sigma n/a' : `sigma ${turn.sigma.toFixed(3)}`,
  );
  const wrap = el('div', 'gauge-wrap');
  wrap.append(gauge, caption);
  return wrap;
}

function renderSystemTurn(turn: SystemTurn): HTMLElement {
  const bubble = el('div', `turn system label-${turn.label}`);
  bubble.setAttribute('data-testid', 'system-turn');
  const badge = el('span', 'badge', turn.label);
  badge.setAttribute('data-testid', 'label-badge');
  bubble.append(badge, renderGauge(turn));
  if (turn.feasibility !== null) {
    const row = el('div', 'row feasibility', `F: feasible? ${turn.feasibility}`);
    row.setAttribute('data-testid', 'f-row');
    bubble.append(row);
  }
  if (turn.reason) {
    const row = el('div', 'row reason', `R: ${turn.reason}`);
    row.setAttribute('data-testid', 'r-row');
    bubble.append(row);
  }
  if (turn.question) {
    const row = el('div', 'row question', `Q: ${turn.question}`);
    row.setAttribute('data-testid', 'q-row');
    bubble.append(row);
  }
  if (turn.skill) {
    const row = el('pre', 'row skill', turn.skill);
    row.setAttribute('data-testid', 'skill-row');
    bubble.append(row);
  }
  return bubble;
}

export function render(root: HTMLElement, view: SessionView): void {
  root.replaceChildren();

  const header = el('div', 'scene-summary', `${view.robotType} robot — ${view.sceneSummary}`);
  header.setAttribute('data-testid', 'scene-summary');
  root.append(header);

  const chat = el('div', 'chat');
  chat.setAttribute('data-testid', 'chat');
  for (const turn of view.turns) {
    if (turn.kind === 'user') {
      const bubble = el('div', `turn user ${turn.role}`, turn.text);
      bubble.setAttribute('data-testid', 'user-turn');
      chat.append(bubble);
    } else {
      chat.append(renderSystemTurn(turn));
    }
  }
  root.append(chat);

  if (view.error) {
    const banner = el('div', 'error-banner', view.error);
    banner.setAttribute('data-testid', 'error-banner');
    root.append(banner);
  }

  const form = el('form', 'input-area');
  const input = el('input') as HTMLInputElement;
  input.type = 'text';
  input.name = 'message';
  input.placeholder = inputPlaceholder(view.inputState);
  input.setAttribute('data-testid', 'message-input');
  const role = view.inputState === 'awaiting_answer' ? 'answer' : 'command';
  input.disabled = !canSubmit(view, role);
  const button = el('button', undefined, role === 'answer' ? 'Answer' : 'Send') as HTMLButtonElement;
  button.type = 'submit';
  button.setAttribute('data-testid', 'send-button');
  button.disabled = input.disabled;
  form.append(input, button);
  root.append(form);
}
