// Session controller: owns one SessionView, talks to the API, re-renders
// after every mutation. One in-flight request per session; input stays
// disabled until the server answers.

import { ApiError, SessionApi } from './api';
import type { SessionView } from './state';
import { canSubmit, viewFromServer } from './state';
import { render } from './ui';

export class ConsoleApp {
  view: SessionView | null = null;

  constructor(
    private api: SessionApi,
    private root: HTMLElement,
    private banner: HTMLElement,
  ) {
    this.root.addEventListener('submit', (event) => {
      event.preventDefault();
      const input = this.root.querySelector<HTMLInputElement>('input[name=message]');
      if (input && input.value.trim()) {
        void this.submit(input.value.trim());
      }
    });
  }

  async start(scene: unknown): Promise<void> {
    this.banner.textContent = '';
    try {
      const { session_id } = await this.api.createSession(scene);
      const serverView = await this.api.getSession(session_id);
      this.view = viewFromServer(serverView);
      this.repaint();
    } catch (error) {
      this.view = null;
      this.banner.textContent = `service unreachable: ${(error as Error).message} — retry`;
      this.banner.setAttribute('data-testid', 'connect-error');
    }
  }

  /** Route the input to /command or /answer based on the current state. */
  async submit(text: string): Promise<void> {
    if (!this.view) return;
    const role = this.view.inputState === 'awaiting_answer' ? 'answer' : 'command';
    if (!canSubmit(this.view, role)) return;
    this.view = { ...this.view, busy: true, error: null };
    this.repaint();
    try {
      const serverView =
        role === 'answer'
          ? await this.api.postAnswer(this.view.sessionId, text)
          : await this.api.postCommand(this.view.sessionId, text);
      this.view = viewFromServer(serverView);
    } catch (error) {
      const message =
        error instanceof ApiError && error.status === 409
          ? 'answer the pending question first'
          : (error as Error).message;
      // state unchanged apart from the inline error
      this.view = { ...this.view, busy: false, error: message };
    }
    this.repaint();
  }

  async refresh(): Promise<void> {
    if (!this.view) return;
    const serverView = await this.api.getSession(this.view.sessionId);
    this.view = viewFromServer(serverView);
    this.repaint();
  }

  private repaint(): void {
    if (this.view) render(this.root, this.view);
  }
}
