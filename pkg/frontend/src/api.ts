// Thin typed client over the session API. All classification happens on the
// server; this module only moves JSON.

export interface SigmaScore {
  value: number;
  estimator: string;
  h: number;
}

export interface TriageResultDto {
  label: 'clear' | 'ambiguous' | 'infeasible';
  sigma: SigmaScore;
  skill: string | null;
  skill_lines: string[] | null;
  explanation: string | null;
  question: string | null;
  transcript: string;
}

export interface ServerSessionView {
  session_id: string;
  scene_summary: string;
  robot_type: string;
  input_state: 'awaiting_command' | 'awaiting_answer' | 'terminal';
  goal: string | null;
  rounds_used: number;
  history: { question: string; answer: string }[];
  pending_question: string | null;
  last_result: TriageResultDto | null;
  epsilon: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiError> {
  let code = 'http_error';
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the defaults
  }
  return new ApiError(response.status, code, message);
}

export class SessionApi {
  constructor(private baseUrl: string = '') {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, {
      headers: { 'content-type': 'application/json' },
      ...init,
    });
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  createSession(scene: unknown): Promise<{ session_id: string }> {
    return this.request('/sessions', {
      method: 'POST',
      body: JSON.stringify({ scene }),
    });
  }

  getSession(sessionId: string): Promise<ServerSessionView> {
    return this.request(`/sessions/${sessionId}`);
  }

  postCommand(sessionId: string, goal: string): Promise<ServerSessionView> {
    return this.request(`/sessions/${sessionId}/command`, {
      method: 'POST',
      body: JSON.stringify({ goal }),
    });
  }

  postAnswer(sessionId: string, answer: string): Promise<ServerSessionView> {
    return this.request(`/sessions/${sessionId}/answer`, {
      method: 'POST',
      body: JSON.stringify({ answer }),
    });
  }
}
