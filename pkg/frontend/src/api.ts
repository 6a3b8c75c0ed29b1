/**
 * Typed client for the training-engine HTTP API.
 *
 * Every call goes through one fetch wrapper so status handling is uniform:
 * 401 surfaces as AuthExpiredError (re-login prompt), 409 as ConflictError
 * (the engine refused the event in its current state).
 */

export interface UnitPayload {
  id: string;
  title: string;
  objective: string;
  estimated_minutes: number;
  status: "not_started" | "in_progress" | "completed";
  exercises: string[];
  suggested_position: number;
}

export interface TurnPayload {
  seq: number;
  speaker: "learner" | "tutor" | "persona";
  channel: string;
  text: string;
  timestamp: number;
  meta: Record<string, unknown>;
}

export interface LearnerSession {
  learner_id: string;
  session_id: string;
  token: string;
  tutor_name: string;
  tutor_voice_id: string;
}

export interface MessageReply {
  reply: string;
  state: string;
  redirected: boolean;
  offer: { unit_id: string | null; exercise_ids: string[] } | null;
  turn: TurnPayload;
}

export interface RunDescriptor {
  run_id: string;
  exercise_id: string;
  unit_id: string;
  channel: string;
  state: string;
  opening: TurnPayload;
  thread_id: string;
  call_id: string;
}

export interface RunTurnReply {
  reply: string | null;
  run_status: "running" | "ended";
  end_reason: string | null;
  state: string;
  clarification: boolean;
  turn_count: number;
}

export interface CriterionBlock {
  criterion_id: string;
  assessment: string;
  score: number;
}

export interface FeedbackPayload {
  run_id: string;
  per_criterion: CriterionBlock[];
  narrative: string;
  tips: string[];
  overall: number;
  partial: boolean;
  notice: string;
}

export interface EndRunPayload {
  run_id: string;
  feedback: FeedbackPayload;
  progress: { units: Record<string, { status: string; exercises_done: number }> };
  state: string;
}

export interface SessionSnapshot {
  session_id: string;
  learner_id: string;
  state: string;
  active_unit: string | null;
  run: {
    run_id: string;
    exercise_id: string;
    unit_id: string;
    channel: string;
    status: string;
    thread_id: string;
  } | null;
  tutor_turns: number;
  run_turns: number;
}

export class ApiRequestError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class AuthExpiredError extends ApiRequestError {
  constructor(message: string) {
    super(401, message);
  }
}

export class ConflictError extends ApiRequestError {
  constructor(message: string) {
    super(409, message);
  }
}

export type FetchFn = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  private token = "";

  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchFn = (input, init) => fetch(input, init),
  ) {}

  setToken(token: string): void {
    this.token = token;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "Content-Type": "application/json" };
    if (this.token) {
      headers["Authorization"] = `Bearer ${this.token}`;
    }
    const response = await this.fetchFn(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (response.status === 401) {
      throw new AuthExpiredError("session expired, please log in again");
    }
    if (response.status === 409) {
      const detail = await response.json().catch(() => ({ detail: "" }));
      throw new ConflictError(String(detail.detail ?? "not allowed right now"));
    }
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new ApiRequestError(response.status, detail || `request failed (${response.status})`);
    }
    return (await response.json()) as T;
  }

  createLearner(name: string, tutorGender: "female" | "male"): Promise<LearnerSession> {
    return this.request("POST", "/learners", { name, tutor_gender: tutorGender });
  }

  listUnits(programId: string, learnerId: string): Promise<{ program_id: string; units: UnitPayload[] }> {
    return this.request("GET", `/programs/${programId}/units?learner=${encodeURIComponent(learnerId)}`);
  }

  sessionSnapshot(sessionId: string): Promise<SessionSnapshot> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  postMessage(sessionId: string, text: string): Promise<MessageReply> {
    return this.request("POST", `/sessions/${sessionId}/messages`, { text });
  }

  chatTurns(sessionId: string, afterSeq: number): Promise<{ turns: TurnPayload[] }> {
    return this.request("GET", `/sessions/${sessionId}/messages?after_seq=${afterSeq}`);
  }

  startExercise(sessionId: string, exerciseId: string): Promise<RunDescriptor> {
    return this.request("POST", `/sessions/${sessionId}/exercises`, { exercise_id: exerciseId });
  }

  postTurn(runId: string, text: string): Promise<RunTurnReply> {
    return this.request("POST", `/runs/${runId}/turns`, { text });
  }

  runTurns(runId: string, afterSeq: number): Promise<{ turns: TurnPayload[] }> {
    return this.request("GET", `/runs/${runId}/turns?after_seq=${afterSeq}`);
  }

  endRun(runId: string): Promise<EndRunPayload> {
    return this.request("POST", `/runs/${runId}/end`);
  }

  feedback(runId: string): Promise<FeedbackPayload> {
    return this.request("GET", `/runs/${runId}/feedback`);
  }

  emailInbound(threadId: string, subject: string, body: string): Promise<{ reply: string | null }> {
    return this.request("POST", "/channels/email/inbound", {
      thread_id: threadId,
      subject,
      body,
    });
  }

  recordResourceView(learnerId: string, unitId: string, resourceId: string): Promise<unknown> {
    return this.request("POST", `/learners/${learnerId}/events`, {
      kind: "resource_view",
      unit_id: unitId,
      resource_id: resourceId,
    });
  }
}
