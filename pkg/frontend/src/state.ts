/**
 * View-state machine for the learner UI.
 *
 * The server owns the session state; the UI reconciles against every poll so
 * the exercise panel is visible exactly when the server says an exercise is
 * active. Buttons are guarded by the last observed state, and any 409 that
 * slips through becomes a gentle notice without losing typed input.
 */

import type { SessionSnapshot, TurnPayload } from "./api.js";

export type View = "login" | "units" | "chat" | "exercise" | "email" | "feedback";

export interface PendingMessage {
  localId: number;
  text: string;
}

export interface UiState {
  view: View;
  serverState: string;
  run: SessionSnapshot["run"];
  chatTurns: TurnPayload[];
  runTurns: TurnPayload[];
  chatCursor: number;
  runCursor: number;
  pending: PendingMessage[];
  notice: string | null;
  chatDraft: string;
  exerciseDraft: string;
  nextLocalId: number;
}

export function initialState(): UiState {
  return {
    view: "login",
    serverState: "idle",
    run: null,
    chatTurns: [],
    runTurns: [],
    chatCursor: 0,
    runCursor: 0,
    pending: [],
    notice: null,
    chatDraft: "",
    exerciseDraft: "",
    nextLocalId: 1,
  };
}

/** Which view a server state maps onto (feedback stays sticky until left). */
export function viewForSnapshot(ui: UiState, snapshot: SessionSnapshot): View {
  if (snapshot.state === "exercise_active" && snapshot.run) {
    return snapshot.run.channel === "email" ? "email" : "exercise";
  }
  if (ui.view === "exercise" || ui.view === "email") {
    // The run ended under us (hangup, timeout, max turns): leave the panel.
    return "feedback";
  }
  if (ui.view === "login" || ui.view === "feedback") {
    return ui.view;
  }
  return ui.view;
}

export function reconcile(ui: UiState, snapshot: SessionSnapshot): UiState {
  const view = viewForSnapshot(ui, snapshot);
  return {
    ...ui,
    view,
    serverState: snapshot.state,
    run: snapshot.run,
    // A fresh run invalidates the old transcript cursor.
    runCursor: ui.run && snapshot.run && ui.run.run_id === snapshot.run.run_id ? ui.runCursor : 0,
    runTurns:
      ui.run && snapshot.run && ui.run.run_id === snapshot.run.run_id ? ui.runTurns : [],
  };
}

/** The exercise panel must be visible iff the server reports an active run. */
export function exercisePanelVisible(ui: UiState): boolean {
  return (ui.view === "exercise" || ui.view === "email") && ui.serverState === "exercise_active";
}

// -- guarded actions ---------------------------------------------------------

export function canSendTutorMessage(ui: UiState): boolean {
  return ui.serverState === "idle" || ui.serverState === "tutor_dialog";
}

export function canStartExercise(ui: UiState): boolean {
  return ui.serverState === "idle" || ui.serverState === "tutor_dialog";
}

export function canSendExerciseTurn(ui: UiState): boolean {
  return ui.serverState === "exercise_active" && ui.run !== null;
}

export function canEndRun(ui: UiState): boolean {
  return (
    (ui.serverState === "exercise_active" || ui.serverState === "awaiting_feedback") &&
    ui.run !== null
  );
}

// -- chat turn bookkeeping -----------------------------------------------------

export function optimisticAppend(ui: UiState, text: string): UiState {
  return {
    ...ui,
    pending: [...ui.pending, { localId: ui.nextLocalId, text }],
    nextLocalId: ui.nextLocalId + 1,
    chatDraft: "",
  };
}

/** Server turns replace matching optimistic entries and advance the cursor. */
export function mergeChatTurns(ui: UiState, turns: TurnPayload[]): UiState {
  if (turns.length === 0) {
    return ui;
  }
  const known = new Set(ui.chatTurns.map((t) => t.seq));
  const fresh = turns.filter((t) => !known.has(t.seq));
  const confirmed = new Set(
    fresh.filter((t) => t.speaker === "learner").map((t) => t.text),
  );
  return {
    ...ui,
    chatTurns: [...ui.chatTurns, ...fresh].sort((a, b) => a.seq - b.seq),
    chatCursor: Math.max(ui.chatCursor, ...turns.map((t) => t.seq)),
    pending: ui.pending.filter((p) => !confirmed.has(p.text)),
  };
}

export function mergeRunTurns(ui: UiState, turns: TurnPayload[]): UiState {
  if (turns.length === 0) {
    return ui;
  }
  const known = new Set(ui.runTurns.map((t) => t.seq));
  const fresh = turns.filter((t) => !known.has(t.seq));
  return {
    ...ui,
    runTurns: [...ui.runTurns, ...fresh].sort((a, b) => a.seq - b.seq),
    runCursor: Math.max(ui.runCursor, ...turns.map((t) => t.seq)),
  };
}

// -- conflict handling -----------------------------------------------------------

/** 409 from the engine: show the notice, keep what the learner typed. */
export function applyConflict(ui: UiState, draft: string, field: "chat" | "exercise"): UiState {
  return {
    ...ui,
    notice: "Please finish the running exercise first.",
    chatDraft: field === "chat" ? draft : ui.chatDraft,
    exerciseDraft: field === "exercise" ? draft : ui.exerciseDraft,
    pending: field === "chat" ? ui.pending.filter((p) => p.text !== draft) : ui.pending,
  };
}

export function clearNotice(ui: UiState): UiState {
  return { ...ui, notice: null };
}
