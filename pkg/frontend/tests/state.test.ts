import { describe, expect, it } from "vitest";

import type { SessionSnapshot, TurnPayload } from "../src/api.js";
import {
  applyConflict,
  canEndRun,
  canSendExerciseTurn,
  canSendTutorMessage,
  canStartExercise,
  exercisePanelVisible,
  initialState,
  mergeChatTurns,
  mergeRunTurns,
  optimisticAppend,
  reconcile,
} from "../src/state.js";

function snapshot(state: string, run: SessionSnapshot["run"] = null): SessionSnapshot {
  return {
    session_id: "s1",
    learner_id: "l1",
    state,
    active_unit: null,
    run,
    tutor_turns: 0,
    run_turns: run ? 1 : 0,
  };
}

const phoneRun = {
  run_id: "r1",
  exercise_id: "ex-1",
  unit_id: "unit-1",
  channel: "telephone",
  status: "running",
  thread_id: "",
};

function turn(seq: number, speaker: TurnPayload["speaker"], text: string): TurnPayload {
  return { seq, speaker, channel: "chat", text, timestamp: seq, meta: {} };
}

describe("view reconciliation", () => {
  it("shows the exercise panel exactly while the server says exercise_active", () => {
    let ui = { ...initialState(), view: "units" as const };
    ui = reconcile(ui, snapshot("exercise_active", phoneRun));
    expect(ui.view).toBe("exercise");
    expect(exercisePanelVisible(ui)).toBe(true);

    ui = reconcile(ui, snapshot("awaiting_feedback"));
    expect(exercisePanelVisible(ui)).toBe(false);
    expect(ui.view).toBe("feedback");
  });

  it("routes email runs to the composer view", () => {
    const ui = reconcile(
      { ...initialState(), view: "units" },
      snapshot("exercise_active", { ...phoneRun, channel: "email" }),
    );
    expect(ui.view).toBe("email");
  });

  it("keeps non-exercise views where they were", () => {
    const ui = reconcile({ ...initialState(), view: "chat" }, snapshot("tutor_dialog"));
    expect(ui.view).toBe("chat");
  });

  it("resets run cursor when a new run starts", () => {
    let ui = reconcile({ ...initialState(), view: "units" }, snapshot("exercise_active", phoneRun));
    ui = mergeRunTurns(ui, [turn(1, "persona", "opening")]);
    expect(ui.runCursor).toBe(1);
    ui = reconcile(ui, snapshot("exercise_active", { ...phoneRun, run_id: "r2" }));
    expect(ui.runCursor).toBe(0);
    expect(ui.runTurns).toHaveLength(0);
  });
});

describe("guards", () => {
  it("blocks tutor messages and starts while an exercise is active", () => {
    const active = reconcile(
      { ...initialState(), view: "units" },
      snapshot("exercise_active", phoneRun),
    );
    expect(canSendTutorMessage(active)).toBe(false);
    expect(canStartExercise(active)).toBe(false);
    expect(canSendExerciseTurn(active)).toBe(true);
    expect(canEndRun(active)).toBe(true);
  });

  it("allows tutor interaction in idle and tutor_dialog", () => {
    const idle = initialState();
    expect(canSendTutorMessage(idle)).toBe(true);
    const chatting = reconcile({ ...initialState(), view: "chat" }, snapshot("tutor_dialog"));
    expect(canSendTutorMessage(chatting)).toBe(true);
    expect(canSendExerciseTurn(chatting)).toBe(false);
  });
});

describe("optimistic chat", () => {
  it("appends a pending marker and reconciles it from server turns", () => {
    let ui = optimisticAppend(initialState(), "hello tutor");
    expect(ui.pending).toHaveLength(1);
    expect(ui.chatDraft).toBe("");

    ui = mergeChatTurns(ui, [turn(1, "learner", "hello tutor"), turn(2, "tutor", "hi!")]);
    expect(ui.pending).toHaveLength(0);
    expect(ui.chatTurns.map((t) => t.seq)).toEqual([1, 2]);
    expect(ui.chatCursor).toBe(2);
  });

  it("is idempotent over repeated polls of the same turns", () => {
    let ui = mergeChatTurns(initialState(), [turn(1, "learner", "a")]);
    ui = mergeChatTurns(ui, [turn(1, "learner", "a")]);
    expect(ui.chatTurns).toHaveLength(1);
  });
});

describe("conflict handling", () => {
  it("shows the finish-first notice and preserves the typed input", () => {
    const ui = applyConflict(optimisticAppend(initialState(), "typed words"), "typed words", "chat");
    expect(ui.notice).toMatch(/finish the running exercise/i);
    expect(ui.chatDraft).toBe("typed words");
    expect(ui.pending).toHaveLength(0);
  });

  it("preserves exercise drafts separately", () => {
    const ui = applyConflict(initialState(), "half an answer", "exercise");
    expect(ui.exerciseDraft).toBe("half an answer");
    expect(ui.chatDraft).toBe("");
  });
});
