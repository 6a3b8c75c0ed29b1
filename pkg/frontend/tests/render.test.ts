import { describe, expect, it } from "vitest";

import type { FeedbackPayload, TurnPayload, UnitPayload } from "../src/api.js";
import {
  escapeHtml,
  renderCallBanner,
  renderChat,
  renderFeedback,
  renderNotice,
  renderTurn,
  renderUnitList,
  startableUnitCount,
} from "../src/render.js";

function unit(id: string, status: UnitPayload["status"], position = 1): UnitPayload {
  return {
    id,
    title: `Title of ${id}`,
    objective: `Objective of ${id}`,
    estimated_minutes: 25,
    status,
    exercises: [`ex-${id}`],
    suggested_position: position,
  };
}

function turn(seq: number, speaker: TurnPayload["speaker"], text: string): TurnPayload {
  return { seq, speaker, channel: "chat", text, timestamp: seq, meta: {} };
}

describe("unit list", () => {
  it("renders nine startable cards for a fresh learner", () => {
    const units = Array.from({ length: 9 }, (_, i) => unit(`u${i}`, "not_started", i + 1));
    const html = renderUnitList(units);
    expect(html.match(/unit-card/g)).toHaveLength(9);
    expect(html.match(/start-exercise/g)).toHaveLength(9);
    expect(startableUnitCount(units)).toBe(9);
    expect(html).not.toContain("congratulations");
  });

  it("shows the congratulation banner and zero start buttons when all done", () => {
    const units = Array.from({ length: 3 }, (_, i) => unit(`u${i}`, "completed", i + 1));
    const html = renderUnitList(units);
    expect(html).toContain("congratulations");
    expect(html).not.toContain("start-exercise");
    expect(startableUnitCount(units)).toBe(0);
  });

  it("keeps exactly the incomplete units startable", () => {
    const units = [unit("a", "completed"), unit("b", "in_progress"), unit("c", "not_started")];
    const html = renderUnitList(units);
    expect(html.match(/start-exercise/g)).toHaveLength(2);
    expect(html).toContain("badge-completed");
  });

  it("renders text from the payload only", () => {
    const html = renderUnitList([unit("u1", "not_started")]);
    expect(html).toContain("Objective of u1");
  });
});

describe("turns", () => {
  it("gives persona and tutor turns distinct classes", () => {
    const persona = renderTurn(turn(1, "persona", "I am very upset!"));
    const tutor = renderTurn(turn(2, "tutor", "Here is your feedback."));
    expect(persona).toContain("turn-persona");
    expect(tutor).toContain("turn-tutor");
    expect(persona).not.toContain("turn-tutor");
  });

  it("marks optimistic messages as pending", () => {
    const html = renderChat([], [{ localId: 1, text: "on its way" }]);
    expect(html).toContain("turn-pending");
    expect(html).toContain("sending...");
  });

  it("escapes learner-controlled text", () => {
    const html = renderTurn(turn(1, "learner", "<script>alert(1)</script>"));
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("feedback view", () => {
  const report: FeedbackPayload = {
    run_id: "r1",
    per_criterion: [
      { criterion_id: "greeting", assessment: "Nice opening.", score: 1.0 },
      { criterion_id: "next-step", assessment: "No step agreed.", score: 0.0 },
    ],
    narrative: "Well done overall.",
    tips: ["Name the next step first."],
    overall: 0.5,
    partial: false,
    notice: "",
  };

  it("renders one block per criterion plus tips", () => {
    const html = renderFeedback(report);
    expect(html.match(/class="criterion"/g)).toHaveLength(2);
    expect(html).toContain("Nice opening.");
    expect(html).toContain("Name the next step first.");
  });

  it("hides numeric scores by default", () => {
    expect(renderFeedback(report)).not.toContain("1.00");
    expect(renderFeedback(report, true)).toContain("1.00");
  });

  it("surfaces partial notices", () => {
    const html = renderFeedback({ ...report, partial: true, notice: "assessment unavailable for: tone" });
    expect(html).toContain("assessment unavailable for: tone");
  });
});

describe("chrome", () => {
  it("renders notices only when present", () => {
    expect(renderNotice(null)).toBe("");
    expect(renderNotice("finish first")).toContain("finish first");
  });

  it("styles the phone exercise as a call", () => {
    const html = renderCallBanner("ex-angry", "telephone");
    expect(html).toContain("simulated call");
    expect(html).toContain("hangup");
  });

  it("escapeHtml covers the dangerous five", () => {
    expect(escapeHtml(`&<>"'`)).toBe("&amp;&lt;&gt;&quot;&#39;");
  });
});
