/**
 * HTML renderers. Pure string builders so they stay testable without a DOM;
 * all learner-visible wording comes from API payloads, never from here.
 */

import type { CriterionBlock, FeedbackPayload, TurnPayload, UnitPayload } from "./api.js";
import type { PendingMessage } from "./state.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const STATUS_BADGES: Record<UnitPayload["status"], string> = {
  not_started: "open",
  in_progress: "in progress",
  completed: "done",
};

export function renderUnitCard(unit: UnitPayload): string {
  const startable = unit.status !== "completed";
  const badge = STATUS_BADGES[unit.status];
  const buttons = startable
    ? unit.exercises
        .map(
          (ex) =>
            `<button class="start-exercise" data-exercise="${escapeHtml(ex)}" data-unit="${escapeHtml(unit.id)}">start ${escapeHtml(ex)}</button>`,
        )
        .join("")
    : "";
  return [
    `<article class="unit-card unit-${unit.status}" data-unit="${escapeHtml(unit.id)}">`,
    `<header><span class="position">${unit.suggested_position}</span>`,
    `<h3>${escapeHtml(unit.title)}</h3>`,
    `<span class="badge badge-${unit.status}">${badge}</span></header>`,
    `<p>${escapeHtml(unit.objective)}</p>`,
    `<p class="minutes">~${unit.estimated_minutes} min</p>`,
    buttons,
    `</article>`,
  ].join("");
}

export function renderUnitList(units: UnitPayload[]): string {
  const cards = units.map(renderUnitCard).join("\n");
  const allDone = units.length > 0 && units.every((u) => u.status === "completed");
  const banner = allDone
    ? `<div class="congratulations">All units completed, congratulations!</div>`
    : "";
  return `${banner}<section class="unit-list">${cards}</section>`;
}

export function startableUnitCount(units: UnitPayload[]): number {
  return units.filter((u) => u.status !== "completed").length;
}

/** Chat bubble; persona turns are visually distinct from tutor turns. */
export function renderTurn(turn: TurnPayload): string {
  const who = turn.speaker;
  return (
    `<div class="turn turn-${who}" data-seq="${turn.seq}">` +
    `<span class="speaker">${escapeHtml(who)}</span>` +
    `<p>${escapeHtml(turn.text)}</p></div>`
  );
}

export function renderPending(message: PendingMessage): string {
  return (
    `<div class="turn turn-learner turn-pending" data-local="${message.localId}">` +
    `<span class="speaker">you</span>` +
    `<p>${escapeHtml(message.text)}</p><span class="pending-marker">sending...</span></div>`
  );
}

export function renderChat(turns: TurnPayload[], pending: PendingMessage[]): string {
  return [...turns.map(renderTurn), ...pending.map(renderPending)].join("\n");
}

export function renderCriterionBlock(block: CriterionBlock, showScores: boolean): string {
  const score = showScores ? `<span class="score">${block.score.toFixed(2)}</span>` : "";
  return (
    `<section class="criterion" data-criterion="${escapeHtml(block.criterion_id)}">` +
    `<h4>${escapeHtml(block.criterion_id)}${score}</h4>` +
    `<p>${escapeHtml(block.assessment)}</p></section>`
  );
}

export function renderFeedback(report: FeedbackPayload, showScores = false): string {
  const blocks = report.per_criterion
    .map((block) => renderCriterionBlock(block, showScores))
    .join("\n");
  const tips = report.tips.map((t) => `<li>${escapeHtml(t)}</li>`).join("");
  const notice = report.notice
    ? `<p class="feedback-notice">${escapeHtml(report.notice)}</p>`
    : "";
  return (
    `<div class="feedback">` +
    `${blocks}` +
    `<p class="narrative">${escapeHtml(report.narrative)}</p>` +
    `<ul class="tips">${tips}</ul>` +
    notice +
    `</div>`
  );
}

export function renderNotice(text: string | null): string {
  if (!text) {
    return "";
  }
  return `<div class="notice" role="status">${escapeHtml(text)}</div>`;
}

/** Call-styled header for the phone-sim exercise panel. */
export function renderCallBanner(exerciseId: string, channel: string): string {
  const label = channel === "telephone" ? "simulated call" : channel;
  return (
    `<div class="call-banner channel-${escapeHtml(channel)}">` +
    `<span>${escapeHtml(label)}</span> <strong>${escapeHtml(exerciseId)}</strong>` +
    `<button id="hangup">hang up</button></div>`
  );
}
