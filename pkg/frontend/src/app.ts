/**
 * Browser entry point: login, unit list, tutor chat, exercise panel,
 * e-mail composer and feedback view, reconciled against the server by a
 * one-second poll.
 */

import {
  ApiClient,
  AuthExpiredError,
  ConflictError,
  type EndRunPayload,
  type FeedbackPayload,
  type LearnerSession,
  type UnitPayload,
} from "./api.js";
import { Poller } from "./polling.js";
import {
  applyConflict,
  canEndRun,
  canSendExerciseTurn,
  canSendTutorMessage,
  canStartExercise,
  clearNotice,
  initialState,
  mergeChatTurns,
  mergeRunTurns,
  optimisticAppend,
  reconcile,
  type UiState,
} from "./state.js";
import {
  renderCallBanner,
  renderChat,
  renderFeedback,
  renderNotice,
  renderUnitList,
} from "./render.js";

const PROGRAM_ID = "comm-training";

class App {
  private api = new ApiClient("");
  private ui: UiState = initialState();
  private session: LearnerSession | null = null;
  private units: UnitPayload[] = [];
  private feedback: FeedbackPayload | null = null;
  private poller = new Poller(() => this.poll());
  private root: HTMLElement;

  constructor(root: HTMLElement) {
    this.root = root;
  }

  start(): void {
    this.draw();
  }

  // -- server sync -------------------------------------------------------------

  private async poll(): Promise<void> {
    if (!this.session) {
      return;
    }
    try {
      const snapshot = await this.api.sessionSnapshot(this.session.session_id);
      this.ui = reconcile(this.ui, snapshot);
      const chat = await this.api.chatTurns(this.session.session_id, this.ui.chatCursor);
      this.ui = mergeChatTurns(this.ui, chat.turns);
      if (snapshot.run && snapshot.state === "exercise_active") {
        const turns = await this.api.runTurns(snapshot.run.run_id, this.ui.runCursor);
        this.ui = mergeRunTurns(this.ui, turns.turns);
      }
      if (this.ui.view === "feedback" && !this.feedback && snapshot.run) {
        // The run ended server-side (end phrase, turn cap, timeout):
        // fetch the report instead of leaving the view empty.
        await this.finishRun(snapshot.run.run_id);
        return;
      }
      this.draw();
    } catch (error) {
      if (error instanceof AuthExpiredError) {
        this.session = null;
        this.ui = { ...initialState(), notice: "Your session expired, please log in again." };
        this.poller.stop();
        this.draw();
        return;
      }
      throw error;
    }
  }

  private async refreshUnits(): Promise<void> {
    if (!this.session) {
      return;
    }
    const payload = await this.api.listUnits(PROGRAM_ID, this.session.learner_id);
    this.units = payload.units;
  }

  // -- actions ---------------------------------------------------------------------

  private async login(name: string, gender: "female" | "male"): Promise<void> {
    this.session = await this.api.createLearner(name, gender);
    this.api.setToken(this.session.token);
    await this.refreshUnits();
    this.ui = { ...initialState(), view: "units" };
    this.poller.start();
    this.draw();
  }

  private async sendTutorMessage(text: string): Promise<void> {
    if (!this.session || !text.trim()) {
      return;
    }
    if (!canSendTutorMessage(this.ui)) {
      this.ui = applyConflict(this.ui, text, "chat");
      this.draw();
      return;
    }
    this.ui = optimisticAppend(this.ui, text);
    this.draw();
    try {
      await this.api.postMessage(this.session.session_id, text);
      await this.poll();
    } catch (error) {
      if (error instanceof ConflictError) {
        this.ui = applyConflict(this.ui, text, "chat");
        this.draw();
        return;
      }
      throw error;
    }
  }

  private async startExercise(exerciseId: string): Promise<void> {
    if (!this.session || !canStartExercise(this.ui)) {
      return;
    }
    try {
      await this.api.startExercise(this.session.session_id, exerciseId);
      this.feedback = null;
      await this.poll();
    } catch (error) {
      if (error instanceof ConflictError) {
        this.ui = { ...this.ui, notice: "Please finish the running exercise first." };
        this.draw();
        return;
      }
      throw error;
    }
  }

  private async sendExerciseTurn(text: string): Promise<void> {
    if (!this.session || !this.ui.run || !text.trim()) {
      return;
    }
    if (!canSendExerciseTurn(this.ui)) {
      this.ui = applyConflict(this.ui, text, "exercise");
      this.draw();
      return;
    }
    const runId = this.ui.run.run_id;
    this.ui = { ...this.ui, exerciseDraft: "" };
    try {
      const reply = await this.api.postTurn(runId, text);
      if (reply.run_status === "ended") {
        await this.finishRun(runId);
        return;
      }
      await this.poll();
    } catch (error) {
      if (error instanceof ConflictError) {
        this.ui = applyConflict(this.ui, text, "exercise");
        this.draw();
        return;
      }
      throw error;
    }
  }

  private async finishRun(runId: string): Promise<void> {
    const result: EndRunPayload = await this.api.endRun(runId);
    this.feedback = result.feedback;
    this.ui = { ...this.ui, view: "feedback" };
    await this.refreshUnits();
    await this.poll();
  }

  private async hangup(): Promise<void> {
    if (!this.ui.run || !canEndRun(this.ui)) {
      return;
    }
    await this.finishRun(this.ui.run.run_id);
  }

  private async backToUnits(): Promise<void> {
    this.feedback = null;
    await this.refreshUnits();
    this.ui = { ...this.ui, view: "units" };
    this.draw();
  }

  // -- rendering -----------------------------------------------------------------

  private draw(): void {
    const notice = renderNotice(this.ui.notice);
    if (!this.session || this.ui.view === "login") {
      this.root.innerHTML = `${notice}${this.loginView()}`;
    } else if (this.ui.view === "units") {
      this.root.innerHTML = `${notice}${this.unitsView()}`;
    } else if (this.ui.view === "chat") {
      this.root.innerHTML = `${notice}${this.chatView()}`;
    } else if (this.ui.view === "exercise" || this.ui.view === "email") {
      this.root.innerHTML = `${notice}${this.exerciseView()}`;
    } else {
      this.root.innerHTML = `${notice}${this.feedbackView()}`;
    }
    this.wire();
  }

  private loginView(): string {
    return `
      <section class="login">
        <h2>Communication training</h2>
        <label>Your first name <input id="learner-name" /></label>
        <label>Tutor voice
          <select id="tutor-gender">
            <option value="female">female</option>
            <option value="male">male</option>
          </select>
        </label>
        <button id="login">Start learning</button>
      </section>`;
  }

  private unitsView(): string {
    return `
      <nav><button id="open-chat">Chat with the tutor</button></nav>
      ${renderUnitList(this.units)}`;
  }

  private chatView(): string {
    const guard = canSendTutorMessage(this.ui) ? "" : "disabled";
    return `
      <nav><button id="open-units">Units</button></nav>
      <section class="chat">${renderChat(this.ui.chatTurns, this.ui.pending)}</section>
      <footer class="composer">
        <input id="chat-input" value="${this.ui.chatDraft.replace(/"/g, "&quot;")}" />
        <button id="chat-send" ${guard}>Send</button>
      </footer>`;
  }

  private exerciseView(): string {
    const run = this.ui.run;
    if (!run) {
      return `<p>No running exercise.</p>`;
    }
    const banner = renderCallBanner(run.exercise_id, run.channel);
    const turns = renderChat(this.ui.runTurns, []);
    if (this.ui.view === "email") {
      return `
        ${banner}
        <section class="thread">${turns}</section>
        <footer class="composer email-composer">
          <textarea id="email-body">${this.ui.exerciseDraft}</textarea>
          <button id="email-send">Send e-mail reply</button>
        </footer>`;
    }
    return `
      ${banner}
      <section class="call">${turns}</section>
      <footer class="composer">
        <input id="exercise-input" value="${this.ui.exerciseDraft.replace(/"/g, "&quot;")}" />
        <button id="exercise-send">Say it</button>
      </footer>`;
  }

  private feedbackView(): string {
    const body = this.feedback
      ? renderFeedback(this.feedback)
      : `<p>Your feedback is being prepared...</p>`;
    return `
      <nav><button id="open-units">Back to units</button></nav>
      <section class="feedback-view"><h2>Your feedback</h2>${body}</section>`;
  }

  private wire(): void {
    this.on("login", async () => {
      const name = (document.getElementById("learner-name") as HTMLInputElement).value;
      const gender = (document.getElementById("tutor-gender") as HTMLSelectElement)
        .value as "female" | "male";
      if (name.trim()) {
        await this.login(name.trim(), gender);
      }
    });
    this.on("open-chat", () => {
      this.ui = clearNotice({ ...this.ui, view: "chat" });
      this.draw();
    });
    this.on("open-units", () => void this.backToUnits());
    this.on("chat-send", async () => {
      const input = document.getElementById("chat-input") as HTMLInputElement;
      await this.sendTutorMessage(input.value);
    });
    this.on("exercise-send", async () => {
      const input = document.getElementById("exercise-input") as HTMLInputElement;
      await this.sendExerciseTurn(input.value);
    });
    this.on("email-send", async () => {
      const input = document.getElementById("email-body") as HTMLTextAreaElement;
      await this.sendExerciseTurn(input.value);
    });
    this.on("hangup", () => void this.hangup());
    for (const button of Array.from(this.root.querySelectorAll<HTMLButtonElement>(".start-exercise"))) {
      button.addEventListener("click", () => {
        const exercise = button.dataset.exercise;
        if (exercise) {
          void this.startExercise(exercise);
        }
      });
    }
    const chatInput = document.getElementById("chat-input") as HTMLInputElement | null;
    chatInput?.addEventListener("input", () => {
      this.ui = { ...this.ui, chatDraft: chatInput.value };
    });
    const exerciseInput = document.getElementById("exercise-input") as HTMLInputElement | null;
    exerciseInput?.addEventListener("input", () => {
      this.ui = { ...this.ui, exerciseDraft: exerciseInput.value };
    });
    const emailBody = document.getElementById("email-body") as HTMLTextAreaElement | null;
    emailBody?.addEventListener("input", () => {
      this.ui = { ...this.ui, exerciseDraft: emailBody.value };
    });
  }

  private on(id: string, handler: () => void | Promise<void>): void {
    document.getElementById(id)?.addEventListener("click", () => void handler());
  }
}

const root = document.getElementById("app");
if (root) {
  new App(root).start();
}

export { App };
