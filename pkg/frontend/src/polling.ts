/**
 * One-second polling loop. Skips a tick while the previous one is still in
 * flight so slow responses never pile up.
 */

export type PollTick = () => Promise<void>;

export class Poller {
  private timer: ReturnType<typeof setInterval> | null = null;
  private inFlight = false;

  constructor(private tick: PollTick, private intervalMs = 1000) {}

  start(): void {
    this.stop();
    this.timer = setInterval(() => void this.run(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  /** Exposed for tests and for forcing an immediate refresh after actions. */
  async run(): Promise<void> {
    if (this.inFlight) {
      return;
    }
    this.inFlight = true;
    try {
      await this.tick();
    } catch {
      // polling errors are transient; the next tick retries
    } finally {
      this.inFlight = false;
    }
  }
}
