/**
 * Outbound command gate: at most maxHz messages per second regardless of
 * gesture frequency. Latest-wins: a newer command queued within the window
 * replaces the pending one and flushes when the window opens.
 */

export class RateLimiter {
  private readonly minIntervalMs: number;
  private lastSent = -Infinity;
  private pending: (() => void) | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    maxHz: number,
    private readonly now: () => number = () => Date.now(),
  ) {
    this.minIntervalMs = 1000 / maxHz;
  }

  /** Submit a send thunk; runs immediately if the window allows, otherwise
   * replaces the pending send. */
  submit(send: () => void): void {
    const t = this.now();
    if (t - this.lastSent >= this.minIntervalMs) {
      this.lastSent = t;
      send();
      return;
    }
    this.pending = send;
    if (this.timer === null) {
      const wait = this.minIntervalMs - (t - this.lastSent);
      this.timer = setTimeout(() => this.flush(), Math.max(1, wait));
    }
  }

  /** Fire the pending send when the window opens (test hook). */
  flush(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    if (this.pending !== null) {
      this.lastSent = this.now();
      const send = this.pending;
      this.pending = null;
      send();
    }
  }
}
