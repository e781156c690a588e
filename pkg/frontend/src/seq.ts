/** Monotonic ticket counter: at most one in-flight request per panel
 * wins; responses for superseded tickets are discarded. */
export class RequestSequencer {
  private current = 0;

  next(): number {
    return ++this.current;
  }

  isCurrent(ticket: number): boolean {
    return ticket === this.current;
  }
}
