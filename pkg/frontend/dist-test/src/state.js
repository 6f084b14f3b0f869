/**
 * Client-side state: a latest-frame slot with strict sequence ordering (no
 * time travel), connection status, and UI flags derived from server truth.
 * The render loop reads the slot; message arrival never touches the DOM.
 */
export class ClientState {
    status = "disconnected";
    inputMode = "JOG";
    latest = null;
    lastRenderedSeq = -1;
    droppedStale = 0;
    goalPreview = null;
    lastError = null;
    episodeCount = 0;
    /** Accept a frame only if it is newer than everything seen; stale frames
     * are counted and dropped. Returns true when the slot was updated. */
    offerFrame(frame) {
        if (this.latest !== null && frame.seq <= this.latest.seq) {
            this.droppedStale += 1;
            return false;
        }
        this.latest = frame;
        return true;
    }
    /** The frame the renderer should draw now, monotone in seq; null when
     * nothing new arrived since the last call. */
    takeForRender() {
        if (this.latest === null || this.latest.seq <= this.lastRenderedSeq) {
            return null;
        }
        this.lastRenderedSeq = this.latest.seq;
        return this.latest;
    }
}
