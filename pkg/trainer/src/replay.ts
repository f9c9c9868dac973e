/**
 * Fixed-capacity experience replay with uniform sampling.
 * States are stored as Float32Array to keep 500k-transition buffers compact.
 */

export interface Transition {
    state: Float32Array;
    action: number;
    reward: number;
    nextState: Float32Array;
    done: boolean;
}

export class ReplayBuffer {
    readonly capacity: number;
    private buffer: Transition[];
    private position = 0;
    private count = 0;
    private rng: () => number;

    constructor(capacity: number, rng: () => number = Math.random) {
        if (capacity <= 0) throw new Error("capacity must be positive");
        this.capacity = capacity;
        this.buffer = new Array<Transition>(capacity);
        this.rng = rng;
    }

    get size(): number {
        return this.count;
    }

    push(t: Transition): void {
        this.buffer[this.position] = t;
        this.position = (this.position + 1) % this.capacity;
        if (this.count < this.capacity) this.count += 1;
    }

    /** Uniform with replacement: every stored transition equally likely. */
    sample(batchSize: number): Transition[] {
        if (this.count === 0) throw new Error("empty buffer");
        const out: Transition[] = new Array(batchSize);
        for (let i = 0; i < batchSize; i++) {
            out[i] = this.buffer[Math.floor(this.rng() * this.count)]!;
        }
        return out;
    }
}
