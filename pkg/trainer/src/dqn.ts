/**
 * Deep Q-Network on tfjs: a small MLP value head, a frozen target copy for
 * the bootstrap max, epsilon-greedy action selection, and JSON checkpoints
 * (the net is small enough that weights-as-JSON is the simplest portable
 * format without native IO handlers).
 */

import * as tf from "@tensorflow/tfjs";
import { ReplayBuffer, Transition } from "./replay.js";

export interface DqnConfig {
    obsDim: number;
    nActions: number;
    learningRate: number;
    gamma: number;
    hidden: number[];
    batchSize: number;
    targetUpdateInterval: number;
}

export const DEFAULT_DQN: Omit<DqnConfig, "obsDim" | "nActions"> = {
    learningRate: 1e-4,
    gamma: 0.99,
    hidden: [112, 112],
    batchSize: 32,
    targetUpdateInterval: 2000,
};

function buildNet(obsDim: number, nActions: number, hidden: number[]): tf.Sequential {
    const model = tf.sequential();
    model.add(tf.layers.dense({ inputShape: [obsDim], units: hidden[0]!, activation: "relu" }));
    for (const units of hidden.slice(1)) {
        model.add(tf.layers.dense({ units, activation: "relu" }));
    }
    model.add(tf.layers.dense({ units: nActions }));
    return model;
}

export interface Checkpoint {
    config: DqnConfig;
    weights: number[][];
    shapes: number[][];
    steps: number;
}

export class DqnAgent {
    readonly config: DqnConfig;
    online: tf.Sequential;
    target: tf.Sequential;
    private optimizer: tf.Optimizer;
    private updates = 0;

    constructor(config: DqnConfig) {
        this.config = config;
        this.online = buildNet(config.obsDim, config.nActions, config.hidden);
        this.target = buildNet(config.obsDim, config.nActions, config.hidden);
        this.syncTarget();
        this.optimizer = tf.train.adam(config.learningRate);
    }

    syncTarget(): void {
        this.target.setWeights(this.online.getWeights().map((w) => w.clone()));
    }

    qValues(state: Float32Array): number[] {
        return tf.tidy(() => {
            const out = this.online.predict(
                tf.tensor2d(state, [1, this.config.obsDim]),
            ) as tf.Tensor;
            return Array.from(out.dataSync());
        });
    }

    greedyAction(state: Float32Array): number {
        const q = this.qValues(state);
        let best = 0;
        for (let i = 1; i < q.length; i++) if (q[i]! > q[best]!) best = i;
        return best;
    }

    act(state: Float32Array, epsilon: number, rng: () => number = Math.random): number {
        if (rng() < epsilon) return Math.floor(rng() * this.config.nActions);
        return this.greedyAction(state);
    }

    /**
     * One temporal-difference step on a uniform batch:
     * target = r + gamma * (1 - done) * max_a Q_target(s', a).
     * Only the online network's parameters receive gradients.
     */
    trainStep(buffer: ReplayBuffer): number {
        const batch = buffer.sample(this.config.batchSize);
        const loss = this.trainOnBatch(batch);
        this.updates += 1;
        if (this.updates % this.config.targetUpdateInterval === 0) this.syncTarget();
        return loss;
    }

    trainOnBatch(batch: Transition[]): number {
        const { obsDim, nActions, gamma, batchSize } = this.config;
        const n = batch.length;
        const states = new Float32Array(n * obsDim);
        const nextStates = new Float32Array(n * obsDim);
        for (let i = 0; i < n; i++) {
            states.set(batch[i]!.state, i * obsDim);
            nextStates.set(batch[i]!.nextState, i * obsDim);
        }
        const lossVal = tf.tidy(() => {
            const s = tf.tensor2d(states, [n, obsDim]);
            const s2 = tf.tensor2d(nextStates, [n, obsDim]);
            const nextQ = (this.target.predict(s2) as tf.Tensor).max(1);
            const targetVals = nextQ.dataSync();
            const targets = new Float32Array(n);
            for (let i = 0; i < n; i++) {
                const t = batch[i]!;
                targets[i] = t.reward + (t.done ? 0 : gamma * targetVals[i]!);
            }
            const actionMask = tf.oneHot(
                tf.tensor1d(batch.map((t) => t.action), "int32"), nActions);
            const targetT = tf.tensor1d(targets);
            const lossFn = () => {
                const q = this.online.apply(s, { training: true }) as tf.Tensor;
                const qSel = q.mul(actionMask).sum(1);
                return tf.losses.huberLoss(targetT, qSel) as tf.Scalar;
            };
            const { value, grads } = this.optimizer.computeGradients(
                lossFn, this.online.getWeights(true) as tf.Variable[]);
            this.optimizer.applyGradients(grads);
            return value.dataSync()[0]!;
        });
        return lossVal;
    }

    checkpoint(steps: number): Checkpoint {
        const weights = this.online.getWeights();
        return {
            config: this.config,
            weights: weights.map((w) => Array.from(w.dataSync())),
            shapes: weights.map((w) => w.shape.slice()),
            steps,
        };
    }

    static fromCheckpoint(ck: Checkpoint): DqnAgent {
        if (!ck.weights || !ck.shapes || ck.weights.length !== ck.shapes.length) {
            throw new Error("corrupt checkpoint: weights/shapes mismatch");
        }
        const agent = new DqnAgent(ck.config);
        const tensors = ck.weights.map((w, i) => {
            const expected = ck.shapes[i]!.reduce((a, b) => a * b, 1);
            if (w.length !== expected) {
                throw new Error(`corrupt checkpoint: tensor ${i} has ${w.length} values, expected ${expected}`);
            }
            return tf.tensor(w, ck.shapes[i] as number[]);
        });
        agent.online.setWeights(tensors);
        agent.syncTarget();
        return agent;
    }

    dispose(): void {
        this.online.dispose();
        this.target.dispose();
        this.optimizer.dispose();
    }
}

/** Linear decay from 1.0 to epsFinal over the exploration fraction. */
export function epsilonAt(step: number, totalSteps: number, epsFinal: number,
                          fraction = 0.3): number {
    const horizon = Math.max(1, Math.floor(totalSteps * fraction));
    if (step >= horizon) return epsFinal;
    return 1.0 + (epsFinal - 1.0) * (step / horizon);
}
