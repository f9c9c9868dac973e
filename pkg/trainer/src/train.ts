/**
 * The training loop: epsilon-greedy exploration against the protocol server,
 * uniform replay, TD updates toward the frozen-target bootstrap, periodic
 * checkpoints, and a per-episode return curve written as CSV.
 */

import * as fs from "node:fs";
import * as path from "node:path";
import { EnvClient } from "./client.js";
import { TrainerConfig } from "./config.js";
import { DEFAULT_DQN, DqnAgent, epsilonAt } from "./dqn.js";
import { ReplayBuffer } from "./replay.js";

export interface EpisodeStat {
    episode: number;
    steps: number;
    return_: number;
    shieldInterventions: number;
    epsilon: number;
}

export interface TrainResult {
    curve: EpisodeStat[];
    checkpointPath: string;
    curvePath: string;
    totalSteps: number;
}

/** Deterministic xorshift RNG so training runs are reproducible per seed. */
export function makeRng(seed: number): () => number {
    let s = (seed >>> 0) || 0x9e3779b9;
    return () => {
        s ^= s << 13;
        s ^= s >>> 17;
        s ^= s << 5;
        s >>>= 0;
        return s / 0x1_0000_0000;
    };
}

export async function train(cfg: TrainerConfig,
                            log: (msg: string) => void = console.log): Promise<TrainResult> {
    fs.mkdirSync(cfg.outDir, { recursive: true });
    const client = await EnvClient.connect(cfg.host, cfg.port);
    const meta = await client.config();
    const obsDim = meta.obs_len;
    const nActions = meta.actions.length;
    const agent = new DqnAgent({
        ...DEFAULT_DQN,
        obsDim,
        nActions,
        learningRate: cfg.learningRate,
        gamma: cfg.gamma,
        hidden: cfg.hidden,
        batchSize: cfg.batchSize,
        targetUpdateInterval: cfg.targetUpdateInterval,
    });
    const buffer = new ReplayBuffer(cfg.replayCapacity, makeRng(cfg.seed ^ 0x55aa));
    const rng = makeRng(cfg.seed);

    const curve: EpisodeStat[] = [];
    let episode = 0;
    let epReturn = 0;
    let epSteps = 0;
    let epShield = 0;
    let prevShield = false;

    let reset = await client.reset(cfg.seed * 1_000_003 + episode, cfg.envOverrides);
    let state = Float32Array.from(reset.obs);
    const checkpointPath = path.join(cfg.outDir, "checkpoint.json");
    const curvePath = path.join(cfg.outDir, "curve.csv");

    for (let step = 1; step <= cfg.totalSteps; step++) {
        const eps = epsilonAt(step, cfg.totalSteps, cfg.epsilonFinal, cfg.explorationFraction);
        const action = agent.act(state, eps, rng);
        const out = await client.step(action);
        const nextState = Float32Array.from(out.obs);
        buffer.push({ state, action, reward: out.reward, nextState, done: out.done });
        state = nextState;
        epReturn += out.reward;
        epSteps += 1;
        if (out.info.shield_triggered && !prevShield) epShield += 1;
        prevShield = out.info.shield_triggered;

        if (buffer.size >= Math.max(cfg.learningStarts, cfg.batchSize)
            && step % cfg.trainFreq === 0) {
            agent.trainStep(buffer);
        }
        if (step % cfg.checkpointEvery === 0) {
            fs.writeFileSync(checkpointPath, JSON.stringify(agent.checkpoint(step)));
        }
        if (out.done) {
            curve.push({ episode, steps: epSteps, return_: epReturn,
                         shieldInterventions: epShield, epsilon: eps });
            if (episode % 10 === 0) {
                log(`episode ${episode}: return=${epReturn.toFixed(2)} steps=${epSteps} eps=${eps.toFixed(3)}`);
            }
            episode += 1;
            epReturn = 0;
            epSteps = 0;
            epShield = 0;
            prevShield = false;
            reset = await client.reset(cfg.seed * 1_000_003 + episode, cfg.envOverrides);
            state = Float32Array.from(reset.obs);
        }
    }
    fs.writeFileSync(checkpointPath, JSON.stringify(agent.checkpoint(cfg.totalSteps)));
    writeCurve(curvePath, curve);
    await client.close();
    agent.dispose();
    return { curve, checkpointPath, curvePath, totalSteps: cfg.totalSteps };
}

export function writeCurve(file: string, curve: EpisodeStat[]): void {
    const lines = ["episode,steps,return,shield_interventions,epsilon"];
    for (const s of curve) {
        lines.push(`${s.episode},${s.steps},${s.return_},${s.shieldInterventions},${s.epsilon}`);
    }
    fs.writeFileSync(file, lines.join("\n") + "\n");
}

export interface GreedyEvalResult {
    episodes: number;
    meanReturn: number;
    meanShieldInterventions: number;
    collisions: number;
}

/**
 * The exported-policy runner: greedy action selection through the protocol,
 * so the environment-side harness semantics (shield, reward) stay authoritative.
 */
export async function runGreedy(agent: DqnAgent, host: string, port: number,
                                episodes: number, baseSeed: number,
                                envOverrides: Record<string, unknown> = {},
                                maxSteps = 100_000): Promise<GreedyEvalResult> {
    const client = await EnvClient.connect(host, port);
    const meta = await client.config();
    if (meta.obs_len !== agent.config.obsDim) {
        await client.close();
        throw new Error(
            `observation length mismatch: expected ${agent.config.obsDim}, ` +
            `server provides ${meta.obs_len}`);
    }
    let totalReturn = 0;
    let totalShield = 0;
    let collisions = 0;
    for (let ep = 0; ep < episodes; ep++) {
        const reset = await client.reset(baseSeed + ep, envOverrides);
        let state = Float32Array.from(reset.obs);
        let prevShield = false;
        for (let t = 0; t < maxSteps; t++) {
            const out = await client.step(agent.greedyAction(state));
            state = Float32Array.from(out.obs);
            totalReturn += out.reward;
            if (out.info.shield_triggered && !prevShield) totalShield += 1;
            prevShield = out.info.shield_triggered;
            if (out.done) {
                if (out.info.collision) collisions += 1;
                break;
            }
        }
    }
    await client.close();
    return {
        episodes,
        meanReturn: totalReturn / episodes,
        meanShieldInterventions: totalShield / episodes,
        collisions,
    };
}
