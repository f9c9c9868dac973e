/** Trainer configuration with the published training parameters as defaults. */

import * as fs from "node:fs";

export interface TrainerConfig {
    host: string;
    port: number;
    learningRate: number;
    replayCapacity: number;
    batchSize: number;
    gamma: number;
    epsilonFinal: number;
    explorationFraction: number;
    hidden: number[];
    totalSteps: number;
    targetUpdateInterval: number;
    learningStarts: number;
    trainFreq: number;
    checkpointEvery: number;
    outDir: string;
    seed: number;
    envOverrides: Record<string, unknown>;
}

export const DEFAULT_CONFIG: TrainerConfig = {
    host: "127.0.0.1",
    port: 58460,
    learningRate: 0.0001,
    replayCapacity: 500_000,
    batchSize: 32,
    gamma: 0.99,
    epsilonFinal: 0.05,
    explorationFraction: 0.3,
    hidden: [112, 112],
    totalSteps: 25_000_000,
    targetUpdateInterval: 2000,
    learningStarts: 2000,
    trainFreq: 4,
    checkpointEvery: 50_000,
    outDir: "runs/default",
    seed: 0,
    envOverrides: {},
};

export function loadConfig(path?: string, overrides: Partial<TrainerConfig> = {}): TrainerConfig {
    let fileCfg: Partial<TrainerConfig> = {};
    if (path) {
        fileCfg = JSON.parse(fs.readFileSync(path, "utf8"));
    }
    const cfg = { ...DEFAULT_CONFIG, ...fileCfg, ...overrides };
    if (cfg.gamma < 0 || cfg.gamma > 1) throw new Error("gamma must be in [0, 1]");
    if (cfg.epsilonFinal <= 0 || cfg.epsilonFinal > 1) {
        throw new Error("epsilonFinal must be in (0, 1]");
    }
    if (cfg.batchSize > cfg.replayCapacity) {
        throw new Error("batch size cannot exceed replay capacity");
    }
    return cfg;
}
