/**
 * Trainer CLI:
 *   node dist/cli.js train --config train.json [--steps N] [--seed S]
 *   node dist/cli.js eval --checkpoint runs/x/checkpoint.json --episodes 10
 *   node dist/cli.js smoke [--steps 200000 --seeds 3]   (the acceptance benchmark)
 */

import * as fs from "node:fs";
import { loadConfig, TrainerConfig } from "./config.js";
import { Checkpoint, DqnAgent } from "./dqn.js";
import { runGreedy, train } from "./train.js";

function parseArgs(argv: string[]): { cmd: string; flags: Map<string, string> } {
    const cmd = argv[0] ?? "train";
    const flags = new Map<string, string>();
    for (let i = 1; i < argv.length; i += 2) {
        const key = argv[i];
        if (!key?.startsWith("--")) throw new Error(`unexpected argument ${key}`);
        flags.set(key.slice(2), argv[i + 1] ?? "true");
    }
    return { cmd, flags };
}

const SMOKE_ENV = {
    use_minimal_map: true,
    car_range: [3, 8],
    ped_range: [2, 6],
    episode_seconds: 60.0,
};

async function main(): Promise<number> {
    const { cmd, flags } = parseArgs(process.argv.slice(2));
    if (cmd === "train") {
        const cfg = loadConfig(flags.get("config"), {
            ...(flags.has("steps") ? { totalSteps: Number(flags.get("steps")) } : {}),
            ...(flags.has("seed") ? { seed: Number(flags.get("seed")) } : {}),
            ...(flags.has("port") ? { port: Number(flags.get("port")) } : {}),
            ...(flags.has("out") ? { outDir: flags.get("out")! } : {}),
        });
        const result = await train(cfg);
        console.log(`trained ${result.totalSteps} steps, ${result.curve.length} episodes`);
        console.log(`checkpoint: ${result.checkpointPath}`);
        console.log(`curve: ${result.curvePath}`);
        return 0;
    }
    if (cmd === "eval") {
        const ckPath = flags.get("checkpoint");
        if (!ckPath) throw new Error("--checkpoint required");
        const ck: Checkpoint = JSON.parse(fs.readFileSync(ckPath, "utf8"));
        const agent = DqnAgent.fromCheckpoint(ck);
        const res = await runGreedy(
            agent,
            flags.get("host") ?? "127.0.0.1",
            Number(flags.get("port") ?? 58460),
            Number(flags.get("episodes") ?? 10),
            Number(flags.get("seed") ?? 10_000),
            flags.has("minimal") ? SMOKE_ENV : {},
        );
        console.log(JSON.stringify(res, null, 1));
        return 0;
    }
    if (cmd === "smoke") {
        return await smoke(Number(flags.get("steps") ?? 200_000),
                           Number(flags.get("seeds") ?? 3),
                           Number(flags.get("port") ?? 58460));
    }
    throw new Error(`unknown command ${cmd}`);
}

/**
 * Acceptance benchmark: short training runs on the minimal map must improve
 * the mean episode return (last decile > first decile, majority over seeds)
 * and cut shield interventions per episode vs. an untrained policy.
 */
async function smoke(steps: number, seeds: number, port: number): Promise<number> {
    let improved = 0;
    let interventionWins = 0;
    for (let seed = 0; seed < seeds; seed++) {
        const cfg: TrainerConfig = loadConfig(undefined, {
            port,
            totalSteps: steps,
            seed,
            outDir: `runs/smoke-${seed}`,
            replayCapacity: 100_000,
            envOverrides: SMOKE_ENV,
        });
        const untrained = new DqnAgent({
            obsDim: 201, nActions: 6, learningRate: cfg.learningRate,
            gamma: cfg.gamma, hidden: cfg.hidden, batchSize: cfg.batchSize,
            targetUpdateInterval: cfg.targetUpdateInterval,
        });
        const before = await runGreedy(untrained, cfg.host, port, 10, 90_000 + seed,
                                       SMOKE_ENV);
        untrained.dispose();
        const result = await train(cfg);
        const ck: Checkpoint = JSON.parse(fs.readFileSync(result.checkpointPath, "utf8"));
        const trained = DqnAgent.fromCheckpoint(ck);
        const after = await runGreedy(trained, cfg.host, port, 10, 90_000 + seed,
                                      SMOKE_ENV);
        trained.dispose();

        const n = result.curve.length;
        const decile = Math.max(1, Math.floor(n / 10));
        const first = mean(result.curve.slice(0, decile).map((s) => s.return_));
        const last = mean(result.curve.slice(n - decile).map((s) => s.return_));
        const better = last > first;
        const fewer = after.meanShieldInterventions < before.meanShieldInterventions;
        if (better) improved += 1;
        if (fewer) interventionWins += 1;
        console.log(`seed ${seed}: episodes=${n} firstDecile=${first.toFixed(2)} ` +
            `lastDecile=${last.toFixed(2)} improved=${better} ` +
            `shield before=${before.meanShieldInterventions.toFixed(1)} ` +
            `after=${after.meanShieldInterventions.toFixed(1)} fewer=${fewer}`);
    }
    const ok = improved * 2 > seeds && interventionWins * 2 > seeds;
    console.log(`${ok ? "PASS" : "FAIL"}: return improved on ${improved}/${seeds} seeds, ` +
        `interventions reduced on ${interventionWins}/${seeds}`);
    return ok ? 0 : 1;
}

function mean(xs: number[]): number {
    return xs.length ? xs.reduce((a, b) => a + b, 0) / xs.length : 0;
}

main().then(
    (code) => process.exit(code),
    (err) => {
        console.error(err?.message ?? err);
        process.exit(1);
    },
);
