/**
 * Client for the simulator's environment protocol: newline-delimited JSON
 * over TCP, one request in flight at a time per session.
 */

import * as net from "node:net";

export interface ResetResponse {
    v: number;
    obs: number[];
    done: boolean;
    info: Record<string, unknown>;
}

export interface StepInfo {
    frame: number;
    shield_triggered: boolean;
    executed_accel: number;
    collision: boolean;
    near_collision: boolean;
    agent_at_fault: boolean;
    done_reason: string | null;
    reward_breakdown: Record<string, number>;
}

export interface StepResponse {
    v: number;
    obs: number[];
    reward: number;
    done: boolean;
    info: StepInfo;
}

export class ProtocolError extends Error {}

export class EnvClient {
    private socket: net.Socket;
    private buffer = "";
    private pending: Array<{
        resolve: (line: string) => void;
        reject: (err: Error) => void;
    }> = [];

    private constructor(socket: net.Socket) {
        this.socket = socket;
        socket.setNoDelay(true);
        socket.on("data", (chunk) => this.onData(chunk));
        socket.on("error", (err) => this.failAll(err));
        socket.on("close", () => this.failAll(new ProtocolError("connection closed")));
    }

    static connect(host: string, port: number, timeoutMs = 10_000): Promise<EnvClient> {
        return new Promise((resolve, reject) => {
            const socket = net.createConnection({ host, port });
            const timer = setTimeout(
                () => reject(new ProtocolError(`connect timeout to ${host}:${port}`)),
                timeoutMs,
            );
            socket.once("connect", () => {
                clearTimeout(timer);
                resolve(new EnvClient(socket));
            });
            socket.once("error", (err) => {
                clearTimeout(timer);
                reject(err);
            });
        });
    }

    private onData(chunk: Buffer): void {
        this.buffer += chunk.toString("utf8");
        let idx: number;
        while ((idx = this.buffer.indexOf("\n")) >= 0) {
            const line = this.buffer.slice(0, idx);
            this.buffer = this.buffer.slice(idx + 1);
            const waiter = this.pending.shift();
            if (waiter) waiter.resolve(line);
        }
    }

    private failAll(err: Error): void {
        while (this.pending.length) this.pending.shift()!.reject(err);
    }

    private async call<T>(request: Record<string, unknown>): Promise<T> {
        const line: string = await new Promise((resolve, reject) => {
            this.pending.push({ resolve, reject });
            this.socket.write(JSON.stringify(request) + "\n");
        });
        const parsed = JSON.parse(line);
        if (parsed.error) throw new ProtocolError(parsed.error);
        return parsed as T;
    }

    reset(seed?: number, overrides?: Record<string, unknown>): Promise<ResetResponse> {
        const req: Record<string, unknown> = { cmd: "reset" };
        if (seed !== undefined) req.seed = seed;
        if (overrides) req.overrides = overrides;
        return this.call<ResetResponse>(req);
    }

    step(actionIndex: number): Promise<StepResponse> {
        return this.call<StepResponse>({ cmd: "step", action_index: actionIndex });
    }

    config(): Promise<{ v: number; config: unknown; actions: number[]; obs_len: number }> {
        return this.call({ cmd: "config" });
    }

    async close(): Promise<void> {
        try {
            await this.call({ cmd: "close" });
        } catch {
            // the server may close first; that is fine
        }
        this.socket.destroy();
    }
}
