/**
 * Invocation of the pearl command line, the only channel into the core.
 *
 * The binary is resolved once: the PEARL_CLI environment variable (split on
 * whitespace) when set, else the `pearl` console script, else
 * `python3 -m pearl.cli`.
 */
import { execFileSync } from 'node:child_process';

let resolved: string[] | undefined;

function candidates(): string[][] {
  const out: string[][] = [];
  const env = process.env.PEARL_CLI;
  if (env && env.trim()) {
    out.push(env.trim().split(/\s+/));
  }
  out.push(['pearl']);
  out.push(['python3', '-m', 'pearl.cli']);
  return out;
}

function tryRun(cmd: string[], args: string[]): string {
  return execFileSync(cmd[0], [...cmd.slice(1), ...args], {
    encoding: 'utf-8',
    stdio: ['ignore', 'pipe', 'pipe'],
    maxBuffer: 256 * 1024 * 1024,
  });
}

export function runCli(args: string[]): string {
  if (resolved) {
    try {
      return tryRun(resolved, args);
    } catch (err: unknown) {
      throw cliError(err as NodeJS.ErrnoException & { stderr?: string; status?: number });
    }
  }
  let lastSpawnError: unknown;
  for (const cmd of candidates()) {
    try {
      const out = tryRun(cmd, args);
      resolved = cmd;
      return out;
    } catch (err: unknown) {
      const e = err as NodeJS.ErrnoException & { stderr?: string; status?: number };
      if (e.code === 'ENOENT') {
        lastSpawnError = err; // binary missing: try the next candidate
        continue;
      }
      resolved = cmd; // binary exists; the invocation itself failed
      throw cliError(e);
    }
  }
  throw new Error(
    `pearl CLI not found (tried PEARL_CLI, "pearl", "python3 -m pearl.cli"): ${lastSpawnError}`,
  );
}

function cliError(e: { stderr?: string; status?: number | null; message?: string }): Error {
  const detail = (e.stderr ?? '').trim() || e.message || 'unknown error';
  return new Error(`pearl CLI exited with status ${e.status}: ${detail}`);
}
