/**
 * Executes one analysis program per fresh child process.
 *
 * The child runs inside a scratch directory with in-process guards: sockets
 * are disabled and writes may only land under the scratch path. Datasets are
 * preloaded as pandas DataFrames under the prompt-visible naming convention
 * (df_1740, df_1808, df_landmarks for datasets 1, 2, 3).
 */

import { spawn } from 'node:child_process';
import { accessSync, constants, mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';

import { ProtocolError, SandboxRequest, SandboxResponse } from './protocol';

const FRAME_VARS: Record<string, string> = {
	'1': 'df_1740',
	'2': 'df_1808',
	'3': 'df_landmarks',
};

function frameVar(datasetNumber: string): string {
	return FRAME_VARS[datasetNumber] ?? `df_${datasetNumber}`;
}

const GUARD_PREAMBLE = `\
import builtins as _builtins
import os as _os
import socket as _socket

_SCRATCH = _os.path.realpath(_os.getcwd())


def _no_network(*_args, **_kwargs):
    raise PermissionError("network access is disabled in the sandbox")


_socket.socket = _no_network
_socket.create_connection = _no_network
_socket.socketpair = _no_network

_real_open = _builtins.open


def _guarded_open(file, mode="r", *args, **kwargs):
    writes = any(flag in str(mode) for flag in ("w", "a", "x", "+"))
    if writes and isinstance(file, (str, bytes, _os.PathLike)):
        target = _os.path.realpath(_os.path.abspath(_os.fspath(file)))
        if not (target == _SCRATCH or target.startswith(_SCRATCH + _os.sep)):
            raise PermissionError(
                f"write outside the sandbox scratch directory: {target!r}"
        )
    return _real_open(file, mode, *args, **kwargs)


_builtins.open = _guarded_open
`;

export function buildBootstrap(request: SandboxRequest): string {
	const lines: string[] = [GUARD_PREAMBLE];
	const numbers = Object.keys(request.dataset_paths).sort(
		(a, b) => Number(a) - Number(b)
	);
	if (numbers.length > 0) {
		lines.push('import pandas as pd');
		for (const number of numbers) {
			const path = request.dataset_paths[number];
			lines.push(`${frameVar(number)} = pd.read_csv(${JSON.stringify(path)})`);
		}
	}
	lines.push('');
	lines.push(request.source);
	lines.push('');
	return lines.join('\n');
}

function validatePaths(request: SandboxRequest): void {
	for (const [number, path] of Object.entries(request.dataset_paths)) {
		try {
			accessSync(path, constants.R_OK);
		} catch {
			throw new ProtocolError(`dataset ${number} path is not readable: ${path}`);
		}
	}
}

export async function runRequest(request: SandboxRequest): Promise<SandboxResponse> {
	validatePaths(request);
	const scratch = mkdtempSync(join(tmpdir(), 'cadastre-sandbox-'));
	const program = join(scratch, 'program.py');
	writeFileSync(program, buildBootstrap(request), 'utf8');

	const python = process.env.SANDBOX_PYTHON ?? 'python3';
	const started = Date.now();
	const timeoutMs = Math.ceil(request.timeout_s * 1000);

	return new Promise<SandboxResponse>((resolve) => {
		const child = spawn(python, [program], {
			cwd: scratch,
			stdio: ['ignore', 'pipe', 'pipe'],
		});
		const stdoutChunks: Buffer[] = [];
		const stderrChunks: Buffer[] = [];
		let timedOut = false;

		const killTimer = setTimeout(() => {
			timedOut = true;
			child.kill('SIGKILL');
		}, timeoutMs);

		child.stdout.on('data', (chunk: Buffer) => stdoutChunks.push(chunk));
		child.stderr.on('data', (chunk: Buffer) => stderrChunks.push(chunk));

		const finish = (status: SandboxResponse['status'], stderrExtra = '') => {
			clearTimeout(killTimer);
			rmSync(scratch, { recursive: true, force: true });
			// toString('utf8') replaces invalid bytes, so hostile binary
			// output degrades to text instead of breaking the protocol.
			const stdout = Buffer.concat(stdoutChunks).toString('utf8');
			let stderr = Buffer.concat(stderrChunks).toString('utf8') + stderrExtra;
			const duration = Date.now() - started;
			let durationMs = duration;
			if (status === 'timeout') {
				durationMs = Math.max(duration, timeoutMs);
			}
			if (status === 'error' && stderr.trim() === '') {
				stderr = 'process failed without diagnostics';
			}
			resolve({ status, stdout, stderr, duration_ms: durationMs });
		};

		child.on('error', (err) => {
			finish('error', `failed to launch interpreter: ${err.message}`);
		});
		child.on('close', (code, signal) => {
			if (timedOut) {
				finish('timeout');
			} else if (code === 0) {
				finish('ok');
			} else {
				const extra =
					stderrChunks.length > 0
						? ''
						: signal
							? `process killed by signal ${signal}`
							: `process exited with code ${code}`;
				finish('error', extra);
			}
		});
	});
}
