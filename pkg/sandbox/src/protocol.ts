/**
 * Wire protocol: one JSON request per stdin line, one JSON response per
 * stdout line. Field names are part of the contract and must not drift.
 */

export interface SandboxRequest {
	source: string;
	dataset_paths: Record<string, string>;
	timeout_s: number;
}

export type SandboxStatus = 'ok' | 'error' | 'timeout';

export interface SandboxResponse {
	status: SandboxStatus;
	stdout: string;
	stderr: string;
	duration_ms: number;
}

export class ProtocolError extends Error {}

export function parseRequest(line: string): SandboxRequest {
	let raw: unknown;
	try {
		raw = JSON.parse(line);
	} catch (err) {
		throw new ProtocolError(`request is not valid JSON: ${(err as Error).message}`);
	}
	if (typeof raw !== 'object' || raw === null || Array.isArray(raw)) {
		throw new ProtocolError('request must be a JSON object');
	}
	const record = raw as Record<string, unknown>;
	if (typeof record.source !== 'string') {
		throw new ProtocolError('request.source must be a string');
	}
	const timeout = record.timeout_s;
	if (typeof timeout !== 'number' || !Number.isFinite(timeout) || timeout <= 0) {
		throw new ProtocolError('request.timeout_s must be a positive number');
	}
	const paths: Record<string, string> = {};
	const rawPaths = record.dataset_paths ?? {};
	if (typeof rawPaths !== 'object' || rawPaths === null || Array.isArray(rawPaths)) {
		throw new ProtocolError('request.dataset_paths must be an object');
	}
	for (const [key, value] of Object.entries(rawPaths as Record<string, unknown>)) {
		if (!/^\d+$/.test(key)) {
			throw new ProtocolError(`dataset number ${JSON.stringify(key)} is not an integer`);
		}
		if (typeof value !== 'string') {
			throw new ProtocolError(`dataset path for ${key} must be a string`);
		}
		paths[key] = value;
	}
	return { source: record.source, dataset_paths: paths, timeout_s: timeout };
}

export function serializeResponse(response: SandboxResponse): string {
	// Key order is fixed so recorded traffic stays diffable.
	return JSON.stringify({
		status: response.status,
		stdout: response.stdout,
		stderr: response.stderr,
		duration_ms: response.duration_ms,
	});
}

export function errorResponse(diagnostic: string): SandboxResponse {
	return { status: 'error', stdout: '', stderr: diagnostic, duration_ms: 0 };
}
