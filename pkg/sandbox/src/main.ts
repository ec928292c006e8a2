/**
 * Stdio service loop: one request per stdin line, one response per stdout
 * line, requests handled strictly in order. The process exits 0 at EOF no
 * matter how the executed programs fared; only the per-request status
 * carries their outcome.
 */

import { createInterface } from 'node:readline';

import { errorResponse, parseRequest, ProtocolError, serializeResponse } from './protocol';
import { runRequest } from './runner';

async function serve(): Promise<void> {
	const lines = createInterface({ input: process.stdin, terminal: false });
	const pending: string[] = [];
	let processing = false;
	let closed = false;

	const drain = async () => {
		if (processing) {
			return;
		}
		processing = true;
		while (pending.length > 0) {
			const line = pending.shift()!;
			if (line.trim() === '') {
				continue;
			}
			let response;
			try {
				response = await runRequest(parseRequest(line));
			} catch (err) {
				if (err instanceof ProtocolError) {
					response = errorResponse(err.message);
				} else {
					response = errorResponse(`internal runner failure: ${(err as Error).message}`);
				}
			}
			process.stdout.write(serializeResponse(response) + '\n');
		}
		processing = false;
		if (closed) {
			process.exit(0);
		}
	};

	lines.on('line', (line) => {
		pending.push(line);
		void drain();
	});
	lines.on('close', () => {
		closed = true;
		if (!processing && pending.length === 0) {
			process.exit(0);
		}
	});
}

void serve();
