/**
 * Scoring plugin speaking the engine's line protocol, version 1.
 *
 * The engine sets BILLBOARD_PROTOCOL_VERSION=1 and streams one JSON request
 * per stdin line: {"id", "candidate", "references", "source"}. For every
 * request this plugin writes `<id>\t<score>` to stdout, in input order,
 * where the score is the best token-overlap F1 over the references.
 *
 * Exit codes: 0 success, 2 malformed input (diagnostic on stderr),
 * 3 unsupported protocol version.
 */

import { createInterface } from "node:readline";
import { maxTokenF1 } from "./f1.js";

const EXIT_BAD_INPUT = 2;
const EXIT_PROTOCOL_MISMATCH = 3;

interface PluginRequest {
	id: string;
	candidate: string;
	references: string[];
	source: string | null;
}

function validate(value: unknown, lineNumber: number): PluginRequest {
	const request = value as Partial<PluginRequest>;
	if (
		typeof request.id !== "string" ||
		typeof request.candidate !== "string" ||
		!Array.isArray(request.references) ||
		!request.references.every((ref) => typeof ref === "string")
	) {
		throw new Error(
			`line ${lineNumber}: request must carry string id, string candidate, string[] references`,
		);
	}
	return request as PluginRequest;
}

async function main(): Promise<number> {
	const version = process.env.BILLBOARD_PROTOCOL_VERSION;
	if (version !== "1") {
		process.stderr.write(
			`unsupported protocol version ${version ?? "<unset>"} (this plugin speaks version 1)\n`,
		);
		return EXIT_PROTOCOL_MISMATCH;
	}
	const lines = createInterface({ input: process.stdin, crlfDelay: Infinity });
	let lineNumber = 0;
	for await (const line of lines) {
		lineNumber += 1;
		if (line.trim() === "") {
			continue;
		}
		let request: PluginRequest;
		try {
			request = validate(JSON.parse(line), lineNumber);
		} catch (error) {
			process.stderr.write(`malformed request on line ${lineNumber}: ${String(error)}\n`);
			return EXIT_BAD_INPUT;
		}
		const score = maxTokenF1(request.candidate, request.references);
		process.stdout.write(`${request.id}\t${score}\n`);
	}
	return 0;
}

main().then(
	(code) => process.exit(code),
	(error) => {
		process.stderr.write(`${String(error)}\n`);
		process.exit(EXIT_BAD_INPUT);
	},
);
