/**
 * Token-overlap F1 scoring.
 *
 * Tokens are lowercased whitespace splits; overlap is counted over
 * multisets so repeated tokens only match as often as they occur in both
 * strings. F1 is computed as 2*overlap / (|candidate| + |reference|), which
 * equals the harmonic mean of precision and recall.
 */

export function tokenize(text: string): string[] {
	return text
		.toLowerCase()
		.split(/\s+/)
		.filter((token) => token.length > 0);
}

export function tokenF1(candidate: string[], reference: string[]): number {
	if (candidate.length === 0 && reference.length === 0) {
		return 1;
	}
	if (candidate.length === 0 || reference.length === 0) {
		return 0;
	}
	const counts = new Map<string, number>();
	for (const token of candidate) {
		counts.set(token, (counts.get(token) ?? 0) + 1);
	}
	let overlap = 0;
	for (const token of reference) {
		const available = counts.get(token) ?? 0;
		if (available > 0) {
			counts.set(token, available - 1);
			overlap += 1;
		}
	}
	return (2 * overlap) / (candidate.length + reference.length);
}

/** Best F1 across all references (0 when there are none). */
export function maxTokenF1(candidate: string, references: string[]): number {
	const candidateTokens = tokenize(candidate);
	let best = 0;
	for (const reference of references) {
		const score = tokenF1(candidateTokens, tokenize(reference));
		if (score > best) {
			best = score;
		}
	}
	return best;
}
