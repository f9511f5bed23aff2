/**
 * Client-side answer validation.  Mirrors the server's rules so obviously
 * bad submissions (out-of-range exact values, choices that contradict the
 * typed value) are rejected before any network round trip.  The server
 * remains the authority; this is a convenience layer.
 */

export interface ExactCheck {
    ok: boolean;
    reason?: 'not_allowed' | 'not_a_number' | 'out_of_domain' | 'contradicts_choice';
    message?: string;
    impliedChoice?: number;
}

/**
 * Index of the half-open cell `(a_{k-1}, a_k]` that contains `value`, using
 * 1-based choice numbering.  For the ring layout the wrap-around cell
 * (below the first anchor or above the last) is choice 1.
 */
export function locateChoice(
    anchors: number[],
    value: number,
    topology: 'canonical' | 'ring' | 'progressive' = 'canonical',
): number {
    if (anchors.length === 0) {
        throw new Error('at least one anchor is required');
    }
    if (topology === 'progressive') {
        return value <= anchors[0]! ? 1 : 2;
    }
    const below = anchors.filter((a) => a < value).length;
    if (topology === 'ring') {
        if (value <= anchors[0]! || value > anchors[anchors.length - 1]!) {
            return 1;
        }
        return below + 1;
    }
    return below + 1;
}

export function checkExactEntry(args: {
    value: number;
    domain: [number, number];
    anchors: number[];
    allowExact: boolean;
    topology?: 'canonical' | 'ring' | 'progressive';
    selectedChoice?: number;
}): ExactCheck {
    const { value, domain, anchors, allowExact, selectedChoice } = args;
    const topology = args.topology ?? 'canonical';
    if (!allowExact) {
        return { ok: false, reason: 'not_allowed', message: 'exact entry is not enabled for this question' };
    }
    if (!Number.isFinite(value)) {
        return { ok: false, reason: 'not_a_number', message: 'enter a finite number' };
    }
    const [lo, hi] = domain;
    if (value < lo || value > hi) {
        return {
            ok: false,
            reason: 'out_of_domain',
            message: `value must be between ${lo} and ${hi}`,
        };
    }
    const implied = locateChoice(anchors, value, topology);
    if (selectedChoice !== undefined && selectedChoice !== implied) {
        return {
            ok: false,
            reason: 'contradicts_choice',
            message: 'the typed value falls outside the selected range',
            impliedChoice: implied,
        };
    }
    return { ok: true, impliedChoice: implied };
}
