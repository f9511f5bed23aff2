import { describe, expect, it } from 'vitest';

import { checkExactEntry, locateChoice } from '../src/validation';

describe('locateChoice', () => {
    it('uses half-open cells: values on an anchor belong to the lower cell', () => {
        const anchors = [10, 20, 30];
        expect(locateChoice(anchors, 5)).toBe(1);
        expect(locateChoice(anchors, 10)).toBe(1);
        expect(locateChoice(anchors, 10.001)).toBe(2);
        expect(locateChoice(anchors, 20)).toBe(2);
        expect(locateChoice(anchors, 25)).toBe(3);
        expect(locateChoice(anchors, 31)).toBe(4);
    });

    it('maps the wrap-around cell of a ring layout to choice 1', () => {
        const anchors = [10, 20, 30];
        expect(locateChoice(anchors, 5, 'ring')).toBe(1);
        expect(locateChoice(anchors, 35, 'ring')).toBe(1);
        expect(locateChoice(anchors, 10, 'ring')).toBe(1);
        expect(locateChoice(anchors, 15, 'ring')).toBe(2);
        expect(locateChoice(anchors, 30, 'ring')).toBe(3);
    });

    it('treats multi-round anchors as a single two-way split', () => {
        expect(locateChoice([42], 42, 'progressive')).toBe(1);
        expect(locateChoice([42], 43, 'progressive')).toBe(2);
    });

    it('rejects an empty anchor list', () => {
        expect(() => locateChoice([], 1)).toThrowError(/anchor/);
    });
});

describe('checkExactEntry', () => {
    const base = {
        domain: [0, 100] as [number, number],
        anchors: [40],
        allowExact: true,
    };

    it('accepts an in-range value and reports the implied choice', () => {
        const res = checkExactEntry({ ...base, value: 55 });
        expect(res).toEqual({ ok: true, impliedChoice: 2 });
    });

    it('rejects values outside the question domain', () => {
        for (const value of [-1, 100.5, 1e9]) {
            const res = checkExactEntry({ ...base, value });
            expect(res.ok).toBe(false);
            expect(res.reason).toBe('out_of_domain');
        }
        // the endpoints themselves are inside
        expect(checkExactEntry({ ...base, value: 0 }).ok).toBe(true);
        expect(checkExactEntry({ ...base, value: 100 }).ok).toBe(true);
    });

    it('rejects non-finite input', () => {
        for (const value of [Number.NaN, Infinity, -Infinity]) {
            expect(checkExactEntry({ ...base, value }).reason).toBe('not_a_number');
        }
    });

    it('rejects a value that contradicts the selected choice', () => {
        const res = checkExactEntry({ ...base, value: 55, selectedChoice: 1 });
        expect(res.ok).toBe(false);
        expect(res.reason).toBe('contradicts_choice');
        expect(res.impliedChoice).toBe(2);
        // consistent pair passes
        expect(checkExactEntry({ ...base, value: 55, selectedChoice: 2 }).ok).toBe(true);
    });

    it('rejects exact entry when the question forbids it', () => {
        const res = checkExactEntry({ ...base, allowExact: false, value: 55 });
        expect(res.reason).toBe('not_allowed');
    });
});
