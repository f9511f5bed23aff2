import { describe, expect, it } from 'vitest';

import { escapeHtml, renderError, renderQuestion, renderTerminal } from '../src/render';
import type { QuestionPayload } from '../src/types';

const payload: QuestionPayload = {
    prompt: 'How many hours do you sleep?',
    choices: ['≤ 6.5', '6.5 – 8.0', '> 8.0'],
    anchors: [6.5, 8.0],
    allow_exact: true,
    allow_opt_out: true,
    round: 1,
    max_rounds: 1,
    issue_id: 'iss-7',
    coverage: 1,
};

describe('renderQuestion', () => {
    it('shows every server-provided choice label with its 1-based value', () => {
        const html = renderQuestion(payload);
        expect(html).toContain('≤ 6.5');
        expect(html).toContain('6.5 – 8.0');
        expect(html).toContain('&gt; 8.0');
        expect(html).toContain('value="1"');
        expect(html).toContain('value="3"');
        expect(html).toContain('data-issue-id="iss-7"');
    });

    it('escapes markup in the prompt', () => {
        const html = renderQuestion({ ...payload, prompt: '<script>alert(1)</script>' });
        expect(html).not.toContain('<script>');
        expect(html).toContain('&lt;script&gt;');
    });

    it('omits exact entry and opt-out when disabled', () => {
        const html = renderQuestion({ ...payload, allow_exact: false, allow_opt_out: false });
        expect(html).not.toContain('survey-exact');
        expect(html).not.toContain('survey-opt-out');
    });

    it('includes both when enabled', () => {
        const html = renderQuestion(payload);
        expect(html).toContain('survey-exact');
        expect(html).toContain('Prefer not to answer');
    });
});

describe('terminal and error views', () => {
    it('has a message per terminal status', () => {
        expect(renderTerminal('done')).toContain('recorded');
        expect(renderTerminal('opted_out')).toContain('skipped');
        expect(renderTerminal('withheld')).toContain('not released');
    });

    it('refuses non-terminal statuses', () => {
        expect(() => renderTerminal('question')).toThrowError(/not a terminal/);
    });

    it('escapes error text', () => {
        expect(renderError('<b>boom</b>')).toContain('&lt;b&gt;boom&lt;/b&gt;');
    });
});

describe('escapeHtml', () => {
    it('escapes the five significant characters', () => {
        expect(escapeHtml(`<a href="x" title='y'>&</a>`)).toBe(
            '&lt;a href=&quot;x&quot; title=&#39;y&#39;&gt;&amp;&lt;/a&gt;',
        );
    });
});
